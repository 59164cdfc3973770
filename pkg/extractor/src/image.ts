/** Image loading (PNG and binary PPM) into float RGB tensors. */

import { PNG } from 'pngjs'
import { readFile } from 'fs/promises'

export interface RgbImage {
  /** HWC float32 RGB, 0-255 */
  data: Float32Array
  width: number
  height: number
}

function fromPng(buffer: Buffer): RgbImage {
  const png = PNG.sync.read(buffer)
  const data = new Float32Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    data[i * 3] = png.data[i * 4]
    data[i * 3 + 1] = png.data[i * 4 + 1]
    data[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { data, width: png.width, height: png.height }
}

function fromPpm(buffer: Buffer): RgbImage {
  // P6: ASCII header (magic, width, height, maxval) then raw RGB bytes
  let offset = 0
  const fields: string[] = []
  while (fields.length < 4) {
    while (offset < buffer.length && /\s/.test(String.fromCharCode(buffer[offset]))) offset++
    if (buffer[offset] === 0x23) {
      while (offset < buffer.length && buffer[offset] !== 0x0a) offset++
      continue
    }
    let end = offset
    while (end < buffer.length && !/\s/.test(String.fromCharCode(buffer[end]))) end++
    fields.push(buffer.subarray(offset, end).toString('ascii'))
    offset = end
  }
  offset++ // single whitespace after maxval
  const [magic, w, h, maxval] = fields
  if (magic !== 'P6') throw new Error(`unsupported PPM magic ${magic}`)
  if (maxval !== '255') throw new Error(`unsupported PPM maxval ${maxval}`)
  const width = parseInt(w, 10)
  const height = parseInt(h, 10)
  const pixels = buffer.subarray(offset, offset + width * height * 3)
  if (pixels.length < width * height * 3) throw new Error('truncated PPM payload')
  return { data: Float32Array.from(pixels), width, height }
}

export async function readImage(path: string): Promise<RgbImage> {
  const buffer = await readFile(path)
  if (buffer.length >= 8 && buffer.readUInt32BE(0) === 0x89504e47) {
    return fromPng(buffer)
  }
  if (buffer.length >= 2 && buffer[0] === 0x50 && buffer[1] === 0x36) {
    return fromPpm(buffer)
  }
  throw new Error(`${path}: not a PNG or binary PPM image`)
}

export function cropImage(image: RgbImage, box: [number, number, number, number]): RgbImage {
  const [x0, y0, x1, y1] = box
  if (!(0 <= x0 && x0 <= x1 && x1 < image.width && 0 <= y0 && y0 <= y1 && y1 < image.height)) {
    throw new Error(`crop ${box} outside a ${image.width}x${image.height} image`)
  }
  const width = x1 - x0 + 1
  const height = y1 - y0 + 1
  const data = new Float32Array(width * height * 3)
  for (let y = 0; y < height; y++) {
    const src = ((y + y0) * image.width + x0) * 3
    data.set(image.data.subarray(src, src + width * 3), y * width * 3)
  }
  return { data, width, height }
}
