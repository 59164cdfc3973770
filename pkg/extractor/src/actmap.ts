/**
 * Writer for the `.actmap` interchange format.
 *
 * Little-endian layout: magic "AMP1", version u16, W/H/K u16, image W/H
 * u32, image id (u16 length + UTF-8), then per channel a u32 non-zero
 * count followed by the payload. One byte per non-zero element: 5-bit
 * position delta (0-30, row-major scan, zeros skipped since the previous
 * element) in the high bits, 3-bit level (1-7) in the low bits. A gap
 * longer than 30 is bridged by escape bytes 0xF8 ("skip 31 positions"),
 * which may repeat and do not count toward the non-zero tally.
 */

export const CLAMP_MAX = 128
export const NUM_LEVELS = 8
export const BIN_WIDTH = CLAMP_MAX / NUM_LEVELS

const MAGIC = Buffer.from('AMP1', 'ascii')
const VERSION = 1
const ESCAPE_BYTE = 0xf8
const MAX_DELTA = 30
const ESCAPE_SKIP = 31

export interface QuantizedMap {
  /** (H * W * K) level indices, HWC order, values 0-7 */
  levels: Uint8Array
  width: number
  height: number
  channels: number
  imageId: string
  imageWidth: number
  imageHeight: number
}

/** Clamp at 128, floor, and bin into 8 uniform levels (top bin saturates). */
export function quantizeValue(v: number): number {
  if (v < 0) throw new Error(`negative response ${v}: not a post-ReLU tensor`)
  const clamped = Math.min(v, CLAMP_MAX)
  return Math.min(NUM_LEVELS - 1, Math.floor(Math.floor(clamped) / BIN_WIDTH))
}

export function quantize(
  values: Float32Array | number[],
  width: number,
  height: number,
  channels: number,
  meta: { imageId: string; imageWidth: number; imageHeight: number },
): QuantizedMap {
  if (values.length !== width * height * channels) {
    throw new Error(`tensor length ${values.length} != ${width}x${height}x${channels}`)
  }
  const levels = new Uint8Array(values.length)
  for (let i = 0; i < values.length; i++) {
    levels[i] = quantizeValue(values[i])
  }
  return { levels, width, height, channels, ...meta }
}

export function sparsity(map: QuantizedMap): number {
  let nonZero = 0
  for (const level of map.levels) if (level !== 0) nonZero++
  return 1 - nonZero / map.levels.length
}

export function encodeActmap(map: QuantizedMap): Buffer {
  const { width, height, channels } = map
  if (width > 0xffff || height > 0xffff || channels > 0xffff) {
    throw new Error(`dimensions ${width}x${height}x${channels} exceed the u16 header fields`)
  }
  const ident = Buffer.from(map.imageId, 'utf-8')
  if (ident.length > 0xffff) throw new Error('image id longer than 65535 bytes')

  const header = Buffer.alloc(22)
  MAGIC.copy(header, 0)
  header.writeUInt16LE(VERSION, 4)
  header.writeUInt16LE(width, 6)
  header.writeUInt16LE(height, 8)
  header.writeUInt16LE(channels, 10)
  header.writeUInt32LE(map.imageWidth, 12)
  header.writeUInt32LE(map.imageHeight, 16)
  header.writeUInt16LE(ident.length, 20)

  const parts: Buffer[] = [header, ident]
  const cells = width * height
  for (let ch = 0; ch < channels; ch++) {
    const bytes: number[] = []
    let nnz = 0
    let cursor = 0
    for (let p = 0; p < cells; p++) {
      const level = map.levels[p * channels + ch]
      if (level === 0) continue
      let gap = p - cursor
      while (gap > MAX_DELTA) {
        bytes.push(ESCAPE_BYTE)
        gap -= ESCAPE_SKIP
      }
      bytes.push((gap << 3) | level)
      nnz++
      cursor = p + 1
    }
    const count = Buffer.alloc(4)
    count.writeUInt32LE(nnz, 0)
    parts.push(count, Buffer.from(bytes))
  }
  return Buffer.concat(parts)
}
