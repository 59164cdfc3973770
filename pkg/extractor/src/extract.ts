/**
 * Image -> quantized activation map.
 *
 * The crop (when given) is applied in image space before anything else;
 * cropping the feature map afterwards would see different receptive
 * fields. The image is then resized so its maximum side fits the limit
 * (aspect preserved, never upscaled), the mean pixel is subtracted, and
 * the network's post-ReLU responses are quantized and encoded.
 */

import * as tf from '@tensorflow/tfjs'
import { basename, extname, join } from 'path'
import { writeFile } from 'fs/promises'

import { QuantizedMap, encodeActmap, quantize, sparsity } from './actmap.js'
import { RgbImage, cropImage, readImage } from './image.js'
import { FeatureNetwork } from './network.js'

export interface ExtractOptions {
  network: FeatureNetwork
  maxDim?: number
  crop?: [number, number, number, number]
}

export interface ExtractResult {
  map: QuantizedMap
  bytes: Buffer
  sparsity: number
}

export function mapFromImage(image: RgbImage, options: ExtractOptions): QuantizedMap {
  const { network, maxDim = 1024 } = options
  const working = options.crop ? cropImage(image, options.crop) : image
  const features = tf.tidy(() => {
    let input = tf.tensor3d(working.data, [working.height, working.width, 3])
    const longest = Math.max(working.width, working.height)
    if (longest > maxDim) {
      const scale = maxDim / longest
      input = tf.image.resizeBilinear(input, [
        Math.max(1, Math.round(working.height * scale)),
        Math.max(1, Math.round(working.width * scale)),
      ])
    }
    const centered = tf.sub(input, tf.tensor1d(network.meanPixel))
    return network.forward(centered as tf.Tensor3D)
  })
  const [h, w, k] = features.shape
  const values = features.dataSync() as Float32Array
  features.dispose()
  let min = Infinity
  for (const v of values) if (v < min) min = v
  if (min < 0) {
    throw new Error(
      `network ${network.id} produced negative activations (min ${min}); ` +
        'select a post-ReLU layer',
    )
  }
  return quantize(values, w, h, k, {
    imageId: '',
    imageWidth: working.width,
    imageHeight: working.height,
  })
}

export async function extractToFile(
  imagePath: string,
  outDir: string,
  options: ExtractOptions,
): Promise<{ outPath: string; result: ExtractResult }> {
  const image = await readImage(imagePath)
  const map = mapFromImage(image, options)
  const stem = basename(imagePath, extname(imagePath))
  // model identity rides along in the id for provenance
  map.imageId = `${stem}@${options.network.id}`
  const bytes = encodeActmap(map)
  const outPath = join(outDir, `${stem}.actmap`)
  await writeFile(outPath, bytes)
  return { outPath, result: { map, bytes, sparsity: sparsity(map) } }
}
