/**
 * Convolutional feature networks: a real model loaded from disk, or a
 * deterministic seeded fallback for offline use.
 *
 * Both produce a post-ReLU (H', W', K) response map at an overall stride
 * of 32 with a final valid 3x3 stage, so a 1024x768 input comes out as
 * 30x22 cells. The fallback's last-layer scale and threshold are
 * calibrated so quantized sparsity on photo-like inputs sits near the
 * 81% seen with trained networks; it is a stand-in, not a replica, and
 * real weights from a model zoo should be preferred when available.
 */

import * as tf from '@tensorflow/tfjs'
import { readFile } from 'fs/promises'
import { join } from 'path'

import { gaussians, mulberry32 } from './prng.js'

export interface FeatureNetwork {
  /** recorded in each emitted file's image id for provenance */
  id: string
  channels: number
  meanPixel: [number, number, number]
  /** (H, W, 3) image, mean already subtracted -> (H', W', K) post-ReLU map */
  forward(input: tf.Tensor3D): tf.Tensor3D
}

export const SEEDED_STAGE_WIDTHS = [8, 16, 32, 64, 128]
export const SEEDED_CHANNELS = 512
export const SEEDED_WEIGHT_SEED = 1234567

// last-layer calibration, measured once on photo-like inputs
const SIGMA_CAL = 0.713
const KAPPA = 0.5
const OUTPUT_SCALE = 45
const INPUT_SCALE = 64

function heKernel(rand: () => number, k: number, cin: number, cout: number): tf.Tensor4D {
  const weights = gaussians(rand, k * k * cin * cout)
  const scale = Math.sqrt(2 / (k * k * cin))
  for (let i = 0; i < weights.length; i++) weights[i] *= scale
  return tf.tensor4d(weights, [k, k, cin, cout])
}

export function seededNetwork(seed: number = SEEDED_WEIGHT_SEED): FeatureNetwork {
  const rand = mulberry32(seed)
  const kernels: tf.Tensor4D[] = []
  let cin = 3
  for (const cout of SEEDED_STAGE_WIDTHS) {
    kernels.push(heKernel(rand, 3, cin, cout))
    cin = cout
  }
  const finalKernel = tf.tidy(() =>
    tf.mul(heKernel(rand, 3, cin, SEEDED_CHANNELS), OUTPUT_SCALE / SIGMA_CAL),
  ) as tf.Tensor4D
  const bias = KAPPA * OUTPUT_SCALE
  return {
    id: `seeded-512-s32-${seed}`,
    channels: SEEDED_CHANNELS,
    meanPixel: [118, 118, 118],
    forward(input: tf.Tensor3D): tf.Tensor3D {
      return tf.tidy(() => {
        let x = tf.expandDims(tf.div(input, INPUT_SCALE), 0) as tf.Tensor4D
        for (const kernel of kernels) {
          x = tf.relu(tf.conv2d(x, kernel, 2, 'same'))
        }
        const pre = tf.conv2d(x, finalKernel, 1, 'valid')
        return tf.squeeze(tf.relu(tf.sub(pre, bias)), [0])
      })
    },
  }
}

/** tf.io handler reading a layers-model directory without tfjs-node. */
function directoryHandler(dir: string): tf.io.IOHandler {
  return {
    load: async () => {
      const manifest = JSON.parse(await readFile(join(dir, 'model.json'), 'utf-8'))
      const specs: tf.io.WeightsManifestEntry[] = []
      const buffers: Buffer[] = []
      for (const group of manifest.weightsManifest ?? []) {
        specs.push(...group.weights)
        for (const path of group.paths) {
          buffers.push(await readFile(join(dir, path)))
        }
      }
      const joined = Buffer.concat(buffers)
      return {
        modelTopology: manifest.modelTopology,
        format: manifest.format,
        generatedBy: manifest.generatedBy,
        weightSpecs: specs,
        weightData: joined.buffer.slice(joined.byteOffset, joined.byteOffset + joined.byteLength),
      }
    },
  }
}

export interface LocalModelOptions {
  dir: string
  /** layer whose output to take; default: the last layer with a 4-D output */
  layer?: string
  meanPixel?: [number, number, number]
}

export async function loadLocalNetwork(options: LocalModelOptions): Promise<FeatureNetwork> {
  const model = await tf.loadLayersModel(directoryHandler(options.dir))
  let layer
  if (options.layer) {
    layer = model.getLayer(options.layer)
  } else {
    for (const candidate of model.layers) {
      const shape = candidate.outputShape as number[]
      if (Array.isArray(shape) && shape.length === 4) layer = candidate
    }
    if (!layer) throw new Error(`${options.dir}: no layer with a 4-D output; pass --layer`)
  }
  const truncated = tf.model({ inputs: model.inputs, outputs: layer.output as tf.SymbolicTensor })
  const shape = layer.outputShape as number[]
  return {
    id: `${options.dir.split('/').filter(Boolean).pop()}:${layer.name}`,
    channels: shape[shape.length - 1] as number,
    meanPixel: options.meanPixel ?? [118, 118, 118],
    forward(input: tf.Tensor3D): tf.Tensor3D {
      return tf.tidy(() => {
        const out = truncated.predict(tf.expandDims(input, 0)) as tf.Tensor4D
        return tf.squeeze(out, [0])
      })
    },
  }
}
