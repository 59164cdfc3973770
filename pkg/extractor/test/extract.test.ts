import { execFileSync, spawnSync } from 'child_process'
import { mkdtempSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'

import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'
import { beforeAll, describe, expect, it } from 'vitest'

import { mapFromImage, extractToFile } from '../src/extract.js'
import { FeatureNetwork, loadLocalNetwork, seededNetwork } from '../src/network.js'
import { gaussians, mulberry32 } from '../src/prng.js'

const haveValidator = spawnSync('rmac', ['--help']).status === 0

let network: FeatureNetwork

beforeAll(async () => {
  await tf.setBackend('cpu')
  network = seededNetwork()
})

/** Photo-like synthetic image: smooth low-frequency field plus grain. */
function syntheticPhoto(seed: number, width: number, height: number): PNG {
  const rand = mulberry32(seed)
  const coarse = gaussians(rand, 12 * 16 * 3)
  const field = tf.tidy(() => {
    const small = tf.tensor3d(Float32Array.from(coarse.map((v) => v * 60)), [12, 16, 3])
    return tf.image.resizeBilinear(small, [height, width])
  })
  const base = field.dataSync()
  field.dispose()
  const noise = gaussians(rand, width * height * 3)
  const png = new PNG({ width, height })
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const v = Math.round(base[i * 3 + c] + noise[i * 3 + c] * 12 + 118)
      png.data[i * 4 + c] = Math.max(0, Math.min(255, v))
    }
    png.data[i * 4 + 3] = 255
  }
  return png
}

function writePhoto(dir: string, name: string, seed: number, width: number, height: number): string {
  const path = join(dir, name)
  writeFileSync(path, PNG.sync.write(syntheticPhoto(seed, width, height)))
  return path
}

function pngToImage(png: PNG) {
  const data = new Float32Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    data[i * 3] = png.data[i * 4]
    data[i * 3 + 1] = png.data[i * 4 + 1]
    data[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { data, width: png.width, height: png.height }
}

describe('spatial geometry', () => {
  it('maps a 1024x768 image to a 30x22 grid with 512 channels', () => {
    const image = pngToImage(syntheticPhoto(1, 1024, 768))
    const map = mapFromImage(image, { network })
    expect([map.width, map.height, map.channels]).toEqual([30, 22, 512])
  })

  it('downscales larger inputs to the max-dim budget first', () => {
    const image = pngToImage(syntheticPhoto(2, 640, 480))
    const map = mapFromImage(image, { network, maxDim: 320 })
    // 320x240 input -> stride-32 stack -> 10x8 minus the valid final conv
    expect([map.width, map.height]).toEqual([8, 6])
  })
})

describe('extraction outputs', () => {
  it('is deterministic: the same image encodes to identical bytes', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'extract-'))
    const photo = writePhoto(dir, 'twin.png', 3, 320, 256)
    const first = await extractToFile(photo, dir, { network, maxDim: 320 })
    const second = await extractToFile(photo, dir, { network, maxDim: 320 })
    expect(first.result.bytes.equals(second.result.bytes)).toBe(true)
  })

  it('keeps natural-photo sparsity in the realistic band', () => {
    const values: number[] = []
    for (let i = 0; i < 10; i++) {
      const image = pngToImage(syntheticPhoto(100 + i, 512, 384))
      const map = mapFromImage(image, { network })
      let nonZero = 0
      for (const level of map.levels) if (level !== 0) nonZero++
      values.push(1 - nonZero / map.levels.length)
    }
    for (const s of values) {
      expect(s).toBeGreaterThanOrEqual(0.66)
      expect(s).toBeLessThanOrEqual(0.96)
    }
  })

  it('crops in image space, which differs from cropping the feature map', () => {
    const png = syntheticPhoto(4, 512, 384)
    const image = pngToImage(png)
    const full = mapFromImage(image, { network })
    const cropped = mapFromImage(image, { network, crop: [128, 96, 383, 287] })
    // the same object area seen through a crop has its own border context;
    // compare against the corresponding slice of the full feature map
    const fx0 = Math.floor((128 / 512) * full.width)
    const fy0 = Math.floor((96 / 384) * full.height)
    let differs = false
    for (let y = 0; y < cropped.height && !differs; y++) {
      for (let x = 0; x < cropped.width && !differs; x++) {
        const fullIdx = ((fy0 + y) * full.width + (fx0 + x)) * full.channels
        const cropIdx = (y * cropped.width + x) * cropped.channels
        if (fy0 + y >= full.height || fx0 + x >= full.width) continue
        for (let c = 0; c < full.channels; c++) {
          if (full.levels[fullIdx + c] !== cropped.levels[cropIdx + c]) {
            differs = true
            break
          }
        }
      }
    }
    expect(differs).toBe(true)
  })

  it('rejects networks that emit negative activations', () => {
    const broken: FeatureNetwork = {
      id: 'broken',
      channels: 4,
      meanPixel: [0, 0, 0],
      forward: (input) => tf.tidy(() => tf.sub(tf.slice(input, [0, 0, 0], [4, 4, 3]), 500)) as tf.Tensor3D,
    }
    const image = pngToImage(syntheticPhoto(5, 64, 64))
    expect(() => mapFromImage(image, { network: broken })).toThrow(/negative activations/)
  })
})

describe.skipIf(!haveValidator)('validator conformance', () => {
  it('emitted files pass actmap validate and carry provenance', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'extract-'))
    const photo = writePhoto(dir, 'shot.png', 6, 512, 384)
    const { outPath, result } = await extractToFile(photo, dir, { network })
    const output = execFileSync('rmac', ['actmap', 'validate', outPath], { encoding: 'utf-8' })
    expect(output).toContain('W=14 H=10 K=512')
    expect(output).toContain('image=512x384')
    expect(output).toContain('@seeded-512-s32')
    const reported = /sparsity=([0-9.]+)%/.exec(output)
    expect(reported).not.toBeNull()
    // the validator prints two decimals of percent
    expect(parseFloat(reported![1]) / 100).toBeCloseTo(result.sparsity, 4)
  })
})

describe('local model loading', () => {
  it('loads a layers model from disk and takes the last 4-D layer', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.conv2d({
          inputShape: [null as unknown as number, null as unknown as number, 3],
          filters: 8,
          kernelSize: 3,
          strides: 2,
          padding: 'same',
          activation: 'relu',
        }),
        tf.layers.maxPooling2d({ poolSize: 2 }),
      ],
    })
    const dir = mkdtempSync(join(tmpdir(), 'model-'))
    const artifacts = await new Promise<tf.io.ModelArtifacts>((resolve) => {
      void model.save(
        tf.io.withSaveHandler(async (a) => {
          resolve(a)
          return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } }
        }),
      )
    })
    writeFileSync(join(dir, 'weights.bin'), Buffer.from(artifacts.weightData as ArrayBuffer))
    writeFileSync(
      join(dir, 'model.json'),
      JSON.stringify({
        modelTopology: artifacts.modelTopology,
        format: 'layers-model',
        weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
      }),
    )
    const loaded = await loadLocalNetwork({ dir })
    expect(loaded.channels).toBe(8)
    const image = pngToImage(syntheticPhoto(7, 64, 48))
    const map = mapFromImage(image, { network: loaded })
    expect([map.width, map.height, map.channels]).toEqual([16, 12, 8])
  })
})
