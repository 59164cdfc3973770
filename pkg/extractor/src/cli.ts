#!/usr/bin/env node
/**
 * extract --model seeded|<dir> [--layer NAME] [--max-dim N] [--seed N]
 *         [--mean R,G,B] [--crop x0,y0,x1,y1] --out-dir DIR images...
 */

import { mkdir } from 'fs/promises'

import { extractToFile } from './extract.js'
import { FeatureNetwork, loadLocalNetwork, seededNetwork } from './network.js'

interface CliArgs {
  model: string
  layer?: string
  maxDim: number
  seed?: number
  mean?: [number, number, number]
  crop?: [number, number, number, number]
  outDir: string
  images: string[]
}

function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = { model: 'seeded', maxDim: 1024, outDir: '', images: [] }
  let i = 0
  const next = (flag: string) => {
    if (i + 1 >= argv.length) throw new Error(`${flag} needs a value`)
    return argv[++i]
  }
  for (; i < argv.length; i++) {
    const arg = argv[i]
    if (arg === '--model') args.model = next(arg)
    else if (arg === '--layer') args.layer = next(arg)
    else if (arg === '--max-dim') args.maxDim = parseInt(next(arg), 10)
    else if (arg === '--seed') args.seed = parseInt(next(arg), 10)
    else if (arg === '--mean') {
      const parts = next(arg).split(',').map(Number)
      if (parts.length !== 3 || parts.some(Number.isNaN)) throw new Error('--mean wants R,G,B')
      args.mean = parts as [number, number, number]
    } else if (arg === '--crop') {
      const parts = next(arg).split(',').map(Number)
      if (parts.length !== 4 || parts.some(Number.isNaN)) throw new Error('--crop wants x0,y0,x1,y1')
      args.crop = parts as [number, number, number, number]
    } else if (arg === '--out-dir') args.outDir = next(arg)
    else if (arg === '--help' || arg === '-h') {
      console.log(
        'usage: extract --model seeded|<model-dir> [--layer NAME] [--max-dim N]\n' +
          '               [--seed N] [--mean R,G,B] [--crop x0,y0,x1,y1]\n' +
          '               --out-dir DIR images...',
      )
      process.exit(0)
    } else if (arg.startsWith('--')) throw new Error(`unknown flag ${arg}`)
    else args.images.push(arg)
  }
  if (!args.outDir) throw new Error('--out-dir is required')
  if (args.images.length === 0) throw new Error('no input images')
  return args
}

async function buildNetwork(args: CliArgs): Promise<FeatureNetwork> {
  if (args.model === 'seeded') {
    const net = seededNetwork(args.seed)
    if (args.mean) net.meanPixel = args.mean
    return net
  }
  return loadLocalNetwork({ dir: args.model, layer: args.layer, meanPixel: args.mean })
}

async function main() {
  const args = parseArgs(process.argv.slice(2))
  const network = await buildNetwork(args)
  await mkdir(args.outDir, { recursive: true })
  for (const imagePath of args.images) {
    const { outPath, result } = await extractToFile(imagePath, args.outDir, {
      network,
      maxDim: args.maxDim,
      crop: args.crop,
    })
    const { map } = result
    console.log(
      `${imagePath} -> ${outPath}: ${map.width}x${map.height}x${map.channels}, ` +
        `sparsity ${(result.sparsity * 100).toFixed(2)}%`,
    )
  }
}

main().catch((err) => {
  console.error(String(err instanceof Error ? err.message : err))
  process.exit(1)
})
