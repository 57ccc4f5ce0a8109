/**
 * Batch graph construction over a directory of PNG images.
 *
 * Usage:
 *   hmgdm-kernel --in DIR --out DIR [--regions N] [--compactness M]
 *                [--iters K] [--tile A] [--dilation R] [--workers W]
 *
 * Writes one .hmgg bundle per image plus manifest.txt, a newline-delimited
 * tab-separated table of filename, vertex count, edge count, SHA-256 of the
 * bundle bytes, and status. Per-file failures are recorded in the manifest
 * and processing continues.
 *
 * Exit codes: 0 success, 1 at least one image failed, 2 invalid arguments.
 */

import { mkdirSync, readdirSync, statSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";

import { DEFAULT_CONFIG, type KernelConfig } from "./pipeline.js";
import { runBatch } from "./pool.js";
import type { WorkerJob } from "./worker.js";

function intArg(raw: string | undefined, fallback: number, name: string): number {
  if (raw === undefined) return fallback;
  const value = Number(raw);
  if (!Number.isInteger(value)) {
    throw new Error(`invalid value for --${name}: ${raw}`);
  }
  return value;
}

function floatArg(raw: string | undefined, fallback: number, name: string): number {
  if (raw === undefined) return fallback;
  const value = Number(raw);
  if (!Number.isFinite(value)) {
    throw new Error(`invalid value for --${name}: ${raw}`);
  }
  return value;
}

export async function main(argv: string[]): Promise<number> {
  let inDir: string;
  let outDir: string;
  let config: KernelConfig;
  let workers: number;
  try {
    const { values } = parseArgs({
      args: argv,
      options: {
        in: { type: "string" },
        out: { type: "string" },
        regions: { type: "string" },
        compactness: { type: "string" },
        iters: { type: "string" },
        tile: { type: "string" },
        dilation: { type: "string" },
        workers: { type: "string" },
      },
    });
    if (values.in === undefined || values.out === undefined) {
      throw new Error("--in and --out are required");
    }
    inDir = values.in;
    outDir = values.out;
    config = {
      nRegions: intArg(values.regions, DEFAULT_CONFIG.nRegions, "regions"),
      compactness: floatArg(values.compactness, DEFAULT_CONFIG.compactness, "compactness"),
      iterations: intArg(values.iters, DEFAULT_CONFIG.iterations, "iters"),
      tile: intArg(values.tile, DEFAULT_CONFIG.tile, "tile"),
      dilationRadius: intArg(values.dilation, DEFAULT_CONFIG.dilationRadius, "dilation"),
    };
    workers = intArg(values.workers, 1, "workers");
    if (config.nRegions < 1 || config.iterations < 1 || config.tile < 1) {
      throw new Error("--regions, --iters and --tile must be >= 1");
    }
    if (config.compactness <= 0) throw new Error("--compactness must be > 0");
    if (config.dilationRadius < 0) throw new Error("--dilation must be >= 0");
    if (workers < 1) throw new Error("--workers must be >= 1");
    if (!statSync(inDir, { throwIfNoEntry: false })?.isDirectory()) {
      throw new Error(`input directory not found: ${inDir}`);
    }
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    return 2;
  }

  mkdirSync(outDir, { recursive: true });
  const names = readdirSync(inDir)
    .filter((f) => f.toLowerCase().endsWith(".png"))
    .sort();
  const jobs: WorkerJob[] = names.map((name) => ({
    name,
    inPath: join(inDir, name),
    outPath: join(outDir, name.slice(0, -4) + ".hmgg"),
  }));

  const results = await runBatch(jobs, config, workers);
  results.sort((a, b) => (a.name < b.name ? -1 : a.name > b.name ? 1 : 0));

  const lines: string[] = [];
  let failed = 0;
  for (const res of results) {
    if (res.error === null) {
      lines.push(`${res.name}\t${res.nVertices}\t${res.nEdges}\t${res.sha256}\tok`);
    } else {
      failed += 1;
      lines.push(`${res.name}\t0\t0\t\tfailed`);
      process.stderr.write(`failed ${res.name}: ${res.error}\n`);
    }
  }
  writeFileSync(join(outDir, "manifest.txt"), lines.map((l) => l + "\n").join(""));
  return failed > 0 ? 1 : 0;
}

main(process.argv.slice(2)).then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    process.exit(1);
  },
);
