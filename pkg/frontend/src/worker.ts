/** Worker thread entry: one message per image, one result per message. */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";
import { parentPort, workerData } from "node:worker_threads";

import { decodePng } from "./png.js";
import { constructGraphBytes, type KernelConfig } from "./pipeline.js";

export interface WorkerJob {
  name: string;
  inPath: string;
  outPath: string;
}

export interface WorkerResult {
  name: string;
  nVertices: number;
  nEdges: number;
  sha256: string;
  error: string | null;
}

export function processImage(job: WorkerJob, config: KernelConfig): WorkerResult {
  try {
    const img = decodePng(readFileSync(job.inPath));
    const bytes = constructGraphBytes(img, config);
    writeFileSync(job.outPath, bytes);
    return {
      name: job.name,
      nVertices: bytes.readUInt32LE(8),
      nEdges: bytes.readUInt32LE(12),
      sha256: createHash("sha256").update(bytes).digest("hex"),
      error: null,
    };
  } catch (err) {
    return {
      name: job.name,
      nVertices: 0,
      nEdges: 0,
      sha256: "",
      error: err instanceof Error ? err.message : String(err),
    };
  }
}

if (parentPort !== null) {
  const config = workerData as KernelConfig;
  parentPort.on("message", (job: WorkerJob) => {
    parentPort!.postMessage(processImage(job, config));
  });
}
