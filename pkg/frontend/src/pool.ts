/**
 * Worker pool over images. Parallelism is across images only, so results
 * do not depend on the worker count; each image is processed start to
 * finish by a single thread.
 */

import { Worker } from "node:worker_threads";

import type { KernelConfig } from "./pipeline.js";
import { processImage, type WorkerJob, type WorkerResult } from "./worker.js";

export function runBatch(
  jobs: WorkerJob[], config: KernelConfig, workers: number,
): Promise<WorkerResult[]> {
  if (jobs.length === 0) return Promise.resolve([]);
  if (workers <= 1) {
    return Promise.resolve(jobs.map((job) => processImage(job, config)));
  }
  return new Promise((resolve, reject) => {
    const results: WorkerResult[] = [];
    const pool: Worker[] = [];
    let next = 0;
    let active = 0;
    const shutdown = () => pool.forEach((wk) => void wk.terminate());
    const dispatch = (wk: Worker) => {
      wk.postMessage(jobs[next]);
      next += 1;
      active += 1;
    };
    const n = Math.min(workers, jobs.length);
    for (let i = 0; i < n; i++) {
      const wk = new Worker(new URL("./worker.js", import.meta.url), {
        workerData: config,
      });
      wk.on("message", (res: WorkerResult) => {
        results.push(res);
        active -= 1;
        if (next < jobs.length) {
          dispatch(wk);
        } else if (active === 0) {
          shutdown();
          resolve(results);
        }
      });
      wk.on("error", (err) => {
        shutdown();
        reject(err);
      });
      pool.push(wk);
      if (next < jobs.length) dispatch(wk);
    }
  });
}
