import { execFileSync, spawnSync } from "node:child_process";
import { existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { PNG } from "pngjs";

export const FRONTEND_ROOT = new URL("..", import.meta.url).pathname;
export const CLI = join(FRONTEND_ROOT, "dist", "cli.js");
export const FIXTURES = join(FRONTEND_ROOT, "test", ".fixtures");

export interface FixtureParams {
  regions: number;
  compactness: number;
  iters: number;
  tile: number;
  dilation: number;
  names: string[];
}

/**
 * Fixtures are produced by the reference implementation. Returns null when
 * no python interpreter with the package is available, so equivalence
 * tests can skip instead of failing.
 */
export function ensureFixtures(): FixtureParams | null {
  const paramsPath = join(FIXTURES, "params.json");
  if (!existsSync(paramsPath)) {
    const probe = spawnSync("python3", ["-c", "import hmgdm"], {
      cwd: FRONTEND_ROOT,
      env: { ...process.env, PYTHONPATH: join(FRONTEND_ROOT, "..", "src") },
    });
    if (probe.status !== 0) return null;
    execFileSync("python3", [join(FRONTEND_ROOT, "scripts", "make_fixtures.py"), FIXTURES], {
      cwd: FRONTEND_ROOT,
      env: { ...process.env, PYTHONPATH: join(FRONTEND_ROOT, "..", "src") },
    });
  }
  return JSON.parse(readFileSync(paramsPath, "utf8")) as FixtureParams;
}

/** Deterministic pseudo-random RGB test image, no python involved. */
export function syntheticPng(width: number, height: number, seed: number): Buffer {
  const png = new PNG({ width, height });
  let state = seed >>> 0;
  const next = () => {
    // xorshift32
    state ^= state << 13;
    state ^= state >>> 17;
    state ^= state << 5;
    return (state >>> 0) % 256;
  };
  for (let p = 0; p < width * height; p++) {
    png.data[4 * p] = next();
    png.data[4 * p + 1] = next();
    png.data[4 * p + 2] = next();
    png.data[4 * p + 3] = 255;
  }
  return PNG.sync.write(png);
}

export function writeCorpus(dir: string, count: number, size: number): string[] {
  mkdirSync(dir, { recursive: true });
  const names: string[] = [];
  for (let i = 0; i < count; i++) {
    const name = `img${i}.png`;
    writeFileSync(join(dir, name), syntheticPng(size, size, 1000 + i));
    names.push(name);
  }
  return names;
}

export function tempDir(tag: string): string {
  const dir = join(tmpdir(), `hmgdm-kernel-${tag}-${process.pid}-${Date.now()}`);
  mkdirSync(dir, { recursive: true });
  return dir;
}
