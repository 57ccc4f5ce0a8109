/**
 * Region adjacency, centroids, and tile extraction over a label map.
 *
 * Same arithmetic contract as slic.ts: centroid reductions are exact
 * integer sums with a single float64 division stored as float32, window
 * placement rounds half-up on the float32 centroid.
 */

import type { LabelMap, RgbImage } from "./slic.js";

const f32 = Math.fround;

export const BACKGROUND_R = 255;
export const BACKGROUND_G = 255;
export const BACKGROUND_B = 255;

export interface AdjacencyResult {
  /** flat [i0, j0, i1, j1, ...] with i < j, lexicographically sorted */
  edges: Uint32Array;
  nEdges: number;
}

/** Region adjacency under 4-connectivity; unique sorted (i, j) pairs. */
export function buildAdjacency(map: LabelMap): AdjacencyResult {
  const { labels, width: w, height: h, nRegions } = map;
  const keys = new Set<number>();
  for (let r = 0; r < h; r++) {
    const rowBase = r * w;
    for (let c = 0; c < w; c++) {
      const a = labels[rowBase + c];
      if (c + 1 < w) {
        const b = labels[rowBase + c + 1];
        if (a !== b) keys.add(a < b ? a * nRegions + b : b * nRegions + a);
      }
      if (r + 1 < h) {
        const b = labels[rowBase + w + c];
        if (a !== b) keys.add(a < b ? a * nRegions + b : b * nRegions + a);
      }
    }
  }
  const sorted = Array.from(keys).sort((x, y) => x - y);
  const edges = new Uint32Array(sorted.length * 2);
  for (let e = 0; e < sorted.length; e++) {
    edges[2 * e] = Math.floor(sorted[e] / nRegions);
    edges[2 * e + 1] = sorted[e] % nRegions;
  }
  return { edges, nEdges: sorted.length };
}

/**
 * Per-region mean pixel coordinate: exact integer sums, one float64
 * division, stored float32. Flat [r0, c0, r1, c1, ...].
 */
export function regionCentroids(map: LabelMap): Float32Array {
  const { labels, width: w, height: h, nRegions } = map;
  const counts = new Float64Array(nRegions);
  const sumR = new Float64Array(nRegions);
  const sumC = new Float64Array(nRegions);
  for (let r = 0; r < h; r++) {
    const rowBase = r * w;
    for (let c = 0; c < w; c++) {
      const s = labels[rowBase + c];
      counts[s] += 1;
      sumR[s] += r;
      sumC[s] += c;
    }
  }
  const out = new Float32Array(nRegions * 2);
  for (let s = 0; s < nRegions; s++) {
    out[2 * s] = f32(sumR[s] / counts[s]);
    out[2 * s + 1] = f32(sumC[s] / counts[s]);
  }
  return out;
}

/**
 * Top-left of a side-length window centered (round half-up) on `center`,
 * shifted to stay inside [0, limit).
 */
export function windowOrigin(center: number, side: number, limit: number): number {
  const origin = Math.floor(center + 0.5) - Math.floor(side / 2);
  return Math.min(Math.max(origin, 0), limit - side);
}

/**
 * Cut an a x a window around each region centroid; pixels outside the
 * region are painted the background color.
 */
export function extractVertexTiles(
  img: RgbImage, map: LabelMap, a: number, centroids: Float32Array,
): Uint8Array {
  if (a < 1) throw new Error("invalid parameter: tile side must be >= 1");
  const { width: w, height: h, data } = img;
  if (h < a || w < a) {
    throw new Error("invalid input: image smaller than the tile window");
  }
  const { labels, nRegions } = map;
  const tiles = new Uint8Array(nRegions * a * a * 3);
  for (let s = 0; s < nRegions; s++) {
    const r0 = windowOrigin(centroids[2 * s], a, h);
    const c0 = windowOrigin(centroids[2 * s + 1], a, w);
    let q = s * a * a * 3;
    for (let r = r0; r < r0 + a; r++) {
      const rowBase = r * w;
      for (let c = c0; c < c0 + a; c++) {
        if (labels[rowBase + c] === s) {
          const p = (rowBase + c) * 3;
          tiles[q] = data[p];
          tiles[q + 1] = data[p + 1];
          tiles[q + 2] = data[p + 2];
        } else {
          tiles[q] = BACKGROUND_R;
          tiles[q + 1] = BACKGROUND_G;
          tiles[q + 2] = BACKGROUND_B;
        }
        q += 3;
      }
    }
  }
  return tiles;
}

/**
 * For each adjacent region pair, the set of pixels of either region that
 * are 4-adjacent to the other. Returned as unique flat indices per edge.
 */
export function boundaryPixelsPerEdge(map: LabelMap, adj: AdjacencyResult): Int32Array[] {
  const { labels, width: w, height: h, nRegions } = map;
  // dense pair -> edge table when affordable, hash map otherwise
  let edgeOf: Int32Array | Map<number, number>;
  if (nRegions <= 2048) {
    edgeOf = new Int32Array(nRegions * nRegions).fill(-1);
    for (let e = 0; e < adj.nEdges; e++) {
      edgeOf[adj.edges[2 * e] * nRegions + adj.edges[2 * e + 1]] = e;
    }
  } else {
    edgeOf = new Map();
    for (let e = 0; e < adj.nEdges; e++) {
      edgeOf.set(adj.edges[2 * e] * nRegions + adj.edges[2 * e + 1], e);
    }
  }
  const lookup = (key: number): number =>
    edgeOf instanceof Map ? edgeOf.get(key)! : edgeOf[key];
  // two passes: count cross-region contacts, then collect combined
  // (edge, pixel) keys for both endpoints; sort + dedupe splits per edge
  let contacts = 0;
  for (let r = 0; r < h; r++) {
    const rowBase = r * w;
    for (let c = 0; c < w; c++) {
      const a = labels[rowBase + c];
      if (c + 1 < w && a !== labels[rowBase + c + 1]) contacts++;
      if (r + 1 < h && a !== labels[rowBase + w + c]) contacts++;
    }
  }
  const size = h * w;
  const keys = new Float64Array(contacts * 2); // eid * size + pixel, exact
  let n = 0;
  for (let r = 0; r < h; r++) {
    const rowBase = r * w;
    for (let c = 0; c < w; c++) {
      const pa = rowBase + c;
      const la = labels[pa];
      if (c + 1 < w) {
        const lb = labels[pa + 1];
        if (la !== lb) {
          const e = lookup(la < lb ? la * nRegions + lb : lb * nRegions + la);
          keys[n++] = e * size + pa;
          keys[n++] = e * size + pa + 1;
        }
      }
      if (r + 1 < h) {
        const pb = pa + w;
        const lb = labels[pb];
        if (la !== lb) {
          const e = lookup(la < lb ? la * nRegions + lb : lb * nRegions + la);
          keys[n++] = e * size + pa;
          keys[n++] = e * size + pb;
        }
      }
    }
  }
  keys.sort();
  const out: Int32Array[] = [];
  let pos = 0;
  for (let e = 0; e < adj.nEdges; e++) {
    const hi = (e + 1) * size;
    let count = 0;
    let prev = -1;
    for (let q = pos; q < keys.length && keys[q] < hi; q++) {
      if (keys[q] !== prev) count++;
      prev = keys[q];
    }
    const pix = new Int32Array(count);
    let m = 0;
    prev = -1;
    while (pos < keys.length && keys[pos] < hi) {
      if (keys[pos] !== prev) pix[m++] = keys[pos] - e * size;
      prev = keys[pos];
      pos++;
    }
    out.push(pix);
  }
  return out;
}

/** Dilate a boolean mask by a square element of the given radius in place. */
function dilateSquare(mask: Uint8Array, h: number, w: number, rad: number): Uint8Array {
  // separable: run-length passes along rows then columns
  const tmp = new Uint8Array(h * w);
  for (let r = 0; r < h; r++) {
    const base = r * w;
    let until = -1;
    for (let c = 0; c < w; c++) {
      if (mask[base + c]) until = c + rad;
      if (c <= until) tmp[base + c] = 1;
    }
    until = w;
    for (let c = w - 1; c >= 0; c--) {
      if (mask[base + c]) until = c - rad;
      if (c >= until) tmp[base + c] = 1;
    }
  }
  const outMask = new Uint8Array(h * w);
  for (let c = 0; c < w; c++) {
    let until = -1;
    for (let r = 0; r < h; r++) {
      if (tmp[r * w + c]) until = r + rad;
      if (r <= until) outMask[r * w + c] = 1;
    }
    until = h;
    for (let r = h - 1; r >= 0; r--) {
      if (tmp[r * w + c]) until = r - rad;
      if (r >= until) outMask[r * w + c] = 1;
    }
  }
  return outMask;
}

/**
 * One a x a tile per region pair, centered on the boundary pixel set.
 * The member mask is the boundary set dilated by a square element of the
 * given radius, intersected with the union of the two regions.
 */
export function extractEdgeTiles(
  img: RgbImage, map: LabelMap, adj: AdjacencyResult, a: number, dilationRadius = 2,
): Uint8Array {
  if (dilationRadius < 0) {
    throw new Error("invalid parameter: dilation_radius must be >= 0");
  }
  const { width: w, height: h, data } = img;
  const { labels } = map;
  const boundary = boundaryPixelsPerEdge(map, adj);
  const tiles = new Uint8Array(adj.nEdges * a * a * 3);
  const rad = dilationRadius;
  for (let e = 0; e < adj.nEdges; e++) {
    const i = adj.edges[2 * e];
    const j = adj.edges[2 * e + 1];
    const pix = boundary[e];
    if (pix.length === 0) {
      throw new Error("internal invariant: adjacent pair with no boundary");
    }
    let rSum = 0;
    let cSum = 0;
    for (const p of pix) {
      rSum += Math.floor(p / w);
      cSum += p % w;
    }
    const cy = f32(rSum / pix.length);
    const cx = f32(cSum / pix.length);
    const r0 = windowOrigin(cy, a, h);
    const c0 = windowOrigin(cx, a, w);
    // dilation on a crop extended by the radius: boundary pixels farther
    // out cannot reach the window
    const er0 = Math.max(0, r0 - rad);
    const ec0 = Math.max(0, c0 - rad);
    const er1 = Math.min(h, r0 + a + rad);
    const ec1 = Math.min(w, c0 + a + rad);
    const eh = er1 - er0;
    const ew = ec1 - ec0;
    let mask: Uint8Array = new Uint8Array(eh * ew);
    for (const p of pix) {
      const r = Math.floor(p / w);
      const c = p % w;
      if (r >= er0 && r < er1 && c >= ec0 && c < ec1) {
        mask[(r - er0) * ew + (c - ec0)] = 1;
      }
    }
    if (rad > 0) mask = dilateSquare(mask, eh, ew, rad);
    let q = e * a * a * 3;
    for (let r = r0; r < r0 + a; r++) {
      const rowBase = r * w;
      const maskBase = (r - er0) * ew - ec0;
      for (let c = c0; c < c0 + a; c++) {
        const lab = labels[rowBase + c];
        if (mask[maskBase + c] && (lab === i || lab === j)) {
          const p = (rowBase + c) * 3;
          tiles[q] = data[p];
          tiles[q + 1] = data[p + 1];
          tiles[q + 2] = data[p + 2];
        } else {
          tiles[q] = BACKGROUND_R;
          tiles[q + 1] = BACKGROUND_G;
          tiles[q + 2] = BACKGROUND_B;
        }
        q += 3;
      }
    }
  }
  return tiles;
}
