/**
 * Deterministic SLIC-style superpixel segmentation.
 *
 * Bit-for-bit compatible with the reference Python module: float32
 * element operations round one at a time (Math.fround), reductions over
 * pixel sets are exact integer sums divided once in float64. Do not
 * reorder any accumulation or fuse any rounding step.
 */

const f32 = Math.fround;

export interface RgbImage {
  width: number;
  height: number;
  /** h*w*3 row-major RGB bytes */
  data: Uint8Array;
}

export interface LabelMap {
  width: number;
  height: number;
  /** h*w row-major region ids, 0..nRegions-1, each region 4-connected */
  labels: Int32Array;
  nRegions: number;
}

export function validateImage(img: RgbImage): void {
  if (img.width < 1 || img.height < 1) {
    throw new Error("invalid input: image must be non-empty");
  }
  if (img.data.length !== img.width * img.height * 3) {
    throw new Error("invalid input: image data must be h x w x 3 RGB");
  }
}

/**
 * 3x3 box blur with border-clamped windows: integer window sums divided
 * once in float64, stored float32.
 */
export function boxBlur(img: RgbImage): Float32Array {
  const { width: w, height: h, data } = img;
  const out = new Float32Array(h * w * 3);
  for (let r = 0; r < h; r++) {
    const rLo = Math.max(0, r - 1);
    const rHi = Math.min(h - 1, r + 1);
    for (let c = 0; c < w; c++) {
      const cLo = Math.max(0, c - 1);
      const cHi = Math.min(w - 1, c + 1);
      let s0 = 0;
      let s1 = 0;
      let s2 = 0;
      for (let nr = rLo; nr <= rHi; nr++) {
        for (let nc = cLo; nc <= cHi; nc++) {
          const p = (nr * w + nc) * 3;
          s0 += data[p];
          s1 += data[p + 1];
          s2 += data[p + 2];
        }
      }
      const count = (rHi - rLo + 1) * (cHi - cLo + 1);
      const q = (r * w + c) * 3;
      out[q] = f32(s0 / count);
      out[q + 1] = f32(s1 / count);
      out[q + 2] = f32(s2 / count);
    }
  }
  return out;
}

/** Squared L2 norm of forward RGB differences, clamped at the far border. */
export function gradientMap(blurred: Float32Array, h: number, w: number): Float32Array {
  const out = new Float32Array(h * w);
  for (let r = 0; r < h; r++) {
    const rNext = Math.min(h - 1, r + 1);
    for (let c = 0; c < w; c++) {
      const cNext = Math.min(w - 1, c + 1);
      const p = (r * w + c) * 3;
      const pr = (r * w + cNext) * 3;
      const pd = (rNext * w + c) * 3;
      // f32 rounding after every elementwise op, in the reference order
      let gx = f32(blurred[pr] - blurred[p]);
      let acc = f32(gx * gx);
      gx = f32(blurred[pr + 1] - blurred[p + 1]);
      acc = f32(acc + f32(gx * gx));
      gx = f32(blurred[pr + 2] - blurred[p + 2]);
      acc = f32(acc + f32(gx * gx));
      let gy = f32(blurred[pd] - blurred[p]);
      let acc2 = f32(gy * gy);
      gy = f32(blurred[pd + 1] - blurred[p + 1]);
      acc2 = f32(acc2 + f32(gy * gy));
      gy = f32(blurred[pd + 2] - blurred[p + 2]);
      acc2 = f32(acc2 + f32(gy * gy));
      out[r * w + c] = f32(acc + acc2);
    }
  }
  return out;
}

export interface SeedGrid {
  /** flat [r0, c0, r1, c1, ...] */
  seeds: Int32Array;
  nRows: number;
  nCols: number;
}

/** Evenly spaced seed positions, about nRegions of them, row-major order. */
export function seedGrid(h: number, w: number, nRegions: number): SeedGrid {
  let nRows = Math.floor(Math.sqrt((nRegions * h) / w) + 0.5);
  nRows = Math.min(Math.max(nRows, 1), h);
  let nCols = Math.ceil(nRegions / nRows);
  nCols = Math.min(Math.max(nCols, 1), w);
  const seeds = new Int32Array(nRows * nCols * 2);
  for (let i = 0; i < nRows; i++) {
    const r = Math.floor(((2 * i + 1) * h) / (2 * nRows));
    for (let j = 0; j < nCols; j++) {
      const c = Math.floor(((2 * j + 1) * w) / (2 * nCols));
      const k = i * nCols + j;
      seeds[2 * k] = r;
      seeds[2 * k + 1] = c;
    }
  }
  return { seeds, nRows, nCols };
}

/**
 * Move each seed to the strictly lowest-gradient pixel of its 3x3 patch.
 * Row-major scan, strict improvement only, so the seed itself wins ties.
 */
export function perturbSeeds(
  seeds: Int32Array, gradient: Float32Array, h: number, w: number,
): void {
  const n = seeds.length / 2;
  for (let k = 0; k < n; k++) {
    const r = seeds[2 * k];
    const c = seeds[2 * k + 1];
    let bestR = r;
    let bestC = c;
    let bestG = gradient[r * w + c];
    const rHi = Math.min(h - 1, r + 1);
    const cHi = Math.min(w - 1, c + 1);
    for (let nr = Math.max(0, r - 1); nr <= rHi; nr++) {
      for (let nc = Math.max(0, c - 1); nc <= cHi; nc++) {
        const g = gradient[nr * w + nc];
        if (g < bestG) {
          bestG = g;
          bestR = nr;
          bestC = nc;
        }
      }
    }
    seeds[2 * k] = bestR;
    seeds[2 * k + 1] = bestC;
  }
}

interface Components {
  comp: Int32Array;
  nComp: number;
  /** label carried by the first row-major pixel of each component */
  compLabel: Int32Array;
  sizes: Int32Array;
}

/**
 * 4-connected components of equal-label pixels, numbered by first
 * row-major occurrence.
 */
export function connectedComponents(labels: Int32Array, h: number, w: number): Components {
  const comp = new Int32Array(h * w).fill(-1);
  const stack = new Int32Array(h * w);
  const compLabel: number[] = [];
  const sizes: number[] = [];
  let next = 0;
  for (let start = 0; start < h * w; start++) {
    if (comp[start] >= 0) continue;
    const lab = labels[start];
    comp[start] = next;
    compLabel.push(lab);
    let size = 0;
    let sp = 0;
    stack[sp++] = start;
    while (sp > 0) {
      const idx = stack[--sp];
      size++;
      const r = (idx / w) | 0;
      const c = idx - r * w;
      if (r > 0 && comp[idx - w] < 0 && labels[idx - w] === lab) {
        comp[idx - w] = next;
        stack[sp++] = idx - w;
      }
      if (r < h - 1 && comp[idx + w] < 0 && labels[idx + w] === lab) {
        comp[idx + w] = next;
        stack[sp++] = idx + w;
      }
      if (c > 0 && comp[idx - 1] < 0 && labels[idx - 1] === lab) {
        comp[idx - 1] = next;
        stack[sp++] = idx - 1;
      }
      if (c < w - 1 && comp[idx + 1] < 0 && labels[idx + 1] === lab) {
        comp[idx + 1] = next;
        stack[sp++] = idx + 1;
      }
    }
    sizes.push(size);
    next++;
  }
  return {
    comp,
    nComp: next,
    compLabel: Int32Array.from(compLabel),
    sizes: Int32Array.from(sizes),
  };
}

/**
 * Merge each 4-connected fragment smaller than step^2/4 into the adjacent
 * label with the largest boundary contact (ties to the lowest label),
 * processing fragments in first-occurrence order. Fragments attach to a
 * specific neighboring component via union-find, so an absorbed fragment
 * follows its host through later merges. Remaining same-label components
 * are split at the end.
 */
export function enforceConnectivity(
  labels: Int32Array, step: number, h: number, w: number,
): LabelMap {
  const { comp, nComp, compLabel, sizes } = connectedComponents(labels, h, w);

  // component pixel lists in row-major order (counting sort by comp id)
  const offsets = new Int32Array(nComp + 1);
  for (let cid = 0; cid < nComp; cid++) offsets[cid + 1] = offsets[cid] + sizes[cid];
  const pixByComp = new Int32Array(h * w);
  const cursor = offsets.slice(0, nComp);
  for (let idx = 0; idx < h * w; idx++) {
    pixByComp[cursor[comp[idx]]++] = idx;
  }

  const parent = new Int32Array(nComp);
  for (let cid = 0; cid < nComp; cid++) parent[cid] = cid;
  const find = (c: number): number => {
    let root = c;
    while (parent[root] !== root) root = parent[root];
    while (parent[c] !== root) {
      const up = parent[c];
      parent[c] = root;
      c = up;
    }
    return root;
  };

  const threshold = step * step;
  const labelContact = new Map<number, number>();
  const rootContact = new Map<number, number>();
  for (let cid = 0; cid < nComp; cid++) {
    if (4 * sizes[cid] >= threshold) continue;
    const own = compLabel[find(cid)];
    labelContact.clear();
    rootContact.clear();
    const lo = offsets[cid];
    const hi = offsets[cid + 1];
    for (const [dr, dc] of [[-1, 0], [1, 0], [0, -1], [0, 1]] as const) {
      for (let p = lo; p < hi; p++) {
        const idx = pixByComp[p];
        const r = ((idx / w) | 0) + dr;
        const c = (idx % w) + dc;
        if (r < 0 || r >= h || c < 0 || c >= w) continue;
        const root = find(comp[r * w + c]);
        const lab = compLabel[root];
        if (lab === own) continue;
        labelContact.set(lab, (labelContact.get(lab) ?? 0) + 1);
        rootContact.set(root, (rootContact.get(root) ?? 0) + 1);
      }
    }
    if (labelContact.size === 0) continue;
    let bestLabel = -1;
    let bestCount = -1;
    for (const [lab, count] of labelContact) {
      if (count > bestCount || (count === bestCount && lab < bestLabel)) {
        bestLabel = lab;
        bestCount = count;
      }
    }
    let target = -1;
    let targetCount = -1;
    for (const [root, count] of rootContact) {
      if (compLabel[root] !== bestLabel) continue;
      if (count > targetCount || (count === targetCount && root < target)) {
        target = root;
        targetCount = count;
      }
    }
    parent[find(cid)] = target;
  }

  const merged = new Int32Array(h * w);
  const rootLabel = new Int32Array(nComp);
  for (let cid = 0; cid < nComp; cid++) rootLabel[cid] = compLabel[find(cid)];
  for (let idx = 0; idx < h * w; idx++) merged[idx] = rootLabel[comp[idx]];
  const fin = connectedComponents(merged, h, w);
  return { labels: fin.comp, width: w, height: h, nRegions: fin.nComp };
}

/**
 * Deterministic SLIC-style segmentation in RGB space.
 *
 * Assignment distance is sqrt(d_rgb^2 + (d_xy/S)^2 * m^2) evaluated in
 * float32 with a fixed operation order; ties go to the lower candidate
 * label. Cluster means use exact integer sums. A connectivity pass merges
 * undersized fragments and renumbers labels by first row-major occurrence.
 */
export function segmentSuperpixels(
  img: RgbImage, nRegions: number, compactness = 10.0, iterations = 10,
): LabelMap {
  validateImage(img);
  const { width: w, height: h, data } = img;
  if (nRegions < 1) throw new Error("invalid parameter: n_regions must be >= 1");
  if (nRegions > h * w) throw new Error("invalid parameter: n_regions exceeds pixel count");
  if (compactness <= 0) throw new Error("invalid parameter: compactness must be positive");
  if (iterations < 1) throw new Error("invalid parameter: iterations must be >= 1");

  const step = Math.max(Math.floor(Math.sqrt((h * w) / nRegions)), 1);
  const { seeds, nRows, nCols } = seedGrid(h, w, nRegions);
  const gradient = gradientMap(boxBlur(img), h, w);
  perturbSeeds(seeds, gradient, h, w);
  const nCenters = seeds.length / 2;

  const img32 = new Float32Array(h * w * 3);
  for (let i = 0; i < img32.length; i++) img32[i] = data[i];
  const centersPos = new Float32Array(nCenters * 2);
  const centersRgb = new Float32Array(nCenters * 3);
  for (let k = 0; k < nCenters; k++) {
    const r = seeds[2 * k];
    const c = seeds[2 * k + 1];
    centersPos[2 * k] = r;
    centersPos[2 * k + 1] = c;
    const p = (r * w + c) * 3;
    centersRgb[3 * k] = data[p];
    centersRgb[3 * k + 1] = data[p + 1];
    centersRgb[3 * k + 2] = data[p + 2];
  }

  const inv = f32(f32(compactness) / f32(step));
  const coef = f32(inv * inv);

  // coverage fallback: seed-grid cell id keeps pixels outside every search
  // window on a valid label
  const labels = new Int32Array(h * w);
  for (let r = 0; r < h; r++) {
    const rowCell = Math.floor((r * nRows) / h);
    for (let c = 0; c < w; c++) {
      labels[r * w + c] = rowCell * nCols + Math.floor((c * nCols) / w);
    }
  }

  const dist = new Float32Array(h * w);
  const dx2Col = new Float32Array(2 * step + 1);
  // stride 6 per center: count, sum r, sum c, sum red, sum green, sum blue
  const stats = new Float64Array(nCenters * 6);

  for (let it = 0; it < iterations; it++) {
    dist.fill(Infinity);
    for (let k = 0; k < nCenters; k++) {
      const cy = centersPos[2 * k];
      const cx = centersPos[2 * k + 1];
      const cr = centersRgb[3 * k];
      const cg = centersRgb[3 * k + 1];
      const cb = centersRgb[3 * k + 2];
      const r0 = Math.max(0, Math.floor(cy) - step);
      const r1 = Math.min(h - 1, Math.floor(cy) + step);
      const c0 = Math.max(0, Math.floor(cx) - step);
      const c1 = Math.min(w - 1, Math.floor(cx) + step);
      if (r0 > r1 || c0 > c1) continue;
      for (let c = c0; c <= c1; c++) {
        const dx = f32(c - cx);
        dx2Col[c - c0] = f32(dx * dx);
      }
      for (let r = r0; r <= r1; r++) {
        const dy = f32(r - cy);
        const dy2 = f32(dy * dy);
        const rowBase = r * w;
        let p = (rowBase + c0) * 3;
        for (let c = c0; c <= c1; c++) {
          let dch = f32(img32[p] - cr);
          let color = f32(dch * dch);
          dch = f32(img32[p + 1] - cg);
          color = f32(color + f32(dch * dch));
          dch = f32(img32[p + 2] - cb);
          color = f32(color + f32(dch * dch));
          p += 3;
          const spatial = f32(dy2 + dx2Col[c - c0]);
          const d = f32(Math.sqrt(f32(color + f32(spatial * coef))));
          const idx = rowBase + c;
          if (d < dist[idx]) {
            // strict: earlier (lower) center keeps ties
            dist[idx] = d;
            labels[idx] = k;
          }
        }
      }
    }

    stats.fill(0);
    for (let r = 0; r < h; r++) {
      const rowBase = r * w;
      for (let c = 0; c < w; c++) {
        const idx = rowBase + c;
        const base = labels[idx] * 6;
        const p = idx * 3;
        stats[base] += 1;
        stats[base + 1] += r;
        stats[base + 2] += c;
        stats[base + 3] += data[p];
        stats[base + 4] += data[p + 1];
        stats[base + 5] += data[p + 2];
      }
    }
    for (let k = 0; k < nCenters; k++) {
      const base = k * 6;
      const count = stats[base];
      if (count <= 0) continue;
      centersPos[2 * k] = f32(stats[base + 1] / count);
      centersPos[2 * k + 1] = f32(stats[base + 2] / count);
      centersRgb[3 * k] = f32(stats[base + 3] / count);
      centersRgb[3 * k + 1] = f32(stats[base + 4] / count);
      centersRgb[3 * k + 2] = f32(stats[base + 5] / count);
    }
  }

  return enforceConnectivity(labels, step, h, w);
}
