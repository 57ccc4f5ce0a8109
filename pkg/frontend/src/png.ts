/** PNG decoding to packed 8-bit RGB. */

import { PNG } from "pngjs";

import type { RgbImage } from "./slic.js";

/**
 * Decode a PNG buffer to an RgbImage. pngjs normalizes every color type
 * and bit depth to 8-bit RGBA; the alpha channel is dropped.
 */
export function decodePng(raw: Buffer): RgbImage {
  const png = PNG.sync.read(raw);
  const n = png.width * png.height;
  const data = new Uint8Array(n * 3);
  for (let p = 0; p < n; p++) {
    data[3 * p] = png.data[4 * p];
    data[3 * p + 1] = png.data[4 * p + 1];
    data[3 * p + 2] = png.data[4 * p + 2];
  }
  return { width: png.width, height: png.height, data };
}
