export {
  boxBlur,
  gradientMap,
  segmentSuperpixels,
  type LabelMap,
  type RgbImage,
} from "./slic.js";
export {
  buildAdjacency,
  extractEdgeTiles,
  extractVertexTiles,
  regionCentroids,
  windowOrigin,
} from "./graph.js";
export { bundleBytes, readBundle, type GraphBundle } from "./bundle.js";
export { decodePng } from "./png.js";
export {
  constructGraph,
  constructGraphBytes,
  DEFAULT_CONFIG,
  type KernelConfig,
} from "./pipeline.js";
export { runBatch } from "./pool.js";
