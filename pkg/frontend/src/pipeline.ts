/** Full graph construction: segment, adjacency, tiles, bundle. */

import { bundleBytes, type GraphBundle } from "./bundle.js";
import {
  buildAdjacency,
  extractEdgeTiles,
  extractVertexTiles,
  regionCentroids,
} from "./graph.js";
import { segmentSuperpixels, type RgbImage } from "./slic.js";

export interface KernelConfig {
  nRegions: number;
  compactness: number;
  iterations: number;
  tile: number;
  dilationRadius: number;
}

export const DEFAULT_CONFIG: KernelConfig = {
  nRegions: 500,
  compactness: 10.0,
  iterations: 10,
  tile: 64,
  dilationRadius: 2,
};

export function constructGraph(img: RgbImage, config: KernelConfig): GraphBundle {
  const map = segmentSuperpixels(img, config.nRegions, config.compactness, config.iterations);
  const adj = buildAdjacency(map);
  const centroids = regionCentroids(map);
  const vertexTiles = extractVertexTiles(img, map, config.tile, centroids);
  const edgeTiles = extractEdgeTiles(img, map, adj, config.tile, config.dilationRadius);
  return {
    nVertices: map.nRegions,
    nEdges: adj.nEdges,
    tile: config.tile,
    vertexTiles,
    edgeTiles,
    edgeIndex: adj.edges,
    centroids,
  };
}

export function constructGraphBytes(img: RgbImage, config: KernelConfig): Buffer {
  return bundleBytes(constructGraph(img, config));
}
