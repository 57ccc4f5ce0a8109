/**
 * Little-endian graph bundle serialization (.hmgg).
 *
 * Layout: 4-byte magic "HMG1", then u32 version, u32 n_vertices,
 * u32 n_edges, u32 tile side, u8 channels (= 3), then vertex tiles,
 * edge tiles, edge index pairs as u32, centroids as f32 (row, col).
 */

export const BUNDLE_MAGIC = "HMG1";
export const BUNDLE_VERSION = 1;

const HEADER_LEN = 4 + 17;

export interface GraphBundle {
  nVertices: number;
  nEdges: number;
  tile: number;
  vertexTiles: Uint8Array; // nVertices * tile * tile * 3
  edgeTiles: Uint8Array; // nEdges * tile * tile * 3
  edgeIndex: Uint32Array; // flat pairs, i < j, sorted
  centroids: Float32Array; // flat (row, col) per vertex
}

export function bundleBytes(g: GraphBundle): Buffer {
  const vtLen = g.nVertices * g.tile * g.tile * 3;
  const etLen = g.nEdges * g.tile * g.tile * 3;
  const buf = Buffer.alloc(HEADER_LEN + vtLen + etLen + g.nEdges * 8 + g.nVertices * 8);
  buf.write(BUNDLE_MAGIC, 0, "ascii");
  buf.writeUInt32LE(BUNDLE_VERSION, 4);
  buf.writeUInt32LE(g.nVertices, 8);
  buf.writeUInt32LE(g.nEdges, 12);
  buf.writeUInt32LE(g.tile, 16);
  buf.writeUInt8(3, 20);
  let off = HEADER_LEN;
  buf.set(g.vertexTiles.subarray(0, vtLen), off);
  off += vtLen;
  buf.set(g.edgeTiles.subarray(0, etLen), off);
  off += etLen;
  for (let e = 0; e < g.nEdges * 2; e++) {
    buf.writeUInt32LE(g.edgeIndex[e], off);
    off += 4;
  }
  for (let v = 0; v < g.nVertices * 2; v++) {
    buf.writeFloatLE(g.centroids[v], off);
    off += 4;
  }
  return buf;
}

export function readBundle(raw: Buffer): GraphBundle {
  if (raw.length < HEADER_LEN || raw.toString("ascii", 0, 4) !== BUNDLE_MAGIC) {
    throw new Error("invalid bundle: bad magic");
  }
  const version = raw.readUInt32LE(4);
  const nVertices = raw.readUInt32LE(8);
  const nEdges = raw.readUInt32LE(12);
  const tile = raw.readUInt32LE(16);
  const channels = raw.readUInt8(20);
  if (version !== BUNDLE_VERSION || channels !== 3) {
    throw new Error("invalid bundle: unsupported version/channels");
  }
  const vtLen = nVertices * tile * tile * 3;
  const etLen = nEdges * tile * tile * 3;
  if (raw.length !== HEADER_LEN + vtLen + etLen + nEdges * 8 + nVertices * 8) {
    throw new Error("invalid bundle: truncated payload");
  }
  let off = HEADER_LEN;
  const vertexTiles = new Uint8Array(raw.subarray(off, off + vtLen));
  off += vtLen;
  const edgeTiles = new Uint8Array(raw.subarray(off, off + etLen));
  off += etLen;
  const edgeIndex = new Uint32Array(nEdges * 2);
  for (let e = 0; e < nEdges * 2; e++) {
    edgeIndex[e] = raw.readUInt32LE(off);
    off += 4;
  }
  const centroids = new Float32Array(nVertices * 2);
  for (let v = 0; v < nVertices * 2; v++) {
    centroids[v] = raw.readFloatLE(off);
    off += 4;
  }
  return { nVertices, nEdges, tile, vertexTiles, edgeTiles, edgeIndex, centroids };
}
