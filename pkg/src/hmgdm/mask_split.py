"""Random complementary division of a latent graph into a visible condition
subgraph and a masked target subgraph.

Vertices and edges are sampled independently at the same ratio, uniformly
without replacement. Counts follow round-half-up of ratio times population,
with the vertex count clamped so both sides stay non-empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MaskSplit:
    vertex_mask: np.ndarray  # bool per vertex, True = masked (target side)
    edge_mask: np.ndarray  # bool per edge
    r_m: float
    seed: int


@dataclass
class SubLatentGraph:
    """One side of a split: latent features plus restricted topology.

    vertex_ids / edge_ids index into the parent graph (ascending).
    edge_endpoints carries the parent endpoint pair of each member edge
    feature, used to build the line-graph adjacency of the edge stream.
    adj_edge_index / degrees describe the vertex-stream adjacency in local
    indices: parent edges with both endpoints inside this side.
    """

    vertex_latents: np.ndarray
    edge_latents: np.ndarray
    vertex_ids: np.ndarray
    edge_ids: np.ndarray
    edge_endpoints: np.ndarray  # (k_e, 2) parent vertex ids
    adj_edge_index: np.ndarray  # (m, 2) local vertex ids
    degrees: np.ndarray  # (k_v,)

    @property
    def n_vertices(self) -> int:
        return int(len(self.vertex_ids))

    @property
    def n_edges(self) -> int:
        return int(len(self.edge_ids))


def masked_count(r_m: float, n: int, clamp_lo: int, clamp_hi: int) -> int:
    """round(r_m * n) with half-up rounding, clamped to [clamp_lo, clamp_hi]."""
    k = int(math.floor(r_m * n + 0.5))
    return min(max(k, clamp_lo), clamp_hi)


def restrict_adjacency(
    edge_index: np.ndarray, degrees: np.ndarray, kept: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep only edges with both endpoints in `kept`.

    Returns (sub_edge_index in local ids, sub_degrees, remap) where
    remap[old_id] = local id for kept vertices and -1 elsewhere.
    """
    kept = np.asarray(sorted(int(v) for v in kept), dtype=np.int64)
    if len(kept) == 0:
        raise ValueError("invalid input: kept vertex set is empty")
    n = len(degrees)
    remap = np.full(n, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept), dtype=np.int64)
    edge_index = np.asarray(edge_index, dtype=np.int64).reshape(-1, 2)
    keep_edge = (remap[edge_index[:, 0]] >= 0) & (remap[edge_index[:, 1]] >= 0)
    sub = remap[edge_index[keep_edge]]
    sub_degrees = np.zeros(len(kept), dtype=np.int64)
    for col in (0, 1):
        np.add.at(sub_degrees, sub[:, col], 1)
    return sub.astype(np.int64), sub_degrees, remap


def _take_side(graph, vertex_ids: np.ndarray, edge_ids: np.ndarray) -> SubLatentGraph:
    edge_index = np.asarray(graph.edge_index, dtype=np.int64).reshape(-1, 2)
    sub_adj, sub_deg, _ = restrict_adjacency(edge_index, graph.degrees, vertex_ids)
    return SubLatentGraph(
        vertex_latents=graph.vertex_latents[vertex_ids],
        edge_latents=graph.edge_latents[edge_ids],
        vertex_ids=vertex_ids,
        edge_ids=edge_ids,
        edge_endpoints=edge_index[edge_ids],
        adj_edge_index=sub_adj,
        degrees=sub_deg,
    )


def split_graph(
    graph, r_m: float, seed: int
) -> tuple[SubLatentGraph, SubLatentGraph, MaskSplit]:
    """Split into (visible G_e, masked G_d, MaskSplit). Deterministic per seed."""
    if not 0.0 < r_m < 1.0:
        raise ValueError("invalid parameter: r_m must lie in (0, 1)")
    n_v = int(graph.vertex_latents.shape[0])
    n_e = int(graph.edge_latents.shape[0])
    if n_v < 2:
        raise ValueError("invalid input: need at least 2 vertices to split")
    rng = np.random.default_rng(seed)
    k_v = masked_count(r_m, n_v, 1, n_v - 1)
    k_e = masked_count(r_m, n_e, 0, n_e)
    masked_v = np.sort(rng.choice(n_v, size=k_v, replace=False))
    masked_e = (
        np.sort(rng.choice(n_e, size=k_e, replace=False))
        if n_e > 0
        else np.zeros(0, dtype=np.int64)
    )
    vertex_mask = np.zeros(n_v, dtype=bool)
    vertex_mask[masked_v] = True
    edge_mask = np.zeros(n_e, dtype=bool)
    edge_mask[masked_e] = True
    visible_v = np.flatnonzero(~vertex_mask)
    visible_e = np.flatnonzero(~edge_mask)
    g_e = _take_side(graph, visible_v, visible_e)
    g_d = _take_side(graph, np.flatnonzero(vertex_mask), np.flatnonzero(edge_mask))
    return g_e, g_d, MaskSplit(vertex_mask, edge_mask, float(r_m), int(seed))


def pack_mask(mask: np.ndarray) -> bytes:
    return np.packbits(mask.astype(np.uint8)).tobytes()


def unpack_mask(blob: bytes, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=n)
    return bits.astype(bool)
