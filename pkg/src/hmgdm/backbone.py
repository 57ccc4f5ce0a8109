"""Graph backbone: message-passing encoder over the visible subgraph and the
time-conditioned cross-attention decoder over the noisy masked subgraph.

Vertex features message-pass over the normalized region adjacency; edge
features message-pass over the normalized line graph (edges sharing an
endpoint). The decoder mirrors the encoder depth and consumes the encoder's
per-layer states in reverse order, giving the U-shaped skip pairing.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

STRATEGIES = ("NtoN", "EtoE", "NtoE", "EtoN", "NtoN&EtoE", "NtoE&EtoN")

# stream -> which condition stream it attends to (None = pass through CA)
_STRATEGY_MAP = {
    "NtoN": ("vertex", None),
    "EtoE": (None, "edge"),
    "NtoE": ("edge", None),
    "EtoN": (None, "vertex"),
    "NtoN&EtoE": ("vertex", "edge"),
    "NtoE&EtoN": ("edge", "vertex"),
}


def validate_strategy(strategy: str) -> None:
    if strategy not in _STRATEGY_MAP:
        raise ValueError(
            f"configuration error: unknown strategy {strategy!r}; "
            f"choose one of {STRATEGIES}"
        )


def normalize_adjacency(
    edge_index: np.ndarray, n: int, self_loops: bool = True
) -> np.ndarray:
    """Symmetric degree-normalized adjacency D^(-1/2) A D^(-1/2), dense.

    With self_loops, A+I and its degrees are used. Degree-0 vertices get
    zero rows (0^(-1/2) treated as 0).
    """
    a = np.zeros((n, n), dtype=np.float64)
    edge_index = np.asarray(edge_index, dtype=np.int64).reshape(-1, 2)
    for i, j in edge_index:
        a[i, j] = 1.0
        a[j, i] = 1.0
    if self_loops:
        a = a + np.eye(n)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def line_graph_edges(edge_endpoints: np.ndarray) -> np.ndarray:
    """Adjacency of the edge set itself: positions (p, q), p < q, of edges
    that share an endpoint, sorted lexicographically."""
    ep = np.asarray(edge_endpoints, dtype=np.int64).reshape(-1, 2)
    m = len(ep)
    if m == 0:
        return np.zeros((0, 2), dtype=np.int64)
    # group edge positions by incident vertex; every pair within a group
    # shares that vertex (distinct simple edges share at most one)
    flat = np.concatenate([ep[:, 0], ep[:, 1]])
    pos = np.tile(np.arange(m, dtype=np.int64), 2)
    order = np.argsort(flat, kind="stable")
    flat_s, pos_s = flat[order], pos[order]
    cuts = np.flatnonzero(np.diff(flat_s)) + 1
    pairs = []
    for grp in np.split(pos_s, cuts):
        if len(grp) > 1:
            g = np.sort(grp)
            iu, ju = np.triu_indices(len(g), k=1)
            pairs.append(np.stack([g[iu], g[ju]], axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pairs), axis=0)


def dual_adjacency(
    edge_endpoints: np.ndarray, self_loops: bool = True
) -> np.ndarray:
    """Normalized adjacency of the line graph over the given edge list."""
    ep = np.asarray(edge_endpoints, dtype=np.int64).reshape(-1, 2)
    return normalize_adjacency(line_graph_edges(ep), len(ep), self_loops)


def gcn_layer(x, adj, w, activation=None):
    """One graph convolution: activation(adj @ x @ w), bias-free."""
    if x.shape[1] != w.shape[0]:
        raise ValueError("shape error: feature width does not match weight")
    out = adj @ (x @ w)
    return out if activation is None else activation(out)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding: sin half then cos half over geometric frequencies."""
    if dim % 2 != 0:
        raise ValueError("invalid parameter: embedding dim must be even")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (2.0 * np.arange(half, dtype=np.float64) / dim))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def build_stream_adjacency(sub, self_loops: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(vertex-stream, edge-stream) normalized adjacencies for one split side."""
    adj_v = normalize_adjacency(sub.adj_edge_index, sub.n_vertices, self_loops)
    adj_e = dual_adjacency(sub.edge_endpoints, self_loops)
    return adj_v, adj_e


class CrossAttention(nn.Module):
    """Multi-head softmax(Q K^T / sqrt(d_head)) V with bias-free projections.

    Heads concatenate with no output projection, so a single condition
    element returns exactly its value projection.
    """

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads != 0:
            raise ValueError("configuration error: heads must divide width")
        self.d = d
        self.heads = heads
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)

    def forward(
        self, query: torch.Tensor, cond: torch.Tensor, return_weights: bool = False
    ):
        n_q, n_c = query.shape[0], cond.shape[0]
        if n_c == 0:
            raise ValueError(
                "configuration error: strategy attends to an empty condition stream"
            )
        dh = self.d // self.heads
        q = self.w_q(query).reshape(n_q, self.heads, dh).transpose(0, 1)
        k = self.w_k(cond).reshape(n_c, self.heads, dh).transpose(0, 1)
        v = self.w_v(cond).reshape(n_c, self.heads, dh).transpose(0, 1)
        logits = q @ k.transpose(1, 2) / (dh ** 0.5)
        weights = torch.softmax(logits, dim=-1)  # (heads, n_q, n_c)
        out = (weights @ v).transpose(0, 1).reshape(n_q, self.d)
        if return_weights:
            return out, weights
        return out


class GraphEncoder(nn.Module):
    """L width-preserving message-passing layers over vertex and edge streams;
    all intermediate states are retained for decoder conditioning."""

    def __init__(self, d: int, layers: int):
        super().__init__()
        self.d = d
        self.layers = layers
        self.w_v = nn.ModuleList(
            nn.Linear(d, d, bias=False) for _ in range(layers)
        )
        self.w_e = nn.ModuleList(
            nn.Linear(d, d, bias=False) for _ in range(layers)
        )
        self.act = nn.GELU()

    def forward(
        self,
        v: torch.Tensor,
        e: torch.Tensor,
        adj_v: torch.Tensor,
        adj_e: torch.Tensor,
    ) -> list[tuple[torch.Tensor, torch.Tensor]]:
        states = []
        for layer in range(self.layers):
            v = self.act(adj_v @ self.w_v[layer](v))
            e = self.act(adj_e @ self.w_e[layer](e))
            states.append((v, e))
        return states


class _FeedForward(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))

    def forward(self, x):
        return self.net(x)


class DecoderBlock(nn.Module):
    """Cross-attention (per strategy), graph convolution on the masked-side
    adjacencies, then a layer-normalized feed-forward residual."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.ca_v = CrossAttention(d, heads)
        self.ca_e = CrossAttention(d, heads)
        self.conv_v = nn.Linear(d, d, bias=False)
        self.conv_e = nn.Linear(d, d, bias=False)
        self.ff_v = _FeedForward(d)
        self.ff_e = _FeedForward(d)
        self.ln_v = nn.LayerNorm(d)
        self.ln_e = nn.LayerNorm(d)
        self.act = nn.GELU()

    def forward(self, v, e, cond_v, cond_e, adj_v, adj_e, temb, strategy: str):
        v_target, e_target = _STRATEGY_MAP[strategy]
        conds = {
            "vertex": cond_v + temb if cond_v.shape[0] else cond_v,
            "edge": cond_e + temb if cond_e.shape[0] else cond_e,
        }
        if v_target is not None and v.shape[0] > 0:
            v = v + self.ca_v(v, conds[v_target])
        if e_target is not None and e.shape[0] > 0:
            e = e + self.ca_e(e, conds[e_target])
        v = self.act(adj_v @ self.conv_v(v))
        e = self.act(adj_e @ self.conv_e(e))
        v = self.ln_v(v + self.ff_v(v))
        e = self.ln_e(e + self.ff_e(e))
        return v, e


class DiffusionDecoder(nn.Module):
    def __init__(self, d: int, layers: int, heads: int, strategy: str):
        super().__init__()
        validate_strategy(strategy)
        self.d = d
        self.layers = layers
        self.strategy = strategy
        self.blocks = nn.ModuleList(DecoderBlock(d, heads) for _ in range(layers))

    def forward(self, v, e, t: int, states, adj_v, adj_e):
        """Blocks consume encoder states deepest-first (U-shaped pairing)."""
        if len(states) != self.layers:
            raise ValueError(
                f"configuration error: expected {self.layers} condition states, "
                f"got {len(states)}"
            )
        self._check_streams(states)
        temb = torch.as_tensor(
            time_embedding(t, self.d), dtype=v.dtype, device=v.device
        )
        for idx, block in enumerate(self.blocks):
            cond_v, cond_e = states[self.layers - 1 - idx]
            v, e = block(v, e, cond_v, cond_e, adj_v, adj_e, temb, self.strategy)
        return v, e

    def _check_streams(self, states) -> None:
        v_target, e_target = _STRATEGY_MAP[self.strategy]
        needed = {s for s in (v_target, e_target) if s is not None}
        cond_v, cond_e = states[0]
        if "vertex" in needed and cond_v.shape[0] == 0:
            raise ValueError(
                "configuration error: strategy "
                f"{self.strategy!r} needs visible vertices, none present"
            )
        if "edge" in needed and cond_e.shape[0] == 0:
            raise ValueError(
                "configuration error: strategy "
                f"{self.strategy!r} needs visible edges, none present"
            )


class DiffusionModel(nn.Module):
    """Encoder + decoder pair with the architecture manifest needed to
    rebuild it from a checkpoint."""

    def __init__(
        self,
        d: int,
        layers: int = 4,
        heads: int = 4,
        strategy: str = "NtoN&EtoE",
        self_loops: bool = True,
    ):
        super().__init__()
        validate_strategy(strategy)
        self.d = d
        self.layers = layers
        self.heads = heads
        self.strategy = strategy
        self.self_loops = self_loops
        self.encoder = GraphEncoder(d, layers)
        self.decoder = DiffusionDecoder(d, layers, heads, strategy)

    def manifest(self) -> dict:
        return {
            "d": self.d,
            "layers": self.layers,
            "heads": self.heads,
            "strategy": self.strategy,
            "self_loops": self.self_loops,
        }

    def forward(
        self,
        cond_v: torch.Tensor,
        cond_e: torch.Tensor,
        adj_cond_v: torch.Tensor,
        adj_cond_e: torch.Tensor,
        noisy_v: torch.Tensor,
        noisy_e: torch.Tensor,
        adj_tgt_v: torch.Tensor,
        adj_tgt_e: torch.Tensor,
        t: int,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        states = self.encoder(cond_v, cond_e, adj_cond_v, adj_cond_e)
        return self.decoder(noisy_v, noisy_e, t, states, adj_tgt_v, adj_tgt_e)


def save_backbone(path, model: DiffusionModel) -> None:
    torch.save(
        {"state_dict": model.state_dict(), "manifest": model.manifest()}, path
    )


def load_backbone(path) -> DiffusionModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = DiffusionModel(**blob["manifest"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def as_tensor(arr: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)
