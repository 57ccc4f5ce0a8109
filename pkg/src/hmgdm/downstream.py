"""Downstream use of a pretrained backbone: whole-graph embeddings, a
classification head, and a Cox proportional-hazards head.

Inference never touches the decoder: the full unmasked graph runs through
all encoder layers and a permutation-invariant readout pools the final
vertex states into one embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import (
    DiffusionModel,
    as_tensor,
    dual_adjacency,
    normalize_adjacency,
)
from .entity_graph import GraphParams, build_entity_graph
from .latent_codec import LatentGraph, TileVAE, encode_graph

READOUT_MODES = ("mean", "max", "sum", "attention")


@dataclass
class GraphEmbedding:
    vector: np.ndarray
    source_id: str = ""


@dataclass
class SurvivalRecord:
    time: float
    event: int
    risk: float = float("nan")

    def __post_init__(self):
        if self.time <= 0:
            raise ValueError("invalid input: survival time must be positive")
        if self.event not in (0, 1):
            raise ValueError("invalid input: event must be 0 or 1")


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    times = np.array([r.time for r in records], dtype=np.float64)
    events = np.array([r.event for r in records], dtype=np.int64)
    risks = np.array([r.risk for r in records], dtype=np.float64)
    return risks, times, events


def readout(vertex_latents, mode: str = "mean", score_vector=None):
    """Pool per-vertex latents to one vector.

    attention mode softmax-weights vertices by a learned scoring vector;
    a zero vector gives uniform weights, which equals mean pooling.
    Returns (pooled, weights) where weights is None except in attention mode.
    """
    if mode not in READOUT_MODES:
        raise ValueError(f"invalid parameter: unknown readout mode {mode!r}")
    x = vertex_latents
    if x.shape[0] < 1:
        raise ValueError("invalid input: readout needs at least one vertex")
    torch_in = isinstance(x, torch.Tensor)
    if not torch_in:
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if mode == "mean":
        out, weights = x.mean(dim=0), None
    elif mode == "sum":
        out, weights = x.sum(dim=0), None
    elif mode == "max":
        out, weights = x.max(dim=0).values, None
    else:
        if score_vector is None:
            score_vector = torch.zeros(x.shape[1], dtype=x.dtype)
        elif not isinstance(score_vector, torch.Tensor):
            score_vector = torch.as_tensor(
                np.asarray(score_vector), dtype=x.dtype
            )
        weights = torch.softmax(x @ score_vector, dim=0)
        out = weights @ x
    if torch_in:
        return out, weights
    return out.numpy(), None if weights is None else weights.numpy()


def final_vertex_states(lg: LatentGraph, model: DiffusionModel) -> np.ndarray:
    """Per-vertex states after the last encoder layer of the unmasked graph."""
    if lg.width != model.d:
        raise ValueError(
            f"shape error: graph width {lg.width} != model width {model.d}"
        )
    dtype = next(model.parameters()).dtype
    n_v = lg.vertex_latents.shape[0]
    adj_v = normalize_adjacency(lg.edge_index, n_v, model.self_loops)
    adj_e = dual_adjacency(lg.edge_index, model.self_loops)
    with torch.no_grad():
        states = model.encoder(
            as_tensor(lg.vertex_latents, dtype),
            as_tensor(lg.edge_latents, dtype),
            as_tensor(adj_v, dtype),
            as_tensor(adj_e, dtype),
        )
    return states[-1][0].numpy().astype(np.float64)


def embed_graph(
    lg: LatentGraph,
    model: DiffusionModel,
    mode: str = "mean",
    score_vector=None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Full-graph encoder pass (no mask, no decoder) followed by readout.

    Returns (embedding, attention weights or None).
    """
    final_v = final_vertex_states(lg, model)
    pooled, weights = readout(final_v, mode, score_vector)
    return pooled, weights


def embed_inference(
    image: np.ndarray,
    codec: TileVAE,
    model: DiffusionModel,
    params: GraphParams,
    mode: str = "mean",
    score_vector=None,
) -> np.ndarray:
    """Image patch -> entity graph -> latents -> encoder -> embedding."""
    graph = build_entity_graph(image, params)
    lg = encode_graph(codec, graph)
    emb, _ = embed_graph(lg, model, mode, score_vector)
    return emb


def ce_loss(logits, labels):
    """Softmax cross-entropy averaged over the batch."""
    numpy_in = isinstance(logits, np.ndarray)
    if numpy_in:
        logits = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if logits.dim() != 2 or labels.dim() != 1 or logits.shape[0] != labels.shape[0]:
        raise ValueError("invalid input: need (B, C) logits and (B,) labels")
    n_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("invalid input: label outside [0, C)")
    logz = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    loss = -logz[torch.arange(len(labels)), labels].mean()
    return float(loss) if numpy_in else loss


def cox_loss(risks, times, events):
    """Negative log partial likelihood, mean over events.

    Risk set of subject i is everyone with t_j >= t_i (Breslow handling of
    ties; the subject's own term included).
    """
    numpy_in = not isinstance(risks, torch.Tensor)
    if numpy_in:
        risks = torch.as_tensor(np.asarray(risks, dtype=np.float64))
    times_t = torch.as_tensor(np.asarray(times, dtype=np.float64))
    events_t = torch.as_tensor(np.asarray(events, dtype=np.int64))
    if not torch.isfinite(risks).all():
        raise ValueError("numeric error: non-finite risk scores")
    event_idx = torch.nonzero(events_t == 1).flatten()
    if event_idx.numel() == 0:
        raise ValueError("undefined loss: no events in cohort")
    # in_set[i, j] = subject j is at risk when subject i's event occurs
    in_set = times_t[None, :] >= times_t[:, None]
    logits = torch.where(
        in_set, risks[None, :].expand(len(times_t), -1),
        torch.tensor(-torch.inf, dtype=risks.dtype),
    )
    lse = torch.logsumexp(logits, dim=1)
    contrib = risks[event_idx] - lse[event_idx]
    loss = -contrib.mean()
    return float(loss) if numpy_in else loss


class ClassifierHead(nn.Module):
    def __init__(self, d: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, n_classes)
        )

    def forward(self, x):
        return self.net(x)


class CoxHead(nn.Module):
    def __init__(self, d: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, 1)
        )

    def forward(self, x):
        return self.net(x).squeeze(-1)


@dataclass
class HeadConfig:
    epochs: int = 300
    lr: float = 3e-3
    hidden: int = 64
    seed: int = 0


def finetune_head(
    embeddings: np.ndarray,
    targets,
    kind: str,
    config: HeadConfig | None = None,
    log=None,
):
    """Train a single-hidden-layer head on frozen embeddings.

    kind 'classify' expects integer labels; kind 'survival' expects
    (times, events) arrays or SurvivalRecord list. Returns (head, trace)
    with one trace entry per epoch.
    """
    config = config or HeadConfig()
    embeddings = np.asarray(embeddings, dtype=np.float64)
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    x = torch.as_tensor(embeddings, dtype=torch.float32)
    if kind == "classify":
        labels = np.asarray(targets, dtype=np.int64)
        if len(labels) != len(embeddings):
            raise ValueError("invalid input: label count != embedding count")
        n_classes = int(labels.max()) + 1
        head = ClassifierHead(embeddings.shape[1], n_classes, config.hidden)
        y = torch.as_tensor(labels)
    elif kind == "survival":
        if hasattr(targets[0], "time"):
            _, times, events = records_to_arrays(targets)
        else:
            times, events = (np.asarray(a) for a in targets)
        if len(times) != len(embeddings):
            raise ValueError("invalid input: record count != embedding count")
        head = CoxHead(embeddings.shape[1], config.hidden)
    else:
        raise ValueError(f"invalid parameter: unknown head kind {kind!r}")

    optimizer = torch.optim.Adam(head.parameters(), lr=config.lr)
    trace = []
    for epoch in range(config.epochs):
        out = head(x)
        if kind == "classify":
            loss = ce_loss(out, y)
            metric = float((out.argmax(dim=1) == y).double().mean())
        else:
            loss = cox_loss(out, times, events)
            metric = float("nan")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trace.append({"epoch": epoch, "loss": float(loss.detach()), "metric": metric})
        if log and (epoch % 50 == 0 or epoch == config.epochs - 1):
            log(f"head epoch {epoch}: loss {float(loss.detach()):.6f}")
    head.eval()
    return head, trace


class AttentionPool(nn.Module):
    """Learned scoring vector for attention readout. Zero initialization
    gives uniform weights, i.e. mean pooling, before training."""

    def __init__(self, d: int):
        super().__init__()
        self.score = nn.Parameter(torch.zeros(d))

    def forward(self, vertex_states: torch.Tensor):
        weights = torch.softmax(vertex_states @ self.score, dim=0)
        return weights @ vertex_states, weights


def finetune_with_attention_pool(
    vertex_states: list,
    targets,
    kind: str,
    config: HeadConfig | None = None,
    log=None,
):
    """Jointly train the attention scoring vector and the head on per-graph
    vertex states (variable sizes). Returns (pool, head, trace)."""
    config = config or HeadConfig()
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    states = [torch.as_tensor(np.asarray(s), dtype=torch.float32) for s in vertex_states]
    d = states[0].shape[1]
    pool = AttentionPool(d)
    if kind == "classify":
        labels = np.asarray(targets, dtype=np.int64)
        n_classes = int(labels.max()) + 1
        head = ClassifierHead(d, n_classes, config.hidden)
        y = torch.as_tensor(labels)
    elif kind == "survival":
        if hasattr(targets[0], "time"):
            _, times, events = records_to_arrays(targets)
        else:
            times, events = (np.asarray(a) for a in targets)
        head = CoxHead(d, config.hidden)
    else:
        raise ValueError(f"invalid parameter: unknown head kind {kind!r}")
    optimizer = torch.optim.Adam(
        list(pool.parameters()) + list(head.parameters()), lr=config.lr
    )
    trace = []
    for epoch in range(config.epochs):
        pooled = torch.stack([pool(s)[0] for s in states])
        out = head(pooled)
        if kind == "classify":
            loss = ce_loss(out, y)
            metric = float((out.argmax(dim=1) == y).double().mean())
        else:
            loss = cox_loss(out, times, events)
            metric = float("nan")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trace.append({"epoch": epoch, "loss": float(loss.detach()), "metric": metric})
        if log and (epoch % 50 == 0 or epoch == config.epochs - 1):
            log(f"head epoch {epoch}: loss {float(loss.detach()):.6f}")
    pool.eval()
    head.eval()
    return pool, head, trace


def save_head(path, head: nn.Module, kind: str, meta: dict, score_vector=None) -> None:
    blob = {"state_dict": head.state_dict(), "kind": kind, "meta": meta}
    if score_vector is not None:
        blob["score_vector"] = torch.as_tensor(np.asarray(score_vector))
    torch.save(blob, path)


def load_head(path):
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = blob["meta"]
    if blob["kind"] == "classify":
        head = ClassifierHead(meta["d"], meta["n_classes"], meta["hidden"])
    else:
        head = CoxHead(meta["d"], meta["hidden"])
    head.load_state_dict(blob["state_dict"])
    head.eval()
    score = blob.get("score_vector")
    if score is not None:
        score = score.numpy().astype(np.float64)
    return head, blob["kind"], meta, score
