"""Two-stage pretraining.

Stage 1 fits the tile codec on entity tiles. Stage 2 trains the graph
backbone to predict clean masked latents from their noised versions,
conditioned on the visible subgraph. Both loops are single-threaded and
deterministic for a fixed seed; all randomness (step t, masks, noise) is
drawn from one numpy generator whose state is checkpointed for resume.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .backbone import DiffusionModel, as_tensor, build_stream_adjacency, _STRATEGY_MAP
from .diffusion import NoiseSchedule, forward_noise, make_schedule, simple_loss
from .latent_codec import CodecConfig, LatentGraph, TileVAE, tiles_to_tensor, vae_loss
from .mask_split import split_graph


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 3e-4
    min_lr: float = 1e-5
    epochs_stage1: int = 30
    epochs_stage2: int = 250
    T: int = 1000
    beta_min: float = 1e-7
    beta_max: float = 2e-3
    schedule_kind: str = "sigmoid"
    r_m: float = 0.6
    seed: int = 0
    strategy: str = "NtoN&EtoE"
    layers: int = 4
    heads: int = 4
    self_loops: bool = True
    plateau_patience: int = 10
    plateau_factor: float = 0.5

    def __post_init__(self):
        if min(self.batch_size, self.epochs_stage1, self.epochs_stage2) < 1:
            raise ValueError("invalid config: counts must be positive")
        if min(self.lr, self.min_lr) <= 0 or self.T < 1:
            raise ValueError("invalid config: rates and T must be positive")
        if not 0.0 < self.r_m < 1.0:
            raise ValueError("invalid config: r_m must lie in (0, 1)")

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_min, self.beta_max, self.schedule_kind)


@dataclass
class TraceEntry:
    epoch: int
    loss: float
    lr: float
    extra: dict = field(default_factory=dict)


def train_stage1(
    tiles: np.ndarray,
    codec_config: CodecConfig,
    config: TrainConfig,
    log=None,
) -> tuple[TileVAE, list[TraceEntry]]:
    """Fit the tile codec with the reparameterized VAE objective."""
    if len(tiles) == 0:
        raise ValueError("invalid input: empty tile corpus")
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    codec = TileVAE(codec_config)
    optimizer = torch.optim.Adam(codec.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    order_rng = np.random.default_rng(config.seed)
    trace: list[TraceEntry] = []
    for epoch in range(config.epochs_stage1):
        perm = order_rng.permutation(len(tiles))
        epoch_loss, epoch_rec, epoch_kl, batches = 0.0, 0.0, 0.0, 0
        for start in range(0, len(tiles), config.batch_size):
            x = tiles_to_tensor(tiles[perm[start : start + config.batch_size]])
            mu, logvar = codec.encode(x)
            eps = torch.randn(mu.shape, generator=gen)
            z = mu + torch.exp(0.5 * logvar) * eps
            x_hat = codec.decode(z)
            total, rec, kl = vae_loss(x, x_hat, mu, logvar, codec_config.lam)
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"training aborted: non-finite loss at epoch {epoch}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            epoch_loss += float(total.detach())
            epoch_rec += float(rec.detach())
            epoch_kl += float(kl.detach())
            batches += 1
        entry = TraceEntry(
            epoch=epoch,
            loss=epoch_loss / batches,
            lr=config.lr,
            extra={"rec": epoch_rec / batches, "kl": epoch_kl / batches},
        )
        trace.append(entry)
        if log:
            log(f"stage1 epoch {epoch}: loss {entry.loss:.6f}")
    codec.eval()
    return codec, trace


def _strategy_needs(strategy: str) -> set:
    return {s for s in _STRATEGY_MAP[strategy] if s is not None}


def pretrain_step(
    graphs: list[LatentGraph],
    model: DiffusionModel,
    schedule: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    r_m: float,
    rng: np.random.Generator,
) -> float | None:
    """One optimization step over a batch of graphs.

    Each graph gets a fresh mask and its own uniformly drawn t in {1..T};
    per-graph losses average into one gradient step. Graphs that cannot be
    split (N_V < 2) or whose visible side lacks a stream the strategy needs
    are skipped with a warning. Returns the batch loss, or None if every
    graph was skipped.
    """
    needs = _strategy_needs(model.strategy)
    dtype = next(model.parameters()).dtype
    losses = []
    for lg in graphs:
        if lg.vertex_latents.shape[0] < 2:
            warnings.warn("skipping degenerate graph with N_V < 2")
            continue
        if lg.width != model.d:
            raise ValueError(
                f"shape error: graph width {lg.width} != model width {model.d}"
            )
        t = int(rng.integers(1, schedule.T + 1))
        seed = int(rng.integers(0, 2**31 - 1))
        g_e, g_d, _ = split_graph(lg, r_m, seed)
        if "edge" in needs and g_e.n_edges == 0:
            warnings.warn("skipping graph: strategy needs visible edges, none left")
            continue
        eps_v = rng.standard_normal(g_d.vertex_latents.shape)
        eps_e = rng.standard_normal(g_d.edge_latents.shape)
        noisy = forward_noise(
            g_d.vertex_latents.astype(np.float64),
            g_d.edge_latents.astype(np.float64),
            t,
            schedule,
            noise=(eps_v, eps_e),
        )
        adj_ev, adj_ee = build_stream_adjacency(g_e, model.self_loops)
        adj_dv, adj_de = build_stream_adjacency(g_d, model.self_loops)
        pred_v, pred_e = model(
            as_tensor(g_e.vertex_latents, dtype),
            as_tensor(g_e.edge_latents, dtype),
            as_tensor(adj_ev, dtype),
            as_tensor(adj_ee, dtype),
            as_tensor(noisy.vertex_latents, dtype),
            as_tensor(noisy.edge_latents, dtype),
            as_tensor(adj_dv, dtype),
            as_tensor(adj_de, dtype),
            t,
        )
        losses.append(
            simple_loss(
                pred_v,
                pred_e,
                as_tensor(g_d.vertex_latents, dtype),
                as_tensor(g_d.edge_latents, dtype),
            )
        )
    if not losses:
        return None
    batch_loss = torch.stack(losses).mean()
    if not torch.isfinite(batch_loss):
        raise RuntimeError("training aborted: non-finite pretraining loss")
    optimizer.zero_grad()
    batch_loss.backward()
    optimizer.step()
    return float(batch_loss.detach())


def train_stage2(
    graphs: list[LatentGraph],
    config: TrainConfig,
    model: DiffusionModel | None = None,
    resume: dict | None = None,
    on_epoch=None,
    log=None,
) -> tuple[DiffusionModel, list[TraceEntry]]:
    """Masked-graph denoising pretraining with plateau learning-rate decay."""
    if len(graphs) == 0:
        raise ValueError("invalid input: empty graph corpus")
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    width = graphs[0].width
    if model is None:
        model = DiffusionModel(
            d=width,
            layers=config.layers,
            heads=config.heads,
            strategy=config.strategy,
            self_loops=config.self_loops,
        )
    model.train()
    schedule = config.schedule()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        min_lr=config.min_lr,
    )
    rng = np.random.default_rng(config.seed)
    trace: list[TraceEntry] = []
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(resume["model"])
        optimizer.load_state_dict(resume["optimizer"])
        scheduler.load_state_dict(resume["scheduler"])
        rng.bit_generator.state = resume["np_rng_state"]
        torch.set_rng_state(resume["torch_rng_state"])
        trace = [TraceEntry(**e) for e in resume["trace"]]
        start_epoch = resume["epoch"] + 1

    for epoch in range(start_epoch, config.epochs_stage2):
        perm = rng.permutation(len(graphs))
        losses = []
        for start in range(0, len(graphs), config.batch_size):
            batch = [graphs[i] for i in perm[start : start + config.batch_size]]
            val = pretrain_step(batch, model, schedule, optimizer, config.r_m, rng)
            if val is not None:
                losses.append(val)
        epoch_loss = float(np.mean(losses)) if losses else float("nan")
        scheduler.step(epoch_loss)
        entry = TraceEntry(
            epoch=epoch,
            loss=epoch_loss,
            lr=float(optimizer.param_groups[0]["lr"]),
        )
        trace.append(entry)
        if log:
            log(f"stage2 epoch {epoch}: loss {entry.loss:.6f} lr {entry.lr:.2e}")
        if on_epoch:
            on_epoch(
                epoch,
                {
                    "model": model.state_dict(),
                    "manifest": model.manifest(),
                    "optimizer": optimizer.state_dict(),
                    "scheduler": scheduler.state_dict(),
                    "np_rng_state": rng.bit_generator.state,
                    "torch_rng_state": torch.get_rng_state(),
                    "trace": [asdict(e) for e in trace],
                    "epoch": epoch,
                },
            )
    model.eval()
    return model, trace


def rmse_vs_t(
    model: DiffusionModel,
    schedule: NoiseSchedule,
    graphs: list[LatentGraph],
    t_grid: list[int],
    r_m: float,
    seed: int = 0,
) -> list[dict]:
    """Denoising RMSE per t, averaged over graphs.

    Masks and noise derive from (seed, t, graph index) only, so two models
    evaluated with the same arguments see identical targets.
    """
    needs = _strategy_needs(model.strategy)
    dtype = next(model.parameters()).dtype
    rows = []
    with torch.no_grad():
        for t in t_grid:
            per_graph = []
            for gi, lg in enumerate(graphs):
                if lg.vertex_latents.shape[0] < 2:
                    continue
                item_rng = np.random.default_rng([seed, t, gi])
                split_seed = int(item_rng.integers(0, 2**31 - 1))
                g_e, g_d, _ = split_graph(lg, r_m, split_seed)
                if "edge" in needs and g_e.n_edges == 0:
                    continue
                eps_v = item_rng.standard_normal(g_d.vertex_latents.shape)
                eps_e = item_rng.standard_normal(g_d.edge_latents.shape)
                noisy = forward_noise(
                    g_d.vertex_latents.astype(np.float64),
                    g_d.edge_latents.astype(np.float64),
                    t,
                    schedule,
                    noise=(eps_v, eps_e),
                )
                adj_ev, adj_ee = build_stream_adjacency(g_e, model.self_loops)
                adj_dv, adj_de = build_stream_adjacency(g_d, model.self_loops)
                pred_v, pred_e = model(
                    as_tensor(g_e.vertex_latents, dtype),
                    as_tensor(g_e.edge_latents, dtype),
                    as_tensor(adj_ev, dtype),
                    as_tensor(adj_ee, dtype),
                    as_tensor(noisy.vertex_latents, dtype),
                    as_tensor(noisy.edge_latents, dtype),
                    as_tensor(adj_dv, dtype),
                    as_tensor(adj_de, dtype),
                    t,
                )
                err_v = (pred_v.numpy() - g_d.vertex_latents).ravel()
                err_e = (pred_e.numpy() - g_d.edge_latents).ravel()
                err = np.concatenate([err_v, err_e])
                per_graph.append(float(np.sqrt(np.mean(err * err))))
            rows.append({"t": int(t), "rmse": float(np.mean(per_graph))})
    return rows


def gather_tiles(entity_graphs, max_tiles: int | None = None, seed: int = 0):
    """Pool vertex and edge tiles from many graphs into one stage-1 corpus."""
    stacks = []
    for g in entity_graphs:
        stacks.append(g.vertex_tiles)
        if len(g.edge_tiles):
            stacks.append(g.edge_tiles)
    tiles = np.concatenate(stacks)
    if max_tiles is not None and len(tiles) > max_tiles:
        rng = np.random.default_rng(seed)
        tiles = tiles[rng.choice(len(tiles), size=max_tiles, replace=False)]
    return tiles
