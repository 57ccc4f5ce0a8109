"""Training loop tests: stage-1 codec, stage-2 denoising, RMSE diagnostic."""

import numpy as np
import pytest
import torch

import hmgdm.pretrain as pretrain_mod
from hmgdm.backbone import DiffusionModel
from hmgdm.latent_codec import CodecConfig, LatentGraph, TileVAE, decode_latent
from hmgdm.pretrain import (
    TrainConfig,
    gather_tiles,
    pretrain_step,
    rmse_vs_t,
    train_stage1,
    train_stage2,
)


def _random_latent_graph(n_v, edges, d_side=2, c=2, seed=0):
    rng = np.random.default_rng(seed)
    edge_index = np.array(sorted(set(map(tuple, edges))), dtype=np.int64).reshape(-1, 2)
    degrees = np.zeros(n_v, dtype=np.int64)
    for i, j in edge_index:
        degrees[i] += 1
        degrees[j] += 1
    d = d_side * d_side * c
    return LatentGraph(
        vertex_latents=rng.standard_normal((n_v, d)).astype(np.float32),
        edge_latents=rng.standard_normal((len(edge_index), d)).astype(np.float32),
        edge_index=edge_index,
        degrees=degrees,
        l=d_side,
        c=c,
    )


def _corpus(n_graphs=6, seed=0):
    graphs = []
    for g in range(n_graphs):
        edges = [(i, i + 1) for i in range(5)] + [(0, 5)]
        graphs.append(_random_latent_graph(6, edges, seed=seed + g))
    return graphs


def test_default_learning_rate():
    cfg = TrainConfig()
    assert cfg.lr == 3e-4
    assert cfg.min_lr == 1e-5
    assert cfg.epochs_stage2 == 250  # full-corpus default


def test_stage1_single_tile_smoke():
    rng = np.random.default_rng(0)
    tiles = rng.random((1, 8, 8, 3)).astype(np.float32)
    cfg = TrainConfig(epochs_stage1=1, batch_size=4, seed=0)
    codec, trace = train_stage1(tiles, CodecConfig(a=8, f=2, c=2), cfg)
    assert len(trace) == 1
    assert np.isfinite(trace[0].loss)


def test_stage1_reconstruction_improves():
    rng = np.random.default_rng(1)
    # structured tiles: two blob patterns the tiny codec can actually learn
    base = np.zeros((512, 8, 8, 3), dtype=np.float32)
    for i in range(512):
        color = rng.random(3)
        r, c = rng.integers(0, 6, 2)
        base[i, r : r + 3, c : c + 3] = color
    cfg = TrainConfig(epochs_stage1=30, batch_size=64, seed=0)
    codec, trace = train_stage1(base, CodecConfig(a=8, f=2, c=2), cfg)
    assert len(trace) == 30
    first = trace[0].extra["rec"]
    final = trace[-1].extra["rec"]
    assert final <= 0.5 * first

    # decode quality halves against the untrained baseline as well
    torch.manual_seed(0)
    untrained = TileVAE(CodecConfig(a=8, f=2, c=2))

    def mse(model):
        total = 0.0
        with torch.no_grad():
            for i in range(0, 64):
                x = base[i]
                mu, _ = model.encode(torch.from_numpy(x).permute(2, 0, 1)[None])
                z = mu[0].permute(1, 2, 0).numpy()
                x_hat = decode_latent(model, z)
                total += float(np.mean((x_hat - x) ** 2))
        return total / 64

    assert mse(codec) < 0.5 * mse(untrained)


def test_pretrain_step_smoke_and_finite():
    torch.manual_seed(0)
    graphs = _corpus(2)
    d = graphs[0].width
    model = DiffusionModel(d=d, layers=2, heads=2)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    cfg = TrainConfig(T=50)
    schedule = cfg.schedule()
    loss = pretrain_step(graphs, model, schedule, optimizer, 0.5, np.random.default_rng(0))
    assert loss is not None and np.isfinite(loss) and loss > 0
    for p in model.parameters():
        assert torch.isfinite(p).all()


def test_pretrain_step_fresh_mask_each_step(monkeypatch):
    torch.manual_seed(1)
    # C(12,6) = 924 possible vertex masks: repeats across 30 steps are improbable
    graphs = [_random_latent_graph(12, [(i, (i + 1) % 12) for i in range(12)], seed=0)]
    d = graphs[0].width
    model = DiffusionModel(d=d, layers=2, heads=2)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-4)
    schedule = TrainConfig(T=50).schedule()
    seen = []
    real_split = pretrain_mod.split_graph

    def spy(graph, r_m, seed):
        out = real_split(graph, r_m, seed)
        seen.append(tuple(np.nonzero(out[2].vertex_mask)[0].tolist()))
        return out

    monkeypatch.setattr(pretrain_mod, "split_graph", spy)
    rng = np.random.default_rng(2)
    for _ in range(30):
        pretrain_step(graphs, model, schedule, optimizer, 0.5, rng)
    assert len(seen) == 30
    assert len(set(seen)) >= 25  # dynamic masks: collisions rare, not absent


def test_pretrain_step_skips_degenerate_graph():
    torch.manual_seed(2)
    g = _random_latent_graph(1, [])
    model = DiffusionModel(d=g.width, layers=2, heads=2)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-4)
    schedule = TrainConfig(T=10).schedule()
    with pytest.warns(UserWarning):
        loss = pretrain_step([g], model, schedule, optimizer, 0.5, np.random.default_rng(0))
    assert loss is None


def test_stage2_epochs_and_trace():
    graphs = _corpus(4)
    cfg = TrainConfig(
        epochs_stage2=5, batch_size=2, T=20, seed=3, layers=2, heads=2
    )
    model, trace = train_stage2(graphs, cfg)
    assert len(trace) == 5
    assert all(np.isfinite(t.loss) for t in trace)
    for p in model.parameters():
        assert torch.isfinite(p).all()


def test_stage2_loss_trend_moving_average():
    graphs = _corpus(8, seed=10)
    cfg = TrainConfig(epochs_stage2=40, batch_size=4, T=20, seed=4, layers=2, heads=2)
    _, trace = train_stage2(graphs, cfg)
    losses = np.array([t.loss for t in trace])
    kernel = np.ones(10) / 10
    smooth = np.convolve(losses, kernel, mode="valid")
    assert smooth[-1] <= smooth[0]


def test_stage2_bit_identical_traces():
    graphs = _corpus(3, seed=20)
    cfg = TrainConfig(epochs_stage2=3, batch_size=2, T=10, seed=5, layers=2, heads=2)
    _, trace_a = train_stage2(graphs, cfg)
    _, trace_b = train_stage2(graphs, cfg)
    assert [t.loss for t in trace_a] == [t.loss for t in trace_b]


def test_stage2_resume_reproduces_uninterrupted_trace():
    graphs = _corpus(3, seed=30)
    cfg = TrainConfig(epochs_stage2=6, batch_size=2, T=10, seed=6, layers=2, heads=2)
    _, full_trace = train_stage2(graphs, cfg)

    checkpoints = {}

    def capture(epoch, state):
        checkpoints[epoch] = state

    _, head_trace = train_stage2(
        graphs,
        TrainConfig(epochs_stage2=3, batch_size=2, T=10, seed=6, layers=2, heads=2),
        on_epoch=capture,
    )
    resume_state = checkpoints[2]  # completed 3 epochs (0-indexed)
    _, tail_trace = train_stage2(graphs, cfg, resume=resume_state)
    # resumed trace = restored head entries + continued epochs, bit-identical
    # to the uninterrupted run
    assert [t.loss for t in tail_trace] == [t.loss for t in full_trace]
    assert [t.loss for t in tail_trace[:3]] == [t.loss for t in head_trace]


def test_checkpoint_round_trip(tmp_path):
    from hmgdm.backbone import load_backbone, save_backbone

    graphs = _corpus(2, seed=40)
    cfg = TrainConfig(epochs_stage2=2, batch_size=2, T=10, seed=7, layers=2, heads=2)
    model, _ = train_stage2(graphs, cfg)
    path = tmp_path / "bb.pt"
    save_backbone(path, model)
    loaded = load_backbone(path)
    for (na, pa), (nb, pb) in zip(
        sorted(model.state_dict().items()), sorted(loaded.state_dict().items())
    ):
        assert na == nb and torch.equal(pa, pb)


class _IdentityModel:
    """Decoder short-circuit harness: returns the noisy input unchanged."""

    def __init__(self, strategy="NtoN&EtoE", self_loops=True):
        self.strategy = strategy
        self.self_loops = self_loops

    def eval(self):
        return self

    def parameters(self):
        yield torch.zeros(1, dtype=torch.float32)

    def __call__(self, cond_v, cond_e, acv, ace, noisy_v, noisy_e, atv, ate, t):
        return noisy_v, noisy_e


def test_rmse_vs_t_identity_harness_zero_at_t0():
    graphs = _corpus(2, seed=50)
    schedule = TrainConfig(T=20).schedule()
    rows = rmse_vs_t(_IdentityModel(), schedule, graphs, [0, 10, 20], 0.5, seed=0)
    assert rows[0]["t"] == 0
    assert rows[0]["rmse"] == pytest.approx(0.0, abs=1e-7)
    assert rows[1]["rmse"] > 0  # noise shows up once t > 0


def test_rmse_vs_t_untrained_scale_logged():
    torch.manual_seed(8)
    graphs = _corpus(2, seed=60)
    d = graphs[0].width
    model = DiffusionModel(d=d, layers=2, heads=2)
    schedule = TrainConfig(T=50).schedule()
    rows = rmse_vs_t(model, schedule, graphs, [50], 0.5, seed=0)
    # recorded, not asserted: untrained RMSE at large t sits at the latent
    # standard-deviation scale
    print(f"untrained RMSE at t=T: {rows[0]['rmse']:.3f}")
    assert np.isfinite(rows[0]["rmse"])


def test_rmse_vs_t_paired_targets_are_deterministic():
    graphs = _corpus(2, seed=70)
    schedule = TrainConfig(T=20).schedule()
    a = rmse_vs_t(_IdentityModel(), schedule, graphs, [5, 10], 0.5, seed=3)
    b = rmse_vs_t(_IdentityModel(), schedule, graphs, [5, 10], 0.5, seed=3)
    assert a == b


def test_simple_loss_gradient_through_decoder():
    """Central-difference check of d L_Simple / d theta on a 5-vertex graph."""
    torch.manual_seed(9)
    g = _random_latent_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], seed=80)
    d = g.width
    model = DiffusionModel(d=d, layers=2, heads=2).double()

    from hmgdm.backbone import build_stream_adjacency
    from hmgdm.diffusion import forward_noise, simple_loss
    from hmgdm.mask_split import split_graph

    visible, masked, _ = split_graph(g, 0.5, seed=1)
    schedule = TrainConfig(T=10).schedule()
    state = forward_noise(
        masked.vertex_latents.astype(np.float64),
        masked.edge_latents.astype(np.float64),
        5,
        schedule,
        rng=np.random.default_rng(2),
    )
    adj_cv, adj_ce = build_stream_adjacency(visible)
    adj_tv, adj_te = build_stream_adjacency(masked)

    args = lambda: (
        torch.as_tensor(visible.vertex_latents, dtype=torch.float64),
        torch.as_tensor(visible.edge_latents, dtype=torch.float64),
        torch.as_tensor(adj_cv, dtype=torch.float64),
        torch.as_tensor(adj_ce, dtype=torch.float64),
        torch.as_tensor(state.vertex_latents, dtype=torch.float64),
        torch.as_tensor(state.edge_latents, dtype=torch.float64),
        torch.as_tensor(adj_tv, dtype=torch.float64),
        torch.as_tensor(adj_te, dtype=torch.float64),
        5,
    )
    target_v = torch.as_tensor(masked.vertex_latents, dtype=torch.float64)
    target_e = torch.as_tensor(masked.edge_latents, dtype=torch.float64)

    def loss_value():
        pred_v, pred_e = model(*args())
        return simple_loss(pred_v, pred_e, target_v, target_e)

    loss = loss_value()
    loss.backward()
    params = list(model.parameters())
    rng = np.random.default_rng(3)
    probes = rng.choice(len(params), size=4, replace=False)
    h = 1e-6
    for pi in probes:
        p = params[pi]
        if p.grad is None:
            continue
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        idx = int(rng.integers(0, len(flat)))
        orig = flat[idx].item()
        flat[idx] = orig + h
        up = loss_value().item()
        flat[idx] = orig - h
        down = loss_value().item()
        flat[idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = gflat[idx].item()
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4


def test_gather_tiles_counts():
    from hmgdm.entity_graph import GraphParams, build_entity_graph

    rng = np.random.default_rng(90)
    imgs = [rng.integers(0, 256, (48, 48, 3)).astype(np.uint8) for _ in range(2)]
    graphs = [build_entity_graph(im, GraphParams(n_regions=4, tile=16)) for im in imgs]
    tiles = gather_tiles(graphs)
    total = sum(g.vertex_tiles.shape[0] + g.edge_tiles.shape[0] for g in graphs)
    assert tiles.shape == (total, 16, 16, 3)
    assert tiles.dtype == np.uint8  # normalization happens at batch time
    capped = gather_tiles(graphs, max_tiles=5, seed=1)
    assert capped.shape[0] == 5
