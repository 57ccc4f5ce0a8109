"""Downstream tests: readout, inference path, CE and Cox losses, head training."""

import math

import numpy as np
import pytest
import torch

from hmgdm.backbone import DiffusionModel
from hmgdm.downstream import (
    AttentionPool,
    HeadConfig,
    SurvivalRecord,
    ce_loss,
    cox_loss,
    embed_graph,
    embed_inference,
    final_vertex_states,
    finetune_head,
    finetune_with_attention_pool,
    load_head,
    readout,
    records_to_arrays,
    save_head,
)
from hmgdm.latent_codec import CodecConfig, LatentGraph, TileVAE


def _lg(n_v=5, seed=0, d_side=2, c=2):
    rng = np.random.default_rng(seed)
    edges = np.array([(i, i + 1) for i in range(n_v - 1)], dtype=np.int64)
    degrees = np.zeros(n_v, dtype=np.int64)
    for i, j in edges:
        degrees[i] += 1
        degrees[j] += 1
    d = d_side * d_side * c
    return LatentGraph(
        vertex_latents=rng.standard_normal((n_v, d)).astype(np.float32),
        edge_latents=rng.standard_normal((n_v - 1, d)).astype(np.float32),
        edge_index=edges,
        degrees=degrees,
        l=d_side,
        c=c,
    )


def test_readout_mean_worked_example():
    pooled, weights = readout(np.array([[1.0, 2.0], [3.0, 4.0]]), "mean")
    assert np.allclose(pooled, [2.0, 3.0])
    assert weights is None


def test_readout_max_and_sum():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(readout(x, "max")[0], [3.0, 4.0])
    assert np.allclose(readout(x, "sum")[0], [4.0, 6.0])


def test_readout_attention_uniform_equals_mean():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 4))
    pooled, weights = readout(x, "attention", score_vector=np.zeros(4))
    assert np.allclose(pooled, x.mean(axis=0), atol=1e-6)
    assert np.allclose(weights, 1 / 6)
    assert weights.sum() == pytest.approx(1.0)


def test_readout_permutation_invariance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((7, 3))
    perm = rng.permutation(7)
    for mode in ("mean", "max", "sum"):
        assert np.allclose(readout(x, mode)[0], readout(x[perm], mode)[0])


def test_readout_invalid_mode():
    with pytest.raises(ValueError):
        readout(np.ones((2, 2)), "median")


def test_ce_loss_uniform_and_perfect():
    logits = torch.zeros(4, 2)
    labels = torch.tensor([0, 1, 0, 1])
    assert float(ce_loss(logits, labels)) == pytest.approx(math.log(2), rel=1e-6)
    hard = torch.tensor([[100.0, 0.0], [0.0, 100.0]])
    assert float(ce_loss(hard, torch.tensor([0, 1]))) == pytest.approx(0.0, abs=1e-6)


def test_ce_loss_worked_example():
    logits = torch.tensor([[1.0, 0.0]])
    labels = torch.tensor([0])
    expected = math.log(1 + math.exp(-1))
    assert float(ce_loss(logits, labels)) == pytest.approx(expected, rel=1e-6)


def test_ce_loss_bounds_and_range_check():
    rng = torch.Generator().manual_seed(0)
    logits = torch.randn(8, 3, generator=rng)
    labels = torch.randint(0, 3, (8,), generator=rng)
    assert float(ce_loss(logits, labels)) >= 0.0
    assert float(ce_loss(torch.zeros(5, 3), torch.zeros(5, dtype=torch.long))) == pytest.approx(
        math.log(3), rel=1e-6
    )
    with pytest.raises(ValueError):
        ce_loss(logits, torch.tensor([0, 1, 3, 0, 0, 0, 0, 0]))


def test_cox_loss_worked_example():
    risks = torch.zeros(2)
    times = torch.tensor([1.0, 2.0])
    events = torch.tensor([1, 1])
    expected = (math.log(2) + 0.0) / 2
    assert float(cox_loss(risks, times, events)) == pytest.approx(expected, rel=1e-6)


def test_cox_loss_single_subject():
    assert float(cox_loss(torch.tensor([1.7]), torch.tensor([3.0]), torch.tensor([1]))) == pytest.approx(
        0.0, abs=1e-7
    )


def test_cox_loss_shift_invariance():
    rng = torch.Generator().manual_seed(1)
    risks = torch.randn(10, generator=rng)
    times = torch.rand(10, generator=rng) * 9 + 1
    events = torch.randint(0, 2, (10,), generator=rng)
    events[0] = 1
    base = float(cox_loss(risks, times, events))
    shifted = float(cox_loss(risks + 11.3, times, events))
    assert abs(base - shifted) < 1e-5  # float32 logsumexp tolerance


def test_cox_loss_shift_invariance_float64():
    rng = np.random.default_rng(2)
    risks = torch.tensor(rng.standard_normal(12))
    times = torch.tensor(rng.uniform(1, 10, 12))
    events = torch.tensor(rng.integers(0, 2, 12))
    events[0] = 1
    base = float(cox_loss(risks, times, events))
    shifted = float(cox_loss(risks + 4.2, times, events))
    assert abs(base - shifted) < 1e-8


def test_cox_loss_ties_share_risk_sets():
    # Breslow: tied times belong to each other's risk sets
    risks = torch.tensor([0.0, 0.0, 0.0])
    times = torch.tensor([2.0, 2.0, 5.0])
    events = torch.tensor([1, 1, 0])
    # each event: risk set = all three -> -(0 - ln 3), mean over 2 events
    assert float(cox_loss(risks, times, events)) == pytest.approx(math.log(3), rel=1e-6)


def test_cox_loss_zero_events_rejected():
    with pytest.raises(ValueError):
        cox_loss(torch.zeros(3), torch.tensor([1.0, 2.0, 3.0]), torch.zeros(3, dtype=torch.long))


def test_cox_loss_brute_force_oracle():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 12))
        risks = rng.standard_normal(n)
        times = rng.integers(1, 6, n).astype(float)
        events = rng.integers(0, 2, n)
        if events.sum() == 0:
            events[int(rng.integers(0, n))] = 1
        total = 0.0
        for i in range(n):
            if events[i] != 1:
                continue
            rs = [j for j in range(n) if times[j] >= times[i]]
            total += -(risks[i] - math.log(sum(math.exp(risks[j]) for j in rs)))
        expected = total / events.sum()
        got = float(cox_loss(torch.tensor(risks), torch.tensor(times), torch.tensor(events)))
        assert got == pytest.approx(expected, rel=1e-6)


def test_cox_gradient_finite_differences():
    rng = np.random.default_rng(4)
    risks = torch.tensor(rng.standard_normal(8), requires_grad=True)
    times = torch.tensor(rng.uniform(1, 9, 8))
    events = torch.tensor([1, 0, 1, 1, 0, 1, 0, 1])
    loss = cox_loss(risks, times, events)
    loss.backward()
    h = 1e-6
    for idx in range(8):
        with torch.no_grad():
            up = risks.detach().clone()
            up[idx] += h
            down = risks.detach().clone()
            down[idx] -= h
            numeric = (
                float(cox_loss(up, times, events)) - float(cox_loss(down, times, events))
            ) / (2 * h)
        analytic = float(risks.grad[idx])
        denom = max(abs(numeric), abs(analytic), 1e-10)
        assert abs(numeric - analytic) / denom < 1e-4


def test_survival_record_validation():
    rec = SurvivalRecord(time=5.0, event=1)
    assert math.isnan(rec.risk)
    with pytest.raises(ValueError):
        SurvivalRecord(time=0.0, event=1)
    with pytest.raises(ValueError):
        SurvivalRecord(time=1.0, event=2)
    risks, times, events = records_to_arrays(
        [SurvivalRecord(time=1.0, event=0), SurvivalRecord(time=2.0, event=1)]
    )
    assert times.tolist() == [1.0, 2.0] and events.tolist() == [0, 1]
    assert np.all(np.isnan(risks))


@pytest.fixture(scope="module")
def trained_free_model():
    torch.manual_seed(0)
    return DiffusionModel(d=8, layers=2, heads=2)


def test_embed_graph_deterministic_and_width(trained_free_model):
    lg = _lg(6, seed=5)
    emb1, _ = embed_graph(lg, trained_free_model, "mean")
    emb2, _ = embed_graph(lg, trained_free_model, "mean")
    assert np.array_equal(emb1, emb2)
    assert emb1.shape == (8,)
    assert np.all(np.isfinite(emb1))


def test_embed_graph_uses_all_layers(trained_free_model):
    lg = _lg(6, seed=6)
    states = final_vertex_states(lg, trained_free_model)
    emb, _ = embed_graph(lg, trained_free_model, "mean")
    assert np.allclose(emb, states.mean(axis=0), atol=1e-6)


def test_embed_inference_full_pipeline():
    from hmgdm.entity_graph import GraphParams

    torch.manual_seed(1)
    rng = np.random.default_rng(7)
    img_a = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
    img_b = np.repeat(
        np.repeat(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8), 8, 0), 8, 1
    )
    codec = TileVAE(CodecConfig(a=16, f=2, c=2))
    d = (16 // 2) ** 2 * 2
    model = DiffusionModel(d=d, layers=2, heads=2)
    params = GraphParams(n_regions=4, tile=16)
    emb_a1 = embed_inference(img_a, codec, model, params, "mean")
    emb_a2 = embed_inference(img_a, codec, model, params, "mean")
    emb_b = embed_inference(img_b, codec, model, params, "mean")
    assert np.array_equal(emb_a1, emb_a2)  # no sampling on the inference path
    assert emb_a1.shape == (d,)
    assert np.linalg.norm(emb_a1 - emb_b) > 0


def test_finetune_head_linear_probe_separable():
    rng = np.random.default_rng(8)
    n = 40
    labels = np.array([i % 2 for i in range(n)])
    emb = rng.standard_normal((n, 6)).astype(np.float32)
    emb[:, 0] = labels * 4.0 - 2.0  # separable along the first coordinate
    cfg = HeadConfig(epochs=200, lr=1e-2, hidden=16, seed=0)
    head, trace = finetune_head(emb, labels, "classify", cfg)
    with torch.no_grad():
        preds = head(torch.from_numpy(emb)).argmax(dim=1).numpy()
    assert np.mean(preds == labels) == 1.0
    assert len(trace) == 200  # one entry per epoch


def test_finetune_head_survival_trace():
    rng = np.random.default_rng(9)
    emb = rng.standard_normal((20, 4)).astype(np.float32)
    records = [
        SurvivalRecord(time=float(rng.uniform(1, 10)), event=int(rng.integers(0, 2)))
        for _ in range(20)
    ]
    records[0] = SurvivalRecord(time=1.0, event=1)
    cfg = HeadConfig(epochs=15, lr=1e-3, hidden=8, seed=1)
    head, trace = finetune_head(emb, records, "survival", cfg)
    assert len(trace) == 15
    with torch.no_grad():
        risks = head(torch.from_numpy(emb)).numpy()
    assert risks.shape == (20,)
    assert np.all(np.isfinite(risks))


def test_finetune_head_count_mismatch():
    with pytest.raises(ValueError):
        finetune_head(np.zeros((4, 3), dtype=np.float32), np.array([0, 1]), "classify", HeadConfig())


def test_cox_risk_ranking_affine_invariance():
    # empirical regression check: ranking survives positive affine transforms
    # of the embeddings once the head converges on separable toy data
    rng = np.random.default_rng(10)
    n = 24
    risk_driver = np.linspace(-2, 2, n)
    emb = np.zeros((n, 3), dtype=np.float32)
    emb[:, 0] = risk_driver
    emb[:, 1:] = rng.standard_normal((n, 2)) * 0.01
    times = np.exp(-risk_driver) + rng.uniform(0, 0.01, n)
    records = [
        SurvivalRecord(time=float(t), event=1) for t in times
    ]
    cfg = HeadConfig(epochs=500, lr=3e-2, hidden=8, seed=2)
    head_a, _ = finetune_head(emb, records, "survival", cfg)
    head_b, _ = finetune_head(emb * 3.0 + 0.7, records, "survival", cfg)
    with torch.no_grad():
        ra = head_a(torch.from_numpy(emb)).numpy()
        rb = head_b(torch.from_numpy(emb * 3.0 + 0.7)).numpy()
    assert np.array_equal(np.argsort(ra), np.argsort(rb))


def test_attention_pool_zero_init_equals_mean():
    pool = AttentionPool(d=5)
    x = torch.randn(7, 5)
    pooled, weights = pool(x)
    assert torch.allclose(pooled, x.mean(dim=0), atol=1e-6)
    assert torch.allclose(weights.sum(), torch.tensor(1.0), atol=1e-6)


def test_finetune_with_attention_pool_learns():
    torch.manual_seed(2)
    rng = np.random.default_rng(11)
    n = 30
    labels = np.array([i % 2 for i in range(n)])
    states = []
    for i in range(n):
        s = rng.standard_normal((6, 4)).astype(np.float32) * 0.1
        s[0, 0] = labels[i] * 3.0 - 1.5  # signal carried by one vertex
        states.append(s)
    cfg = HeadConfig(epochs=300, lr=1e-2, hidden=8, seed=3)
    pool, head, trace = finetune_with_attention_pool(states, labels, "classify", cfg)
    correct = 0
    with torch.no_grad():
        for s, y in zip(states, labels):
            pooled, _ = pool(torch.from_numpy(s))
            pred = int(head(pooled[None]).argmax(dim=1))
            correct += pred == y
    assert correct / n >= 0.9
    assert len(trace) == 300


def test_head_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    emb = rng.standard_normal((10, 4)).astype(np.float32)
    labels = rng.integers(0, 2, 10)
    cfg = HeadConfig(epochs=5, lr=1e-3, hidden=8, seed=4)
    head, _ = finetune_head(emb, labels, "classify", cfg)
    path = tmp_path / "head.pt"
    score = np.arange(4, dtype=np.float32)
    meta = {"d": 4, "n_classes": 2, "hidden": 8}
    save_head(path, head, "classify", meta, score_vector=score)
    loaded, kind, loaded_meta, loaded_score = load_head(path)
    assert kind == "classify" and loaded_meta == meta
    assert np.array_equal(loaded_score, score)
    with torch.no_grad():
        a = head(torch.from_numpy(emb))
        b = loaded(torch.from_numpy(emb))
    assert torch.equal(a, b)
