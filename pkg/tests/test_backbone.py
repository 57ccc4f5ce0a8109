"""Backbone tests: adjacency normalization, GCN, attention, decoder blocks."""

import math

import numpy as np
import pytest
import torch

from hmgdm.backbone import (
    STRATEGIES,
    CrossAttention,
    DecoderBlock,
    DiffusionModel,
    GraphEncoder,
    as_tensor,
    dual_adjacency,
    gcn_layer,
    line_graph_edges,
    load_backbone,
    normalize_adjacency,
    save_backbone,
    time_embedding,
    validate_strategy,
)


def test_normalize_single_vertex():
    adj = normalize_adjacency(np.zeros((0, 2), dtype=np.int64), 1, self_loops=True)
    assert adj.shape == (1, 1)
    assert adj[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_normalize_path_worked_values():
    edge_index = np.array([(0, 1), (1, 2)])
    adj = normalize_adjacency(edge_index, 3, self_loops=True)
    assert adj[0, 0] == pytest.approx(1 / 2, abs=1e-12)
    assert adj[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-12)
    assert adj[1, 1] == pytest.approx(1 / 3, abs=1e-12)
    assert np.allclose(adj, adj.T)


def test_normalize_regular_graph_rows():
    # cycle on 6 vertices: degree 2 everywhere, rows sum to 1 with self-loops
    edge_index = np.array([(i, (i + 1) % 6) for i in range(6)])
    edge_index = np.sort(edge_index, axis=1)
    adj = normalize_adjacency(edge_index, 6, self_loops=True)
    assert np.allclose(adj.sum(axis=1), 1.0, atol=1e-12)


def test_normalize_isolated_without_self_loops():
    adj = normalize_adjacency(np.array([(0, 1)]), 3, self_loops=False)
    assert np.all(adj[2] == 0) and np.all(adj[:, 2] == 0)
    assert adj[0, 1] == pytest.approx(1.0)


def test_line_graph_path():
    pairs = line_graph_edges(np.array([(0, 1), (1, 2)]))
    assert pairs.tolist() == [[0, 1]]  # the two edges share vertex 1


def test_line_graph_triangle():
    pairs = line_graph_edges(np.array([(0, 1), (0, 2), (1, 2)]))
    assert set(map(tuple, pairs.tolist())) == {(0, 1), (0, 2), (1, 2)}


def test_dual_single_edge_isolated():
    adj = dual_adjacency(np.array([(0, 1)]), self_loops=True)
    assert adj.shape == (1, 1) and adj[0, 0] == pytest.approx(1.0)
    bare = dual_adjacency(np.array([(0, 1)]), self_loops=False)
    assert bare[0, 0] == 0.0


def test_line_graph_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        take = rng.random(len(all_pairs)) < 0.5
        edges = [p for p, t in zip(all_pairs, take) if t]
        if not edges:
            continue
        got = set(map(tuple, line_graph_edges(np.array(edges)).tolist()))
        expected = set()
        for p in range(len(edges)):
            for q in range(p + 1, len(edges)):
                if set(edges[p]) & set(edges[q]):
                    expected.add((p, q))
        assert got == expected


def test_gcn_identity_layer():
    x = np.random.default_rng(1).standard_normal((4, 3))
    out = gcn_layer(x, np.eye(4), np.eye(3))
    assert np.allclose(out, x)


def test_gcn_one_hot_rows_equal_adjacency():
    edge_index = np.array([(0, 1), (1, 2)])
    adj = normalize_adjacency(edge_index, 3, self_loops=True)
    out = gcn_layer(np.eye(3), adj, np.eye(3))
    assert np.allclose(out, adj)


def test_gcn_scalar_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        d_in, d_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        edges = [p for p in all_pairs if rng.random() < 0.5]
        adj = normalize_adjacency(
            np.array(edges, dtype=np.int64).reshape(-1, 2), n, self_loops=True
        )
        x = rng.standard_normal((n, d_in))
        w = rng.standard_normal((d_in, d_out))
        out = gcn_layer(x, adj, w)
        for i in range(n):
            for k in range(d_out):
                acc = 0.0
                for j in range(n):
                    for f in range(d_in):
                        acc += adj[i, j] * x[j, f] * w[f, k]
                assert abs(out[i, k] - acc) < 1e-6


def test_gcn_shape_error():
    with pytest.raises(ValueError):
        gcn_layer(np.zeros((3, 4)), np.eye(3), np.zeros((5, 2)))


def test_time_embedding_zero():
    emb = time_embedding(0, 8)
    assert np.allclose(emb[:4], 0.0)
    assert np.allclose(emb[4:], 1.0)


def test_time_embedding_norm_bound():
    for t in (0, 3, 77, 1000):
        emb = time_embedding(t, 16)
        assert np.dot(emb, emb) <= 16.0 + 1e-9


def test_time_embedding_distinct():
    T = 200
    embs = [tuple(np.round(time_embedding(t, 4), 12)) for t in range(T + 1)]
    assert len(set(embs)) == T + 1


def test_time_embedding_odd_dim_rejected():
    with pytest.raises(ValueError):
        time_embedding(1, 7)


def test_cross_attention_singleton_condition():
    torch.manual_seed(0)
    ca = CrossAttention(8, 2)
    query = torch.randn(5, 8)
    cond = torch.randn(1, 8)
    out, weights = ca(query, cond, return_weights=True)
    assert torch.allclose(weights, torch.ones_like(weights))
    expected = ca.w_v(cond).expand(5, 8)
    assert torch.allclose(out, expected, atol=1e-6)


def test_cross_attention_zero_query_uniform():
    torch.manual_seed(1)
    ca = CrossAttention(8, 2)
    with torch.no_grad():
        ca.w_q.weight.zero_()
    query = torch.randn(3, 8)
    cond = torch.randn(7, 8)
    _, weights = ca(query, cond, return_weights=True)
    assert torch.allclose(weights, torch.full_like(weights, 1 / 7), atol=1e-7)


def test_cross_attention_rows_sum_to_one():
    torch.manual_seed(2)
    ca = CrossAttention(12, 3)
    _, weights = ca(torch.randn(4, 12), torch.randn(9, 12), return_weights=True)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(3, 4), atol=1e-6)


def test_cross_attention_scalar_oracle():
    torch.manual_seed(3)
    d, heads = 8, 2
    dh = d // heads
    ca = CrossAttention(d, heads)
    query = torch.randn(4, d)
    cond = torch.randn(6, d)
    out = ca(query, cond).detach().numpy()
    wq = ca.w_q.weight.detach().numpy().T  # right-multiplication form
    wk = ca.w_k.weight.detach().numpy().T
    wv = ca.w_v.weight.detach().numpy().T
    q = query.numpy() @ wq
    k = cond.numpy() @ wk
    v = cond.numpy() @ wv
    for i in range(4):
        full = np.zeros(d)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            logits = np.array(
                [np.dot(q[i, sl], k[j, sl]) / math.sqrt(dh) for j in range(6)]
            )
            w = np.exp(logits - logits.max())
            w /= w.sum()
            full[sl] = sum(w[j] * v[j, sl] for j in range(6))
        assert np.allclose(out[i], full, atol=1e-6)


def test_cross_attention_empty_condition_rejected():
    ca = CrossAttention(8, 2)
    with pytest.raises(ValueError, match="configuration error"):
        ca(torch.randn(2, 8), torch.zeros(0, 8))


def test_encoder_retains_all_states():
    torch.manual_seed(4)
    enc = GraphEncoder(d=6, layers=4)
    v, e = torch.randn(5, 6), torch.randn(3, 6)
    adj_v, adj_e = torch.eye(5), torch.eye(3)
    states = enc(v, e, adj_v, adj_e)
    assert len(states) == 4
    for sv, se in states:
        assert sv.shape == (5, 6) and se.shape == (3, 6)


def test_encoder_single_vertex_degenerates():
    torch.manual_seed(5)
    enc = GraphEncoder(d=4, layers=2)
    v = torch.randn(1, 4)
    e = torch.zeros(0, 4)
    states = enc(v, e, torch.eye(1), torch.zeros(0, 0))
    manual = v
    act = torch.nn.GELU()
    for layer in range(2):
        manual = act(manual @ enc.w_v[layer].weight.T)
    assert torch.allclose(states[-1][0], manual, atol=1e-6)


def test_encoder_permutation_equivariance():
    torch.manual_seed(6)
    rng = np.random.default_rng(7)
    n = 6
    edges = np.array([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)])
    enc = GraphEncoder(d=5, layers=3)
    v = torch.randn(n, 5)
    e = torch.randn(len(edges), 5)
    adj_v = as_tensor(normalize_adjacency(edges, n))
    adj_e = as_tensor(dual_adjacency(edges))
    base = enc(v, e, adj_v, adj_e)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    edges_p = np.sort(inv[edges], axis=1)
    adj_v_p = as_tensor(normalize_adjacency(edges_p, n))
    permuted = enc(v[perm], e, adj_v_p, adj_e)
    # edge order unchanged (endpoints relabeled only), vertex rows permute
    for (bv, be), (pv, pe) in zip(base, permuted):
        assert torch.allclose(pv, bv[perm], atol=1e-5)
        assert torch.allclose(pe, be, atol=1e-5)


def _toy_forward_setup(d=8, n_vis=4, n_mask=3, e_vis=3, e_mask=2, seed=0):
    torch.manual_seed(seed)
    cond_v = torch.randn(n_vis, d)
    cond_e = torch.randn(e_vis, d)
    noisy_v = torch.randn(n_mask, d)
    noisy_e = torch.randn(e_mask, d)
    return cond_v, cond_e, noisy_v, noisy_e


def test_decoder_block_preserves_shapes():
    torch.manual_seed(8)
    block = DecoderBlock(d=8, heads=2)
    cond_v, cond_e, v, e = _toy_forward_setup()
    temb = torch.as_tensor(time_embedding(5, 8), dtype=torch.float32)
    out_v, out_e = block(
        v, e, cond_v, cond_e, torch.eye(3), torch.eye(2), temb, "NtoN&EtoE"
    )
    assert out_v.shape == v.shape and out_e.shape == e.shape


def test_decoder_block_degenerate_condition_smoke():
    torch.manual_seed(9)
    block = DecoderBlock(d=8, heads=2)
    _, _, v, e = _toy_forward_setup()
    temb = torch.zeros(8)
    out_v, out_e = block(
        v, e, torch.zeros(2, 8), torch.zeros(2, 8), torch.eye(3), torch.eye(2), temb, "NtoN&EtoE"
    )
    assert torch.isfinite(out_v).all() and torch.isfinite(out_e).all()


def test_decoder_time_reaches_output():
    torch.manual_seed(10)
    model = DiffusionModel(d=8, layers=2, heads=2, strategy="NtoN&EtoE")
    cond_v, cond_e, v, e = _toy_forward_setup()
    adj = (torch.eye(4), torch.eye(3), torch.eye(3), torch.eye(2))
    out1 = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=1)
    out2 = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=1000)
    assert not torch.allclose(out1[0], out2[0])


def test_decoder_condition_count_mismatch():
    torch.manual_seed(11)
    model = DiffusionModel(d=8, layers=3, heads=2)
    cond_v, cond_e, v, e = _toy_forward_setup()
    states = [(cond_v, cond_e)] * 2  # one short
    with pytest.raises(ValueError, match="configuration error"):
        model.decoder(v, e, 1, states, torch.eye(3), torch.eye(2))


def test_all_six_strategies_run():
    cond_v, cond_e, v, e = _toy_forward_setup(seed=12)
    outs = {}
    for strategy in STRATEGIES:
        torch.manual_seed(13)
        model = DiffusionModel(d=8, layers=2, heads=2, strategy=strategy)
        out_v, out_e = model(
            cond_v, cond_e, torch.eye(4), torch.eye(3), v, e, torch.eye(3), torch.eye(2), t=4
        )
        assert out_v.shape == v.shape and out_e.shape == e.shape
        assert torch.isfinite(out_v).all() and torch.isfinite(out_e).all()
        outs[strategy] = out_v
    validate_strategy("NtoN")
    with pytest.raises(ValueError):
        validate_strategy("NtoX")


def test_strategy_needing_edges_rejects_empty_stream():
    torch.manual_seed(14)
    model = DiffusionModel(d=8, layers=2, heads=2, strategy="NtoE")
    cond_v = torch.randn(4, 8)
    cond_e = torch.zeros(0, 8)
    v, e = torch.randn(3, 8), torch.zeros(0, 8)
    with pytest.raises(ValueError, match="configuration error"):
        model(cond_v, cond_e, torch.eye(4), torch.zeros(0, 0), v, e, torch.eye(3), torch.zeros(0, 0), t=1)


def test_unnamed_stream_passes_without_attention():
    # strategy NtoN leaves the edge stream without cross-attention: its output
    # must not depend on the condition values at all
    cond_v, cond_e, v, e = _toy_forward_setup(seed=15)
    torch.manual_seed(16)
    model = DiffusionModel(d=8, layers=2, heads=2, strategy="NtoN")
    adj = (torch.eye(4), torch.eye(3), torch.eye(3), torch.eye(2))
    base = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=3)
    moved_e = model(cond_v, cond_e + 5.0, adj[0], adj[1], v, e, adj[2], adj[3], t=3)
    assert torch.allclose(base[0], moved_e[0], atol=1e-6)  # vertices attend to cond_v only
    assert torch.allclose(base[1], moved_e[1], atol=1e-6)  # edges attend to nothing
    moved_v = model(cond_v + 5.0, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=3)
    assert not torch.allclose(base[0], moved_v[0], atol=1e-6)
    assert torch.allclose(base[1], moved_v[1], atol=1e-6)


def test_full_forward_deterministic():
    cond_v, cond_e, v, e = _toy_forward_setup(seed=17)
    torch.manual_seed(18)
    model = DiffusionModel(d=8, layers=2, heads=2)
    adj = (torch.eye(4), torch.eye(3), torch.eye(3), torch.eye(2))
    a = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=9)
    b = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=9)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_save_load_round_trip(tmp_path):
    cond_v, cond_e, v, e = _toy_forward_setup(seed=19)
    torch.manual_seed(20)
    model = DiffusionModel(d=8, layers=2, heads=2, strategy="NtoE&EtoN")
    path = tmp_path / "backbone.pt"
    save_backbone(path, model)
    loaded = load_backbone(path)
    assert loaded.manifest() == model.manifest()
    adj = (torch.eye(4), torch.eye(3), torch.eye(3), torch.eye(2))
    a = model(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=2)
    b = loaded(cond_v, cond_e, adj[0], adj[1], v, e, adj[2], adj[3], t=2)
    assert torch.equal(a[0], b[0])
