import math

import numpy as np
import pytest

import oracles
from sagpool import autograd as ag
from sagpool.graph import CSR, SparseGraph, make_batch, normalize_adjacency
from sagpool.layers import (
    DegenerateParameterError,
    GcnLayer,
    GPoolLayer,
    SagPoolLayer,
    attention_scores,
    gcn_forward,
    gpool_scores,
    keep_counts,
    pool,
    readout,
    top_rank,
)


def set_weights(layer, weights):
    for conv, w in zip(layer.convs, weights):
        conv.weight.value[...] = w


def test_gcn_single_node():
    layer = GcnLayer(1, 1, "relu", weight=[[3.0]])
    out = gcn_forward(layer, normalize_adjacency(SparseGraph.from_edges(1, [])), ag.Tensor([[2.0]]))
    assert out.value.tolist() == [[6.0]]


def test_gcn_identity_weight_is_propagation():
    rng = np.random.default_rng(0)
    a = oracles.random_adjacency(rng, 6, 0.5)
    h = rng.normal(size=(6, 3))
    layer = GcnLayer(3, 3, "identity", weight=np.eye(3))
    out = layer(normalize_adjacency(SparseGraph.from_dense(a)), ag.Tensor(h))
    np.testing.assert_allclose(out.value, oracles.norm_adj(a) @ h, rtol=0, atol=1e-12)


def test_gcn_matches_dense_on_12_nodes():
    rng = np.random.default_rng(12)
    a = oracles.random_adjacency(rng, 12)
    h, w = rng.normal(size=(12, 4)), rng.normal(size=(4, 5))
    out = GcnLayer(4, 5, "relu", weight=w)(normalize_adjacency(SparseGraph.from_dense(a)), ag.Tensor(h))
    np.testing.assert_allclose(out.value, oracles.gcn(a, h, w, oracles.relu), rtol=0, atol=1e-12)


def test_gcn_shape_errors():
    layer = GcnLayer(2, 3)
    adj = normalize_adjacency(SparseGraph.from_edges(3, [(0, 1)]))
    with pytest.raises(ag.ShapeError):
        layer(adj, ag.Tensor(np.ones((3, 4))))
    with pytest.raises(ag.ShapeError):
        layer(adj, ag.Tensor(np.ones((2, 2))))


def test_zero_attention_weight_gives_zero_scores():
    layer = SagPoolLayer(3)
    set_weights(layer, [np.zeros((3, 1))])
    g = SparseGraph.from_edges(4, [(0, 1), (2, 3)], features=np.ones((4, 3)))
    assert not attention_scores(layer, g.adjacency, g.features).value.any()


def test_isolated_node_score():
    layer = SagPoolLayer(1)
    set_weights(layer, [[[0.7]]])
    z = attention_scores(layer, CSR.empty(1), ag.Tensor([[1.3]]))
    assert z.value[0, 0] == pytest.approx(math.tanh(1.3 * 0.7), rel=1e-15)


@pytest.mark.parametrize("variant", ["base", "augmentation", "serial", "parallel"])
def test_attention_variants_match_dense(variant):
    rng = np.random.default_rng(["base", "augmentation", "serial", "parallel"].index(variant))
    for _ in range(10):
        n = int(rng.integers(1, 20))
        a = oracles.random_adjacency(rng, n)
        x = rng.normal(size=(n, 4))
        layer = SagPoolLayer(4, variant=variant, heads=3, rng=rng)
        weights = [c.weight.value.copy() for c in layer.convs]
        got = attention_scores(layer, CSR.from_dense(a), ag.Tensor(x)).value
        np.testing.assert_allclose(got, oracles.scores(variant, a, x, weights), rtol=0, atol=1e-12)


def test_serial_hidden_width_equals_input_width():
    layer = SagPoolLayer(5, variant="serial")
    assert [c.weight.shape for c in layer.convs] == [(5, 5), (5, 1)]


def test_parallel_with_identical_heads_equals_base():
    rng = np.random.default_rng(1)
    a = oracles.random_adjacency(rng, 9)
    x = ag.Tensor(rng.normal(size=(9, 3)))
    base = SagPoolLayer(3, rng=rng)
    par = SagPoolLayer(3, variant="parallel", heads=4)
    set_weights(par, [base.convs[0].weight.value] * 4)
    adj = CSR.from_dense(a)
    np.testing.assert_allclose(attention_scores(par, adj, x).value, attention_scores(base, adj, x).value,
                               rtol=0, atol=1e-15)


def test_parallel_heads_are_independent():
    layer = SagPoolLayer(3, variant="parallel", heads=2)
    assert not np.array_equal(layer.convs[0].weight.value, layer.convs[1].weight.value)


def test_gpool_cauchy_schwarz_case():
    y = gpool_scores(ag.Tensor([[3.0], [4.0]]), ag.Tensor([[3.0, 4.0]]))
    assert y.value.tolist() == [[5.0]]


def test_gpool_zero_projection():
    with pytest.raises(DegenerateParameterError):
        gpool_scores(ag.Tensor(np.zeros((2, 1))), ag.Tensor(np.ones((3, 2))))


def test_topology_witness_two_nodes():
    x = ag.Tensor([[1.0], [-1.0]])
    apart = SparseGraph.from_edges(2, [])
    joined = SparseGraph.from_edges(2, [(0, 1)])
    sag = SagPoolLayer(1)
    set_weights(sag, [[[1.0]]])
    z_apart = attention_scores(sag, apart.adjacency, x).value
    z_joined = attention_scores(sag, joined.adjacency, x).value
    assert z_apart.ravel().tolist() == [math.tanh(1.0), math.tanh(-1.0)]
    assert z_joined.ravel().tolist() == [0.0, 0.0]
    gp = GPoolLayer(1)
    gp.p.value[...] = 0.8
    y_apart = gp.gate_and_rank(apart.adjacency, x)[1]
    y_joined = gp.gate_and_rank(joined.adjacency, x)[1]
    assert y_apart.tobytes() == y_joined.tobytes()


def test_top_rank_examples():
    one = np.zeros(3, dtype=np.int64)
    assert top_rank([0.9, 0.1, 0.5], 0.5, one, 1).tolist() == [0, 2]
    assert top_rank([0.5, 0.5, 0.1], 1 / 3, one, 1).tolist() == [0]
    assert top_rank([0.2, 0.9, 0.5], 1.0, one, 1).tolist() == [1, 2, 0]


def test_top_rank_per_graph():
    z = [0.1, 0.3, 0.2, 0.9, 0.8]
    assert top_rank(z, 0.5, [0, 0, 0, 1, 1], 2).tolist() == [1, 2, 3]
    assert top_rank(z, None, [0, 0, 0, 1, 1], 2, max_keep=2).tolist() == [1, 2, 3, 4]


@pytest.mark.parametrize("ratio", [0.0, -0.5, 1.5, None])
def test_bad_ratio(ratio):
    with pytest.raises(ValueError):
        keep_counts([4], ratio)


def test_keep_counts_avoid_float_noise():
    assert keep_counts([30], 0.1).tolist() == [3]
    assert keep_counts([10], 0.3).tolist() == [3]


def test_pool_full_retention_is_permutation():
    rng = np.random.default_rng(8)
    a = oracles.random_adjacency(rng, 7, 0.4)
    x = rng.normal(size=(7, 2))
    layer = SagPoolLayer(2, ratio=1.0, rng=rng)
    out = pool(layer, CSR.from_dense(a), ag.Tensor(x), np.zeros(7, np.int64), 1)
    z = out.scores.value
    idx = np.argsort(-z.ravel(), kind="stable")
    assert out.idx.tolist() == idx.tolist()
    np.testing.assert_allclose(out.x.value, (x * z)[idx], rtol=0, atol=1e-15)
    assert np.array_equal(out.adjacency.to_dense(), a[np.ix_(idx, idx)])


def test_pool_single_node():
    layer = SagPoolLayer(1)
    set_weights(layer, [[[0.4]]])
    out = pool(layer, CSR.empty(1), ag.Tensor([[2.0]]), [0], 1)
    assert out.x.value[0, 0] == pytest.approx(2.0 * math.tanh(0.8), rel=1e-15)
    assert out.adjacency.to_dense().tolist() == [[0.0]]


def test_pool_matches_dense_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        n = int(rng.integers(1, 25))
        a = oracles.random_adjacency(rng, n)
        x = rng.normal(size=(n, 3))
        layer = SagPoolLayer(3, ratio=0.5, rng=rng)
        out = pool(layer, CSR.from_dense(a), ag.Tensor(x), np.zeros(n, np.int64), 1)
        z = oracles.scores("base", a, x, [layer.convs[0].weight.value])
        idx, xo, ao = oracles.pool(a, x, z, 0.5)
        assert out.idx.tolist() == idx.tolist()
        np.testing.assert_allclose(out.x.value, xo, rtol=0, atol=1e-12)
        assert np.array_equal(out.adjacency.to_dense(), ao)


@pytest.mark.parametrize("layer_cls", [SagPoolLayer, GPoolLayer])
def test_batched_pool_equals_individual(layer_cls):
    rng = np.random.default_rng(5)
    graphs = [SparseGraph.from_dense(oracles.random_adjacency(rng, n), rng.normal(size=(n, 3)))
              for n in (4, 9, 1, 6, 13)]
    layer = layer_cls(3, ratio=0.5, rng=rng)
    b = make_batch(graphs)
    out = pool(layer, b.graph.adjacency, ag.Tensor(b.graph.features), b.indicator, b.num_graphs)
    for i, g in enumerate(graphs):
        solo = pool(layer, g.adjacency, ag.Tensor(g.features), np.zeros(g.num_nodes, np.int64), 1)
        mine = out.indicator == i
        np.testing.assert_allclose(out.x.value[mine], solo.x.value, rtol=0, atol=1e-12)
        assert (out.idx[mine] - b.offsets[i]).tolist() == solo.idx.tolist()


def test_readout_examples():
    r = readout(ag.Tensor([[1.0, 2.0], [3.0, 4.0]]), [0, 0], 1)
    assert r.value.tolist() == [[2.0, 3.0, 3.0, 4.0]]
    assert readout(ag.Tensor([[5.0, -1.0]]), [0], 1).value.tolist() == [[5.0, -1.0, 5.0, -1.0]]


def test_readout_permutation_invariant():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(6, 4))
    r1 = readout(ag.Tensor(h), np.zeros(6, np.int64), 1).value
    r2 = readout(ag.Tensor(h[rng.permutation(6)]), np.zeros(6, np.int64), 1).value
    np.testing.assert_allclose(r1, r2, rtol=0, atol=1e-15)
    np.testing.assert_allclose(r1.ravel(), oracles.readout(h), rtol=0, atol=1e-15)


def test_readout_empty_graph_segment():
    with pytest.raises(ag.SegmentError):
        readout(ag.Tensor(np.ones((2, 1))), [0, 0], 2)


def test_sagpool_parameter_count_is_hidden_size():
    assert sum(t.value.size for _, t in SagPoolLayer(64).parameters()) == 64
