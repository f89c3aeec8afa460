import math

import numpy as np
import pytest

from topodetect import nn
from topodetect.graph import (DegenerateGraphError, build_induced_graph, induce_conv_edges,
                              induce_fc_edges, prune_layer, raw_layer_edges, read_graph,
                              write_graph)

from oracles import conv_same_loops, dense_edges


def as_set(src, dst, raw):
    return {(int(s), int(d), float(w)) for s, d, w in zip(src, dst, raw)}


def test_fc_hand_case():
    s, d, raw = induce_fc_edges([1, 0], np.array([[2, -3], [5, 7]]))
    assert as_set(s, d, raw) == {(0, 0, 2.0), (0, 1, -3.0)}


def test_fc_zero_activations():
    s, _, _ = induce_fc_edges(np.zeros(4), np.ones((4, 3)))
    assert len(s) == 0


def test_fc_matches_outer_product():
    rng = np.random.default_rng(0)
    a = np.maximum(rng.normal(size=10), 0)
    W = rng.normal(size=(10, 8))
    assert as_set(*induce_fc_edges(a, W)) == set(dense_edges(a, W))


def test_fc_dimension_mismatch():
    with pytest.raises(ValueError):
        induce_fc_edges(np.ones(3), np.ones((4, 2)))


def test_conv_scalar_case():
    s, d, raw = induce_conv_edges(np.array([[2.0]]), np.full((1, 1, 1, 1), 3.0))
    assert as_set(s, d, raw) == {(0, 0, 6.0)}


def test_conv_center_output_sees_nine_products():
    rng = np.random.default_rng(1)
    x = rng.random((3, 3))
    f = rng.normal(size=(1, 1, 3, 3))
    s, d, raw = induce_conv_edges(x, f)
    centre = d == 4
    got = {(int(a), float(w)) for a, w in zip(s[centre], raw[centre])}
    assert got == {(i, float(x.ravel()[i] * f.ravel()[i])) for i in range(9)}


def test_conv_edges_match_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.random((2, 7, 7)) * (rng.random((2, 7, 7)) > 0.3)
    f = rng.normal(size=(3, 2, 3, 3))
    for stride in (1, 2):
        _, edges = conv_same_loops(x, f, np.zeros(3), stride)
        assert as_set(*induce_conv_edges(x, f, stride)) == set(edges)


def test_conv_incoming_sum_equals_preactivation():
    model = nn.build_model((8, 8), [nn.Conv(2, 3), nn.Dense(128, 3, relu=False)], seed=4)
    x = np.random.default_rng(3).random((8, 8))
    trace = nn.forward(model, x)
    s, d, raw = induce_conv_edges(x, model.layers[0].weight)
    total = np.bincount(d, weights=raw, minlength=128)
    expect = (trace.pre[0] - model.layers[0].bias[:, None, None]).ravel()
    assert np.allclose(total, expect, atol=1e-12)


def test_conv_dimension_mismatch():
    with pytest.raises(ValueError):
        induce_conv_edges(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))


def test_prune_rho_zero_keeps_all():
    w = np.array([0.5, 2.0, 1.0])
    assert prune_layer(w, 0.0).all()


def test_prune_decile():
    w = np.arange(1.0, 11.0)
    assert np.flatnonzero(prune_layer(w, 0.9)).tolist() == [9]


def test_prune_rejects_bad_rho():
    with pytest.raises(ValueError):
        prune_layer(np.ones(3), 1.0)


def test_rho_zero_graph_keeps_every_nonzero_edge():
    model = nn.scaled_model(seed=1, filters=2, hidden=8)
    x = np.random.default_rng(0).random((28, 28))
    trace = nn.forward(model, x)
    nonzero = sum(int((raw != 0).sum()) for *_, raw in raw_layer_edges(model, trace))
    assert build_induced_graph(model, trace, rho=0.0).edge_count == nonzero


def test_degenerate_graph():
    from dataclasses import replace
    model = nn.scaled_model(seed=1, filters=2, hidden=8)
    # zero biases: a black image then activates nothing
    model = nn.NetworkModel(model.input_shape,
                            [replace(l, bias=np.zeros_like(l.bias)) for l in model.layers])
    with pytest.raises(DegenerateGraphError):
        build_induced_graph(model, nn.forward(model, np.zeros((28, 28))), 0.5)


@pytest.mark.slow
def test_retained_count_per_layer(desk_model, mnist):
    trace = nn.forward(desk_model, mnist.images[0])
    graph = build_induced_graph(desk_model, trace, 0.99)
    for i, _, _, raw in raw_layer_edges(desk_model, trace):
        w = np.abs(raw[raw != 0])
        target = math.ceil(0.01 * len(w))
        kept = int((graph.layer == i).sum())
        # shared conv weights on saturated pixels tie at the cutoff; ties are all kept
        cutoff = np.sort(w)[-target]
        above = int((w > cutoff).sum())
        assert above < target <= kept, (i, above, target, kept)
        assert kept == above + int((w == cutoff).sum()), (i, kept, len(w))


def test_graph_dump_roundtrip(tmp_path):
    model = nn.scaled_model(seed=2, filters=2, hidden=8)
    g = build_induced_graph(model, nn.forward(model, np.random.default_rng(5).random((28, 28))))
    path = tmp_path / "g.txt"
    write_graph(g, path, {"rho": 0.99})
    back = read_graph(path)
    for name in ("src", "dst", "weight", "layer"):
        assert np.array_equal(getattr(g, name), getattr(back, name))
