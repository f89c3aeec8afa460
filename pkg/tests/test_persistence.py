from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topodetect.persistence import (build_filtration, compute_h0, compute_h1_births,
                                    compute_persistence, extract_persistent_subgraph,
                                    interpolation_distance_curve, wasserstein_distance)

from conftest import graph_from, random_graph
from oracles import brute_wasserstein, cycle_count, threshold_sweep_h0

A, B, C, D = 0, 1, 2, 3


def h0_multiset(edges):
    diagram, _ = compute_h0(build_filtration(graph_from(edges)))
    return Counter(zip(diagram.birth.tolist(), diagram.death.tolist()))


def test_chain_order():
    f = build_filtration(graph_from([(A, B, 3.0), (B, C, 1.0)]))
    assert f.simplices() == [("v", A), ("v", B), ("e", A, B, 3.0), ("v", C), ("e", B, C, 1.0)]


def test_equal_weight_tie_break():
    f = build_filtration(graph_from([(0, 2, 5.0), (0, 1, 5.0)]))
    assert [s[1:3] for s in f.simplices() if s[0] == "e"] == [(0, 1), (0, 2)]


def test_order_matches_sort_oracle():
    rng = np.random.default_rng(0)
    edges = [(int(rng.integers(0, 20)), int(rng.integers(20, 40)), float(rng.integers(1, 10)))
             for _ in range(50)]
    edges = list({(s, d): (s, d, w) for s, d, w in edges}.values())
    f = build_filtration(graph_from(edges))
    got = [s[1:] for s in f.simplices() if s[0] == "e"]
    assert got == sorted(edges, key=lambda e: (-e[2], e[0], e[1]))


def test_chain_diagram():
    # a and b enter at 3 and merge at once; c enters at 1 and merges at once
    assert h0_multiset([(A, B, 3.0), (B, C, 1.0)]) == Counter({(3.0, 1.0): 1, (3.0, 3.0): 1,
                                                              (1.0, 1.0): 1})


def test_disjoint_edges_diagram():
    got = h0_multiset([(A, B, 4.0), (C, D, 2.0)])
    assert got == Counter({(4.0, 2.0): 1, (4.0, 4.0): 1, (2.0, 2.0): 2})


def test_h0_matches_threshold_sweep_small():
    rng = np.random.default_rng(1)
    for _ in range(50):
        edges = random_graph(rng)
        assert h0_multiset(edges) == threshold_sweep_h0(edges)


def test_tree_has_no_cycles():
    f = build_filtration(graph_from([(0, 1, 3.0), (1, 2, 2.0), (1, 3, 1.0)]))
    assert len(compute_h1_births(f)) == 0


def test_four_cycle():
    f = build_filtration(graph_from([(0, 1, 4.0), (1, 2, 3.0), (2, 3, 2.0), (3, 0, 1.0)]))
    h1 = compute_h1_births(f)
    assert list(zip(h1.birth.tolist(), h1.death.tolist())) == [(1.0, 1.0)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_euler_property(seed):
    edges = random_graph(np.random.default_rng(seed), distinct=False)
    assert len(compute_h1_births(build_filtration(graph_from(edges)))) == cycle_count(edges)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_dim0_count_equals_vertex_count(seed):
    edges = random_graph(np.random.default_rng(seed), distinct=False)
    verts = {v for s, t, _ in edges for v in (s, t)}
    diagram, _ = compute_h0(build_filtration(graph_from(edges)))
    assert len(diagram) == len(verts)
    assert np.all(diagram.birth >= diagram.death)


def test_extract_full_range_is_empty():
    edges = [(A, B, 4.0), (C, D, 2.0), (B, C, 3.0)]
    p = compute_persistence(build_filtration(graph_from(edges)))
    sub = extract_persistent_subgraph(p, 4.0 - 2.0)
    assert sub.edge_count == 0 and len(sub.vertices) == 0


def test_extract_strict_lambda_zero():
    p = compute_persistence(build_filtration(graph_from([(A, B, 4.0), (C, D, 2.0)])))
    sub = extract_persistent_subgraph(p, 0.0)
    assert set(sub.vertices.tolist()) == {A, B}
    assert sub.edge_count == 1
    assert sub.member_count == 1


def test_extract_member_count_matches_recount():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p = compute_persistence(build_filtration(graph_from(random_graph(rng))))
        d0 = p.diagram.dim == 0
        life = p.diagram.lifetime[d0]
        lam = float(np.median(life))
        sub = extract_persistent_subgraph(p, lam)
        assert sub.member_count == sum(1 for x in life.tolist() if x > lam)


def test_generator_union_covers_merge_subtree():
    # heavy pair 0-1, light pair 2-3, joined late; both lifetimes are positive
    edges = [(0, 1, 9.0), (2, 3, 5.0), (1, 2, 1.5), (3, 4, 1.0)]
    p = compute_persistence(build_filtration(graph_from(edges)))
    g = p.generator(2)  # founder of the 2-3 component
    assert set(g.vertices.tolist()) == {2, 3}
    assert [e[:2] for e in g.edges] == [(2, 3)]
    assert (g.birth, g.death) == (5.0, 1.5)
    whole = p.generator(0)
    assert set(whole.vertices.tolist()) == {0, 1, 2, 3, 4}


def test_wasserstein_identity_and_single_point():
    x = np.array([[3.0, 1.0], [2.0, 1.5]])
    assert wasserstein_distance(x, x) == 0.0
    assert wasserstein_distance(np.array([[3.0, 1.0]]), np.zeros((0, 2))) == pytest.approx(2 ** 0.5)


def test_wasserstein_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(40):
        x = rng.random((int(rng.integers(0, 6)), 2)) * 4
        y = rng.random((int(rng.integers(0, 6)), 2)) * 4
        assert wasserstein_distance(x, y) == pytest.approx(brute_wasserstein(x, y), abs=1e-9)


def test_wasserstein_other_exponents():
    rng = np.random.default_rng(6)
    for p, q in ((1, 1), (1, np.inf), (3, 2)):
        x, y = rng.random((3, 2)), rng.random((4, 2))
        assert wasserstein_distance(x, y, p, q) == pytest.approx(brute_wasserstein(x, y, p, q),
                                                                 abs=1e-9)


def test_interpolation_constant_path():
    from topodetect import nn
    model = nn.scaled_model(seed=0, filters=2, hidden=16)
    x = np.random.default_rng(0).random((28, 28))
    curve = interpolation_distance_curve(model, x, x, steps=3)
    assert [d for _, d in curve] == [0.0, 0.0, 0.0]


@pytest.mark.slow
def test_interpolation_mnist_pair(desk_model, mnist):
    curve = interpolation_distance_curve(desk_model, mnist.images[0], mnist.images[1], steps=5,
                                         lam=0.1)
    dist = np.array([d for _, d in curve])
    assert dist[0] == 0.0 and np.all(np.isfinite(dist)) and dist[-1] > 0
