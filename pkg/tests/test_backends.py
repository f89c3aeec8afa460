import numpy as np
import pytest

from topodetect import nn
from topodetect.graph import build_induced_graph
from topodetect.persistence import BACKEND, available_backends, build_filtration

from conftest import graph_from, random_graph

BACKENDS = available_backends()


def run_all(f):
    return {name: fn(f.src, f.dst, f.weight, f.vertex_count) for name, fn in BACKENDS.items()}


def assert_same(results):
    ref = results["python"]
    for name, out in results.items():
        for a, b in zip(ref, out):
            assert np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True), name


def test_compiled_backend_is_built():
    # the extension is optional at install time but expected in this checkout
    assert "cython" in BACKENDS and BACKEND == "cython"


@pytest.mark.parametrize("distinct", [True, False])
def test_backends_agree_on_random_graphs(distinct):
    rng = np.random.default_rng(7)
    for _ in range(200):
        assert_same(run_all(build_filtration(graph_from(random_graph(rng, 15, distinct=distinct)))))


def test_backends_agree_on_induced_graph():
    model = nn.scaled_model(seed=0)
    x = np.random.default_rng(0).random((28, 28))
    f = build_filtration(build_induced_graph(model, nn.forward(model, x), 0.9))
    assert_same(run_all(f))
