import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).parent))

from topodetect.graph import InducedGraph  # noqa: E402

IMAGES = ROOT / "data" / "mnist5k-images-idx3-ubyte.gz"
LABELS = ROOT / "data" / "mnist5k-labels-idx1-ubyte.gz"

# criterion number -> (passed, detail); printed at the end of the session
ACCEPTANCE = {}


def graph_from(edges):
    """InducedGraph from a list of (src, dst, weight)."""
    s, d, w = zip(*edges)
    return InducedGraph(np.array(s, dtype=np.int64), np.array(d, dtype=np.int64),
                        np.array(w, dtype=np.float64), np.zeros(len(edges), dtype=np.int64))


def random_graph(rng, max_vertices=12, max_edges=None, distinct=True):
    n = int(rng.integers(2, max_vertices + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = int(rng.integers(1, (max_edges or len(pairs)) + 1))
    m = min(m, len(pairs))
    pick = rng.choice(len(pairs), size=m, replace=False)
    if distinct:
        w = rng.permutation(np.arange(1, m + 1)) + rng.random(m) * 0.5
    else:
        w = rng.integers(1, 4, size=m).astype(float)
    return [(pairs[k][0], pairs[k][1], float(x)) for k, x in zip(pick, w)]


@pytest.fixture(scope="session")
def mnist():
    from topodetect.idx import load_idx
    return load_idx(IMAGES, LABELS)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One full desk-scale pipeline run shared by the slow tests."""
    from topodetect.pipeline import RunConfig, run_pipeline
    out = tmp_path_factory.mktemp("desk_run_a")
    cfg = RunConfig(images=str(IMAGES), labels=str(LABELS))
    summary = run_pipeline(cfg, out)
    return cfg, out, summary


@pytest.fixture(scope="session")
def desk_model(desk_run):
    from topodetect import nn
    return nn.load_model(desk_run[1] / "model.tdnn")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
