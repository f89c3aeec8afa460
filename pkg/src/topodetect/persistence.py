"""Persistent homology of induced graphs under a descending-weight filtration.

Edges enter heaviest first.  A vertex enters immediately before its heaviest
incident edge, so its birth value is that edge's weight.  No 2-simplices are
ever added, so H0 is tracked by union-find and every edge that closes a
loop starts an H1 class that never dies.  Classes alive at the end of the
filtration are given death = smallest edge weight instead of infinity.

Each vertex founds exactly one H0 component, so dim-0 points are indexed by
(local) vertex.  The sweep also records the merge tree: ``gen_parent[v]`` is
the component that ``v``'s component died into, and ``owner[e]`` the
component that was alive and contained edge ``e`` right after it was added.
The generator subgraph of component ``g`` is the subtree of ``g`` in that
tree: every vertex and every edge whose chain of parents reaches ``g``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _fallback
from .graph import InducedGraph, build_induced_graph
from .nn import forward

if os.environ.get("TOPODETECT_PURE_PYTHON"):
    _sweep = _fallback.sweep
    BACKEND = "python"
else:
    try:
        from ._kernels import sweep as _sweep

        BACKEND = "cython"
    except ImportError:
        _sweep = _fallback.sweep
        BACKEND = "python"


def available_backends() -> dict:
    backends = {"python": _fallback.sweep}
    try:
        from ._kernels import sweep

        backends["cython"] = sweep
    except ImportError:
        pass
    return backends


@dataclass(frozen=True, eq=False)
class Filtration:
    """Edges in filtration order over compact local vertex indices.

    ``vertex_ids[i]`` is the global id of local vertex ``i``; local order
    follows global order.
    """

    vertex_ids: np.ndarray
    src: np.ndarray  # local indices, filtration order
    dst: np.ndarray
    weight: np.ndarray
    layer: np.ndarray | None = None

    @property
    def vertex_count(self) -> int:
        return len(self.vertex_ids)

    @property
    def edge_count(self) -> int:
        return len(self.weight)

    @property
    def min_weight(self) -> float:
        return float(self.weight[-1])

    @property
    def omega(self) -> float:
        return float(self.weight[0])

    def simplices(self) -> list:
        """Filtration as ``("v", id)`` and ``("e", src, dst, weight)`` entries."""
        seen = np.zeros(self.vertex_count, dtype=bool)
        out = []
        ids = self.vertex_ids.tolist()
        for s, d, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            for v in (s, d):
                if not seen[v]:
                    seen[v] = True
                    out.append(("v", ids[v]))
            out.append(("e", ids[s], ids[d], w))
        return out

    @cached_property
    def sweep(self):
        return _sweep(self.src, self.dst, self.weight, self.vertex_count)


def build_filtration(graph: InducedGraph) -> Filtration:
    """Order edges by (weight desc, src asc, dst asc) using global ids."""
    if graph.edge_count == 0:
        raise ValueError("cannot filter an empty graph")
    order = np.lexsort((graph.dst, graph.src, -graph.weight))
    vertex_ids, inverse = np.unique(np.concatenate([graph.src, graph.dst]), return_inverse=True)
    n = graph.edge_count
    local_src = inverse[:n][order].astype(np.int64)
    local_dst = inverse[n:][order].astype(np.int64)
    layer = graph.layer[order] if graph.layer is not None else None
    return Filtration(vertex_ids.astype(np.int64), local_src, local_dst, graph.weight[order], layer)


@dataclass(frozen=True, eq=False)
class GeneratorSubgraph:
    vertices: np.ndarray  # global ids
    edges: list  # (src, dst, weight) with global ids
    birth: float
    death: float


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    dim: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    generator_id: np.ndarray  # local vertex for dim 0, -1 for dim 1
    omega: float
    min_weight: float

    def __len__(self):
        return len(self.birth)

    @property
    def lifetime(self) -> np.ndarray:
        return self.birth - self.death

    def select(self, dim: int = 0, min_lifetime: float | None = None) -> np.ndarray:
        """(n, 2) array of (birth, death) for one dimension."""
        mask = self.dim == dim
        if min_lifetime is not None:
            mask &= self.lifetime > min_lifetime
        return np.column_stack([self.birth[mask], self.death[mask]])

    def pairs(self, dim: int | None = None) -> list:
        mask = np.ones(len(self), dtype=bool) if dim is None else self.dim == dim
        return sorted(zip(self.birth[mask].tolist(), self.death[mask].tolist()))


@dataclass(frozen=True, eq=False)
class PersistentSubgraph:
    vertices: np.ndarray  # global ids
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    lam: float
    member_count: int
    omega: float  # heaviest edge of the whole induced graph

    @property
    def edge_count(self) -> int:
        return len(self.weight)

    @property
    def average_edge_weight(self) -> float:
        return float(self.weight.mean()) if len(self.weight) else 0.0


@dataclass(frozen=True, eq=False)
class Persistence:
    """H0/H1 diagram of a filtration together with its generator table."""

    filtration: Filtration
    diagram: PersistenceDiagram
    gen_parent: np.ndarray
    death_index: np.ndarray
    owner: np.ndarray
    is_cycle: np.ndarray

    def covered(self, selected: np.ndarray) -> np.ndarray:
        """Mark every generator that is selected or has a selected ancestor."""
        cov = np.asarray(selected, dtype=bool).copy()
        up = self.gen_parent.copy()
        # pointer doubling: after round r, cov[v] ORs ancestors up to 2**r away
        while (up >= 0).any():
            has = up >= 0
            nxt = cov.copy()
            nxt[has] |= cov[up[has]]
            jumped = np.full_like(up, -1)
            jumped[has] = up[up[has]]
            cov, up = nxt, jumped
        return cov

    def generator(self, g: int) -> GeneratorSubgraph:
        selected = np.zeros(self.filtration.vertex_count, dtype=bool)
        selected[g] = True
        return self._subgraph_from(selected, "generator")

    def _subgraph_from(self, selected, kind):
        f = self.filtration
        cov = self.covered(selected)
        vmask = cov
        emask = cov[self.owner]
        ids = f.vertex_ids
        src, dst, w = ids[f.src[emask]], ids[f.dst[emask]], f.weight[emask]
        if kind == "generator":
            g = int(np.flatnonzero(selected)[0])
            return GeneratorSubgraph(
                ids[vmask], list(zip(src.tolist(), dst.tolist(), w.tolist())),
                float(self.diagram.birth[g]), float(self._death0[g]),
            )
        return ids[vmask], src, dst, w

    @cached_property
    def _death0(self):
        d0 = self.diagram.dim == 0
        out = np.empty(self.filtration.vertex_count)
        out[self.diagram.generator_id[d0]] = self.diagram.death[d0]
        return out


def compute_persistence(filtration: Filtration) -> Persistence:
    birth, death, death_index, gen_parent, owner, is_cycle = filtration.sweep
    lo = filtration.min_weight
    death = np.where(np.isnan(death), lo, death)
    n = filtration.vertex_count
    cyc = np.flatnonzero(is_cycle)
    diagram = PersistenceDiagram(
        dim=np.concatenate([np.zeros(n, dtype=np.int64), np.ones(len(cyc), dtype=np.int64)]),
        birth=np.concatenate([birth, filtration.weight[cyc]]),
        death=np.concatenate([death, np.full(len(cyc), lo)]),
        generator_id=np.concatenate([np.arange(n, dtype=np.int64), np.full(len(cyc), -1)]),
        omega=filtration.omega,
        min_weight=lo,
    )
    return Persistence(filtration, diagram, gen_parent, death_index, owner, is_cycle)


def compute_h0(filtration: Filtration):
    """Dim-0 diagram and generator table (a :class:`Persistence`)."""
    p = compute_persistence(filtration)
    d = p.diagram
    m = d.dim == 0
    h0 = PersistenceDiagram(d.dim[m], d.birth[m], d.death[m], d.generator_id[m],
                            d.omega, d.min_weight)
    return h0, p


def compute_h1_births(filtration: Filtration) -> PersistenceDiagram:
    d = compute_persistence(filtration).diagram
    m = d.dim == 1
    return PersistenceDiagram(d.dim[m], d.birth[m], d.death[m], d.generator_id[m],
                              d.omega, d.min_weight)


def extract_persistent_subgraph(persistence: Persistence, lam: float,
                                include_essential: bool = True) -> PersistentSubgraph:
    """Union of the generator subgraphs of dim-0 points with lifetime > lam.

    With ``include_essential=False`` components that never die (whose death
    is only the truncation value) are left out.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    d = persistence.diagram
    d0 = d.dim == 0
    selected = np.zeros(persistence.filtration.vertex_count, dtype=bool)
    keep = d.lifetime[d0] > lam
    if not include_essential:
        keep &= persistence.gen_parent[d.generator_id[d0]] >= 0
    members = d.generator_id[d0][keep]
    selected[members] = True
    vertices, src, dst, w = persistence._subgraph_from(selected, "union")
    return PersistentSubgraph(vertices, src, dst, w, float(lam), int(len(members)),
                              persistence.filtration.omega)


def persistent_subgraph(graph: InducedGraph, lam: float) -> PersistentSubgraph:
    return extract_persistent_subgraph(compute_persistence(build_filtration(graph)), lam)


# -- Wasserstein distance ---------------------------------------------------


def _ground(a: np.ndarray, b: np.ndarray, q: float) -> np.ndarray:
    diff = np.abs(a[:, None, :] - b[None, :, :])
    if np.isinf(q):
        return diff.max(axis=2)
    return (diff ** q).sum(axis=2) ** (1.0 / q)


def diagonal_distance(points: np.ndarray, q: float = 2.0) -> np.ndarray:
    """L_q distance from each (b, d) to its projection ((b+d)/2, (b+d)/2)."""
    half = np.abs(points[:, 0] - points[:, 1]) / 2.0
    if np.isinf(q):
        return half
    return half * 2.0 ** (1.0 / q)


def _as_points(diagram, dim):
    if isinstance(diagram, PersistenceDiagram):
        return diagram.select(dim)
    pts = np.asarray(diagram, dtype=np.float64).reshape(-1, 2)
    return pts


def wasserstein_distance(x, y, p: float = 2.0, q: float = 2.0, dim: int = 0) -> float:
    """p-Wasserstein distance with L_q ground metric between two diagrams.

    Accepts :class:`PersistenceDiagram` objects (restricted to ``dim``) or
    (n, 2) arrays of (birth, death).  Points may be matched to the diagonal.
    Points lying on the diagonal are dropped first; that does not change
    the optimum.
    """
    a = _as_points(x, dim)
    b = _as_points(y, dim)
    a = a[a[:, 0] != a[:, 1]]
    b = b[b[:, 0] != b[:, 1]]
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    da = diagonal_distance(a, q) ** p
    db = diagonal_distance(b, q) ** p
    if n == 0:
        return float(db.sum() ** (1.0 / p))
    if m == 0:
        return float(da.sum() ** (1.0 / p))
    cost = np.zeros((n + m, m + n))
    cost[:n, :m] = _ground(a, b, q) ** p
    cost[:n, m:] = np.inf
    cost[np.arange(n), m + np.arange(n)] = da
    cost[n:, :m] = np.inf
    cost[n + np.arange(m), np.arange(m)] = db
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() ** (1.0 / p))


def input_persistence(model, x, rho: float = 0.99) -> Persistence:
    """Forward ``x``, induce and prune its graph, and run the filtration."""
    graph = build_induced_graph(model, forward(model, x), rho)
    return compute_persistence(build_filtration(graph))


def interpolation_distance_curve(model, x_a, x_b, steps: int = 11, rho: float = 0.99,
                                 lam: float = 0.0):
    """W2 distance from the diagram of ``x_a`` along the segment to ``x_b``.

    Only dim-0 points with lifetime > ``lam`` take part.  Returns a list of
    ``(t, distance)``.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.shape != x_b.shape:
        raise ValueError(f"shape mismatch {x_a.shape} vs {x_b.shape}")
    if steps < 2:
        raise ValueError("need at least 2 steps")
    base = input_persistence(model, x_a, rho).diagram.select(0, lam)
    curve = []
    for t in np.linspace(0.0, 1.0, steps):
        pts = input_persistence(model, (1 - t) * x_a + t * x_b, rho).diagram.select(0, lam)
        curve.append((float(t), wasserstein_distance(base, pts)))
    return curve
