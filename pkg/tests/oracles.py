"""Independent reference implementations used only by the tests.

They are written for clarity, not speed, and share no code with the
package beyond plain data containers.
"""
from __future__ import annotations

import itertools
from collections import Counter

import numpy as np


# -- graphs ----------------------------------------------------------------------


def components(vertices, edges):
    """Connected components of an undirected graph by breadth-first search."""
    adj = {v: set() for v in vertices}
    for s, t in edges:
        adj[s].add(t)
        adj[t].add(s)
    seen, comps = set(), []
    for v in sorted(adj):
        if v in seen:
            continue
        comp, frontier = {v}, [v]
        while frontier:
            u = frontier.pop()
            for n in adj[u]:
                if n not in comp:
                    comp.add(n)
                    frontier.append(n)
        seen |= comp
        comps.append(comp)
    return comps


def threshold_sweep_h0(edges):
    """Dim-0 diagram multiset from persistent Betti numbers of threshold graphs.

    ``edges`` is a list of ``(src, dst, weight)`` with distinct weights.
    Level ``i`` keeps edges of weight >= the i-th largest weight and the
    vertices they touch.  For ``i <= j`` the persistent Betti number
    ``beta(i, j)`` counts components at level ``j`` holding a vertex present
    at level ``i``; point multiplicities follow by inclusion-exclusion.
    Zero-length points (a vertex entering at a level where it is already
    merged) are the vertices added at level ``i`` minus the classes born
    there that survive the level.  Survivors die at the smallest weight.
    """
    levels = sorted({w for _, _, w in edges}, reverse=True)
    k = len(levels)
    vsets, csets = [], []
    for w in levels:
        kept = [(s, t) for s, t, x in edges if x >= w]
        verts = {v for e in kept for v in e}
        vsets.append(verts)
        csets.append(components(verts, kept))

    def beta(i, j):
        if i < 0:
            return 0
        return sum(1 for comp in csets[j] if comp & vsets[i])

    points = Counter()
    for i in range(k):
        new = len(vsets[i]) - (len(vsets[i - 1]) if i else 0)
        surviving = beta(i, i) - beta(i - 1, i)
        if new - surviving:
            points[(levels[i], levels[i])] += new - surviving
        for j in range(i + 1, k):
            mult = beta(i, j - 1) - beta(i, j) - beta(i - 1, j - 1) + beta(i - 1, j)
            if mult:
                points[(levels[i], levels[j])] += mult
        essential = beta(i, k - 1) - beta(i - 1, k - 1)
        if essential:
            points[(levels[i], levels[-1])] += essential
    return points


def cycle_count(edges):
    """``|E| - |V| + #components``."""
    verts = {v for s, t, _ in edges for v in (s, t)}
    return len(edges) - len(verts) + len(components(verts, [(s, t) for s, t, _ in edges]))


# -- Wasserstein -------------------------------------------------------------------


def _lq(a, b, q):
    d = np.abs(np.asarray(a, float) - np.asarray(b, float))
    return float(d.max()) if np.isinf(q) else float((d ** q).sum() ** (1.0 / q))


def _to_diag(pt, q):
    m = (pt[0] + pt[1]) / 2.0
    return _lq(pt, (m, m), q)


def brute_wasserstein(x, y, p=2.0, q=2.0):
    """Minimum over every partial matching; unmatched points go to the diagonal."""
    x = [tuple(map(float, pt)) for pt in x]
    y = [tuple(map(float, pt)) for pt in y]
    best = np.inf
    for k in range(min(len(x), len(y)) + 1):
        for xs in itertools.combinations(range(len(x)), k):
            for ys in itertools.permutations(range(len(y)), k):
                cost = sum(_lq(x[i], y[j], q) ** p for i, j in zip(xs, ys))
                cost += sum(_to_diag(x[i], q) ** p for i in range(len(x)) if i not in xs)
                cost += sum(_to_diag(y[j], q) ** p for j in range(len(y)) if j not in ys)
                best = min(best, cost)
    return best ** (1.0 / p)


# -- network pieces ------------------------------------------------------------------


def dense_edges(a, W):
    """All (i, j, a_i * W_ij) with nonzero product, by explicit loops."""
    out = []
    for i in range(W.shape[0]):
        for j in range(W.shape[1]):
            v = a[i] * W[i, j]
            if v != 0:
                out.append((i, j, v))
    return out


def conv_same_loops(x, weight, bias, stride):
    """Direct 'same' convolution of a (C, H, W) input; also returns the edges.

    Edges are ``(src, dst, value)`` with channel-major flat indices into the
    input and output, ``value = x[src] * filter tap``; padded taps are skipped.
    """
    C, H, W = x.shape
    F, _, k, _ = weight.shape
    oh = -(-H // stride)
    ow = -(-W // stride)
    pad_h = max((oh - 1) * stride + k - H, 0) // 2
    pad_w = max((ow - 1) * stride + k - W, 0) // 2
    out = np.zeros((F, oh, ow))
    edges = []
    for f in range(F):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[f]
                for c in range(C):
                    for dy in range(k):
                        for dx in range(k):
                            iy = oy * stride + dy - pad_h
                            ix = ox * stride + dx - pad_w
                            if 0 <= iy < H and 0 <= ix < W:
                                v = x[c, iy, ix] * weight[f, c, dy, dx]
                                acc += v
                                if v != 0:
                                    edges.append((c * H * W + iy * W + ix,
                                                  f * oh * ow + oy * ow + ox, v))
                out[f, oy, ox] = acc
    return out, edges


def central_difference(fn, x, eps=1e-6):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        up = x.copy().reshape(-1)
        dn = x.copy().reshape(-1)
        up[i] += eps
        dn[i] -= eps
        flat[i] = (fn(up.reshape(x.shape)) - fn(dn.reshape(x.shape))) / (2 * eps)
    return grad


# -- detection ---------------------------------------------------------------------


def recount_signature(vertex_sets):
    """{vertex: (count, dense rank)} with rank 1 for the least frequent."""
    counts = Counter()
    for vs in vertex_sets:
        counts.update(set(int(v) for v in vs))
    levels = sorted(set(counts.values()))
    return {v: (c, levels.index(c) + 1) for v, c in counts.items()}


def recount_similarity(table, vertices):
    if not table:
        return 0.0
    return sum(table.get(int(v), (0, 0))[1] for v in set(vertices)) / len(table)
