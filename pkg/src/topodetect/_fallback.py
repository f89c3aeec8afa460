"""Pure-Python filtration sweep, used when the compiled kernel is unavailable.

Must stay line-for-line equivalent to ``_kernels.pyx``.
"""
import numpy as np


def sweep(src, dst, weight, n_vertices):
    """Union-find sweep over edges already sorted in filtration order.

    Vertices are local indices ``0..n_vertices-1`` whose order matches the
    global vertex ids, so "larger id" comparisons are valid on them.

    Returns ``(birth, death, death_index, gen_parent, owner, is_cycle)``.
    ``death``/``death_index`` are NaN/-1 for components that never die and
    ``gen_parent`` is -1 for them.
    """
    src = np.asarray(src, dtype=np.int64).tolist()
    dst = np.asarray(dst, dtype=np.int64).tolist()
    weight = np.asarray(weight, dtype=np.float64).tolist()
    n_edges = len(src)

    parent = list(range(n_vertices))
    size = [1] * n_vertices
    founder = list(range(n_vertices))  # founder of the set rooted here
    present = [False] * n_vertices
    birth = [0.0] * n_vertices
    death = [float("nan")] * n_vertices
    death_index = [-1] * n_vertices
    gen_parent = [-1] * n_vertices
    owner = [0] * n_edges
    is_cycle = [False] * n_edges

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k in range(n_edges):
        u = src[k]
        v = dst[k]
        w = weight[k]
        if not present[u]:
            present[u] = True
            birth[u] = w
        if not present[v]:
            present[v] = True
            birth[v] = w
        ru = find(u)
        rv = find(v)
        if ru == rv:
            owner[k] = founder[ru]
            is_cycle[k] = True
            continue
        fu = founder[ru]
        fv = founder[rv]
        # elder rule: the later-born component dies; equal births -> larger id dies
        if birth[fu] < birth[fv] or (birth[fu] == birth[fv] and fu > fv):
            dying, living = fu, fv
        else:
            dying, living = fv, fu
        death[dying] = w
        death_index[dying] = k
        gen_parent[dying] = living
        owner[k] = living
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
        founder[ru] = living

    return (
        np.array(birth, dtype=np.float64),
        np.array(death, dtype=np.float64),
        np.array(death_index, dtype=np.int64),
        np.array(gen_parent, dtype=np.int64),
        np.array(owner, dtype=np.int64),
        np.array(is_cycle, dtype=bool),
    )
