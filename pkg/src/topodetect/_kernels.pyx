# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled filtration sweep.  Semantics are defined by ``_fallback.sweep``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def sweep(src, dst, weight, Py_ssize_t n_vertices):
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef const cnp.int64_t[::1] t = np.ascontiguousarray(dst, dtype=np.int64)
    cdef const double[::1] wt = np.ascontiguousarray(weight, dtype=np.float64)
    cdef Py_ssize_t n_edges = s.shape[0]

    parent_arr = np.arange(n_vertices, dtype=np.intp)
    size_arr = np.ones(n_vertices, dtype=np.intp)
    founder_arr = np.arange(n_vertices, dtype=np.intp)
    present_arr = np.zeros(n_vertices, dtype=np.uint8)
    birth_arr = np.zeros(n_vertices, dtype=np.float64)
    death_arr = np.full(n_vertices, np.nan, dtype=np.float64)
    death_index_arr = np.full(n_vertices, -1, dtype=np.int64)
    gen_parent_arr = np.full(n_vertices, -1, dtype=np.int64)
    owner_arr = np.zeros(n_edges, dtype=np.int64)
    cycle_arr = np.zeros(n_edges, dtype=np.uint8)

    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t[::1] size = size_arr
    cdef Py_ssize_t[::1] founder = founder_arr
    cdef cnp.uint8_t[::1] present = present_arr
    cdef double[::1] birth = birth_arr
    cdef double[::1] death = death_arr
    cdef cnp.int64_t[::1] death_index = death_index_arr
    cdef cnp.int64_t[::1] gen_parent = gen_parent_arr
    cdef cnp.int64_t[::1] owner = owner_arr
    cdef cnp.uint8_t[::1] is_cycle = cycle_arr

    cdef Py_ssize_t k, u, v, ru, rv, fu, fv, dying, living, tmp
    cdef double w

    with nogil:
        for k in range(n_edges):
            u = s[k]
            v = t[k]
            w = wt[k]
            if not present[u]:
                present[u] = 1
                birth[u] = w
            if not present[v]:
                present[v] = 1
                birth[v] = w
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru == rv:
                owner[k] = founder[ru]
                is_cycle[k] = 1
                continue
            fu = founder[ru]
            fv = founder[rv]
            if birth[fu] < birth[fv] or (birth[fu] == birth[fv] and fu > fv):
                dying = fu
                living = fv
            else:
                dying = fv
                living = fu
            death[dying] = w
            death_index[dying] = k
            gen_parent[dying] = living
            owner[k] = living
            if size[ru] < size[rv]:
                tmp = ru
                ru = rv
                rv = tmp
            parent[rv] = ru
            size[ru] += size[rv]
            founder[ru] = living

    return (birth_arr, death_arr, death_index_arr, gen_parent_arr, owner_arr,
            cycle_arr.astype(bool))
