"""Input-induced computation graphs.

Feeding an input through the network realises, for every connection, the
value ``activation * weight`` that flows along it.  Those values become edge
weights; connections whose value is exactly zero (dead ReLU, black pixel)
are absent.  Biases have no source neuron and produce no edges.

Global vertex ids: input pixels row-major first, then each layer's output
neurons in layer order (conv outputs channel-major, then row-major).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import ForwardTrace, NetworkModel, same_padding


class DegenerateGraphError(ValueError):
    """Pruning left no edges."""


@dataclass(frozen=True, eq=False)
class InducedGraph:
    src: np.ndarray  # int64 global vertex ids
    dst: np.ndarray
    weight: np.ndarray  # float64, strictly positive
    layer: np.ndarray  # int64 layer index of each edge

    @property
    def edge_count(self) -> int:
        return len(self.weight)

    @property
    def vertices(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))

    @property
    def omega(self) -> float:
        return float(self.weight.max())

    @property
    def min_weight(self) -> float:
        return float(self.weight.min())

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))


def induce_fc_edges(prev_activations, weight_matrix):
    """Signed edge values of a dense layer.

    Returns ``(src, dst, raw)`` with local indices: ``src`` indexes the
    flattened previous activations, ``dst`` the layer outputs.
    """
    a = np.asarray(prev_activations, dtype=np.float64).ravel()
    w = np.asarray(weight_matrix, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != a.size:
        raise ValueError(f"activations of size {a.size} do not fit weights {w.shape}")
    active = np.flatnonzero(a)
    raw = a[active, None] * w[active]
    i, j = np.nonzero(raw)
    return active[i].astype(np.int64), j.astype(np.int64), raw[i, j]


def induce_conv_edges(prev_activations, filters, stride: int = 1):
    """Signed edge values of a "same"-padded convolution.

    ``prev_activations`` is (C, H, W) or (H, W); ``filters`` is (F, C, k, k).
    Every output neuron receives one edge per in-bounds receptive-field
    position; padding positions produce nothing.  Returns local
    ``(src, dst, raw)`` indices into the flattened input and output tensors.
    """
    a = np.asarray(prev_activations, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    f = np.asarray(filters, dtype=np.float64)
    if f.ndim != 4 or f.shape[1] != a.shape[0] or f.shape[2] != f.shape[3]:
        raise ValueError(f"filters {f.shape} do not fit activations {a.shape}")
    n_filters, channels, k, _ = f.shape
    _, h, w = a.shape
    ho, ph, _ = same_padding(h, k, stride)
    wo, pw, _ = same_padding(w, k, stride)

    oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    srcs, dsts, raws = [], [], []
    for ki in range(k):
        for kj in range(k):
            yi = oi * stride + ki - ph
            xj = oj * stride + kj - pw
            inside = (yi >= 0) & (yi < h) & (xj >= 0) & (xj < w)
            out_pos = (oi * wo + oj)[inside]
            yi, xj = yi[inside], xj[inside]
            for c in range(channels):
                act = a[c, yi, xj]
                nz = act != 0
                if not nz.any():
                    continue
                act, pos = act[nz], out_pos[nz]
                in_pos = (c * h + yi[nz]) * w + xj[nz]
                raw = act[None, :] * f[:, c, ki, kj][:, None]  # (F, n)
                fi, ni = np.nonzero(raw)
                srcs.append(in_pos[ni])
                dsts.append(fi * (ho * wo) + pos[ni])
                raws.append(raw[fi, ni])
    if not srcs:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0)
    src = np.concatenate(srcs).astype(np.int64)
    dst = np.concatenate(dsts).astype(np.int64)
    raw = np.concatenate(raws)
    order = np.lexsort((dst, src))
    return src[order], dst[order], raw[order]


def raw_layer_edges(model: NetworkModel, trace: ForwardTrace):
    """Yield ``(layer_index, src_global, dst_global, raw)`` for every layer."""
    offsets = model.vertex_offsets
    acts = trace.activations
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            s, d, raw = induce_conv_edges(acts[i], layer.weight, layer.stride)
        else:
            s, d, raw = induce_fc_edges(acts[i], layer.weight)
        yield i, s + offsets[i], d + offsets[i + 1], raw


def prune_layer(weights: np.ndarray, rho: float) -> np.ndarray:
    """Mask keeping weights at or above the layer's rho-quantile.

    The quantile is the linearly interpolated empirical one; ties at the
    cutoff are kept, so ``rho = 0`` keeps everything.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if weights.size == 0:
        return np.zeros(0, dtype=bool)
    cutoff = np.quantile(weights, rho)
    return weights >= cutoff


def build_induced_graph(model: NetworkModel, trace: ForwardTrace, rho: float = 0.99) -> InducedGraph:
    srcs, dsts, weights, layers = [], [], [], []
    for i, s, d, raw in raw_layer_edges(model, trace):
        w = np.abs(raw)
        keep = prune_layer(w, rho)
        srcs.append(s[keep])
        dsts.append(d[keep])
        weights.append(w[keep])
        layers.append(np.full(int(keep.sum()), i, dtype=np.int64))
    graph = InducedGraph(
        np.concatenate(srcs), np.concatenate(dsts), np.concatenate(weights), np.concatenate(layers)
    )
    if graph.edge_count == 0:
        raise DegenerateGraphError("no edges survive pruning")
    return graph


# -- text dump -------------------------------------------------------------


def write_graph(graph: InducedGraph, path, header: dict | None = None) -> None:
    """One edge per line: ``src dst weight layer``; '#' lines carry metadata."""
    with open(path, "w") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key} {value}\n")
        fh.write(f"# omega {graph.omega!r}\n")
        fh.write(f"# min_weight {graph.min_weight!r}\n")
        for s, d, w, l in zip(graph.src.tolist(), graph.dst.tolist(),
                              graph.weight.tolist(), graph.layer.tolist()):
            fh.write(f"{s} {d} {w!r} {l}\n")


def read_graph(path) -> InducedGraph:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        s, d, w, l = line.split()
        rows.append((int(s), int(d), float(w), int(l)))
    if not rows:
        raise DegenerateGraphError(f"{path}: graph has no edges")
    src, dst, w, l = zip(*rows)
    return InducedGraph(
        np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
        np.array(w, dtype=np.float64), np.array(l, dtype=np.int64),
    )
