"""Four adversary detectors built on lambda-persistent subgraphs.

* max node match: the class whose training signature best matches the
  input's subgraph disagrees with the network's prediction;
* average node match: the input matches *all* classes unusually well;
* edge count: the subgraph has unusually many edges;
* average edge weight: the mean embedded edge length ``omega - |w|`` of the
  subgraph is unusually large.

Signatures and statistics come from clean, labelled training inputs.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .persistence import PersistentSubgraph, input_persistence, extract_persistent_subgraph

log = logging.getLogger(__name__)

METHODS = ("MaxNodeMatch", "AvgNodeMatch", "EdgeCount", "AvgEdgeWeight")


@dataclass(frozen=True, eq=False)
class ClassSignature:
    class_index: int
    vertex_ids: np.ndarray  # sorted global ids
    counts: np.ndarray
    ranks: np.ndarray

    @property
    def size(self) -> int:
        return len(self.vertex_ids)

    def rank_of(self, vertices) -> np.ndarray:
        """Rank of each vertex, 0 for vertices outside the signature."""
        vertices = np.asarray(vertices, dtype=np.int64)
        if self.size == 0:
            return np.zeros(len(vertices), dtype=np.int64)
        pos = np.searchsorted(self.vertex_ids, vertices)
        pos = np.minimum(pos, self.size - 1)
        hit = self.vertex_ids[pos] == vertices
        return np.where(hit, self.ranks[pos], 0)


def dense_rank(counts: np.ndarray) -> np.ndarray:
    """Least frequent -> 1; equal counts share a rank; no gaps."""
    levels = np.unique(counts)
    return (np.searchsorted(levels, counts) + 1).astype(np.int64)


def signature_from_vertex_sets(class_index: int, vertex_sets, rank_mode: str = "dense") -> ClassSignature:
    if vertex_sets:
        allv = np.concatenate([np.unique(np.asarray(v, dtype=np.int64)) for v in vertex_sets])
    else:
        allv = np.zeros(0, dtype=np.int64)
    ids, counts = np.unique(allv, return_counts=True)
    if rank_mode == "dense":
        ranks = dense_rank(counts)
    elif rank_mode == "count":
        ranks = counts.astype(np.int64)
    else:
        raise ValueError(f"unknown rank mode {rank_mode!r}")
    return ClassSignature(int(class_index), ids, counts.astype(np.int64), ranks)


def signatures_from_subgraphs(subgraphs, labels, class_count: int, rank_mode: str = "dense") -> list:
    labels = np.asarray(labels, dtype=np.int64)
    sigs = []
    for i in range(class_count):
        members = [subgraphs[j].vertices for j in np.flatnonzero(labels == i)]
        if not members:
            raise ValueError(f"class {i} has no training examples")
        sigs.append(signature_from_vertex_sets(i, members, rank_mode))
    return sigs


def input_subgraph(model, x, lam: float, rho: float) -> PersistentSubgraph:
    return extract_persistent_subgraph(input_persistence(model, x, rho), lam)


def build_signatures(model, images, labels, lam: float = 0.1, rho: float = 0.99,
                     rank_mode: str = "dense") -> list:
    subgraphs = [input_subgraph(model, x, lam, rho) for x in images]
    return signatures_from_subgraphs(subgraphs, labels, model.class_count, rank_mode)


def similarity(sig: ClassSignature, subgraph) -> float:
    """Sum of signature ranks of the subgraph's vertices over signature size."""
    vertices = subgraph.vertices if hasattr(subgraph, "vertices") else subgraph
    if sig.size == 0:
        warnings.warn(f"class {sig.class_index} has an empty signature", RuntimeWarning)
        return 0.0
    return float(sig.rank_of(np.unique(vertices)).sum() / sig.size)


def similarities(signatures, subgraph) -> np.ndarray:
    return np.array([similarity(s, subgraph) for s in signatures])


def embedded_average_weight(subgraph: PersistentSubgraph) -> float:
    """Mean of ``omega - |w|`` over the subgraph's edges (0 if empty)."""
    if subgraph.edge_count == 0:
        return 0.0
    return float(np.mean(subgraph.omega - subgraph.weight))


@dataclass(frozen=True)
class DetectorStats:
    mu_match: float
    sigma_match: float
    median_edges: float
    percentile_edges: float
    pi: float
    mu_weight: float
    sigma_weight: float
    extra: dict = field(default_factory=dict, compare=False)

    FIELDS = ("mu_match", "sigma_match", "median_edges", "percentile_edges", "pi",
              "mu_weight", "sigma_weight")

    @property
    def edge_threshold(self) -> float:
        return self.median_edges + self.percentile_edges


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("cannot compute statistics of an empty set")
    sigma = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), sigma


def compute_stats(signatures, train_subgraphs, val_subgraphs, pi: float = 0.9) -> DetectorStats:
    """Match statistics from the validation split, edge statistics from training."""
    if not 0 <= pi <= 1:
        raise ValueError("pi must lie in [0, 1]")
    s_avg = [similarities(signatures, g).mean() for g in val_subgraphs]
    mu_m, sd_m = _mean_std(s_avg)
    counts = np.array([g.edge_count for g in train_subgraphs], dtype=np.float64)
    if len(counts) == 0:
        raise ValueError("no training subgraphs")
    mu_w, sd_w = _mean_std([embedded_average_weight(g) for g in train_subgraphs])
    return DetectorStats(
        mu_match=mu_m, sigma_match=sd_m,
        median_edges=float(np.median(counts)),
        percentile_edges=float(np.percentile(counts, 100 * pi)),
        pi=float(pi), mu_weight=mu_w, sigma_weight=sd_w,
    )


@dataclass(frozen=True)
class DetectionVerdict:
    method: str
    flagged: bool
    score: float
    predicted_class: int
    signature_class: int = -1


def detect_max_node_match(subgraph, predicted_class: int, signatures) -> DetectionVerdict:
    s = similarities(signatures, subgraph)
    best = int(np.argmax(s))  # first maximum -> lowest class index on ties
    return DetectionVerdict("MaxNodeMatch", best != predicted_class, float(s[best]),
                            int(predicted_class), best)


def detect_avg_node_match(subgraph, predicted_class: int, signatures, stats: DetectorStats) -> DetectionVerdict:
    score = float(similarities(signatures, subgraph).mean())
    return DetectionVerdict("AvgNodeMatch", score > stats.mu_match + stats.sigma_match, score,
                            int(predicted_class))


def detect_edge_count(subgraph, stats: DetectorStats, predicted_class: int = -1) -> DetectionVerdict:
    count = subgraph.edge_count if hasattr(subgraph, "edge_count") else int(subgraph)
    return DetectionVerdict("EdgeCount", count > stats.edge_threshold, float(count),
                            int(predicted_class))


def detect_avg_edge_weight(subgraph, stats: DetectorStats, predicted_class: int = -1) -> DetectionVerdict:
    if hasattr(subgraph, "edge_count"):
        if subgraph.edge_count == 0:
            warnings.warn("empty persistent subgraph; average edge weight taken as 0",
                          RuntimeWarning)
            return DetectionVerdict("AvgEdgeWeight", False, 0.0, int(predicted_class))
        score = embedded_average_weight(subgraph)
    else:
        score = float(subgraph)
    return DetectionVerdict("AvgEdgeWeight", score > stats.mu_weight + stats.sigma_weight,
                            score, int(predicted_class))


def detect_all(subgraph, predicted_class: int, signatures, stats: DetectorStats) -> list:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return [
            detect_max_node_match(subgraph, predicted_class, signatures),
            detect_avg_node_match(subgraph, predicted_class, signatures, stats),
            detect_edge_count(subgraph, stats, predicted_class),
            detect_avg_edge_weight(subgraph, stats, predicted_class),
        ]


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    false_positives: int
    false_negatives: int
    true_positives: int
    true_negatives: int
    f1: float

    @property
    def precision(self) -> float:
        d = self.true_positives + self.false_positives
        return self.true_positives / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.true_positives + self.false_negatives
        return self.true_positives / d if d else 0.0


def metrics_from_flags(flags, truth) -> Metrics:
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise ValueError("flags and truth differ in length")
    if not truth.any() or truth.all():
        raise ValueError("need both clean and adversarial inputs")
    tp = int((flags & truth).sum())
    fp = int((flags & ~truth).sum())
    fn = int((~flags & truth).sum())
    tn = int((~flags & ~truth).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics((tp + tn) / len(flags), fp, fn, tp, tn, f1)


def evaluate(detector, clean_set, adversarial_set) -> Metrics:
    """Run ``detector(item) -> bool`` over both sets; adversarial is positive."""
    if len(clean_set) == 0 or len(adversarial_set) == 0:
        raise ValueError("both the clean and the adversarial set must be nonempty")
    flags = [bool(detector(x)) for x in clean_set] + [bool(detector(x)) for x in adversarial_set]
    truth = [False] * len(clean_set) + [True] * len(adversarial_set)
    return metrics_from_flags(flags, truth)
