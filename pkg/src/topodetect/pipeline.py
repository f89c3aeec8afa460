"""End-to-end experiment: train, attack, fit detectors, score and report.

Everything is driven by :class:`RunConfig`; given the same seed and data
files two runs write byte-identical verdicts and metric tables.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats, nn
from .adversary import AttackConfig, build_adversary_sets
from .detection import (METHODS, compute_stats, detect_all, embedded_average_weight,
                        metrics_from_flags, signatures_from_subgraphs)
from .idx import load_idx
from .persistence import extract_persistent_subgraph, input_persistence

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    images: str = "data/mnist5k-images-idx3-ubyte.gz"
    labels: str = "data/mnist5k-labels-idx1-ubyte.gz"
    seed: int = 0
    architecture: str = "scaled"  # or "reference"
    train_count: int = 2000
    epochs: int = 15
    learning_rate: float = 0.05
    batch_size: int = 128
    val_count: int = 100
    signature_count: int = 450
    clean_test_count: int = 100
    source_count: int = 12
    adversarial_test_count: int = 100
    kappas: tuple = (0.0, 20.0)
    attack_iterations: int = 200
    attack_learning_rate: float = 0.05
    attack_c: float = 1.0
    attack_c_steps: int = 5
    attack_optimizer: str = "adam"
    rho: float = 0.99
    lambdas: tuple = (0.1,)
    pi: dict = field(default_factory=lambda: {"0.0": 0.9, "20.0": 0.95})

    def pi_for(self, kappa: float) -> float:
        return float(self.pi.get(repr(float(kappa)), self.pi.get(str(kappa), 0.9)))

    def header(self) -> dict:
        d = asdict(self)
        d["images"] = Path(self.images).name
        d["labels"] = Path(self.labels).name
        d["kappas"] = [float(k) for k in self.kappas]
        d["lambdas"] = [float(x) for x in self.lambdas]
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        for key in ("kappas", "lambdas"):
            if key in known:
                known[key] = tuple(float(x) for x in known[key])
        if "pi" in known:
            known["pi"] = {repr(float(k)): float(v) for k, v in known["pi"].items()}
        return cls(**known)


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    signature: np.ndarray
    clean_test: np.ndarray
    source_pool: np.ndarray


def make_split(n: int, cfg: RunConfig) -> Split:
    """Disjoint index sets cut from one seeded permutation."""
    perm = np.random.default_rng(cfg.seed).permutation(n)
    cuts = np.cumsum([cfg.train_count, cfg.val_count, cfg.signature_count, cfg.clean_test_count])
    if cuts[-1] >= n:
        raise ValueError(f"dataset has {n} images; the split needs more than {cuts[-1]}")
    return Split(perm[:cuts[0]], perm[cuts[0]:cuts[1]], perm[cuts[1]:cuts[2]],
                 perm[cuts[2]:cuts[3]], perm[cuts[3]:])


def new_model(cfg: RunConfig) -> nn.NetworkModel:
    if cfg.architecture == "reference":
        return nn.reference_model(cfg.seed)
    if cfg.architecture == "scaled":
        return nn.scaled_model(cfg.seed)
    raise ValueError(f"unknown architecture {cfg.architecture!r}")


def attack_config(cfg: RunConfig) -> AttackConfig:
    return AttackConfig(c=cfg.attack_c, c_search_steps=cfg.attack_c_steps,
                        iterations=cfg.attack_iterations,
                        learning_rate=cfg.attack_learning_rate,
                        optimizer=cfg.attack_optimizer, seed=cfg.seed)


def pick_sources(model, images, labels, pool, count):
    """First ``count`` pool indices the model classifies correctly."""
    pred = nn.logits_batch(model, images[pool]).argmax(axis=1)
    good = pool[pred == labels[pool]]
    if len(good) < count:
        raise ValueError(f"only {len(good)} correctly classified source images available")
    return good[:count]


def pick_adversaries(successes, count, seed):
    """Seeded subsample of successful attacks, kept in generation order."""
    if len(successes) <= count:
        return list(successes)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(successes), size=count, replace=False))
    return [successes[i] for i in keep]


def subgraphs_for(persistences, lam):
    return [extract_persistent_subgraph(p, lam) for p in persistences]


def fit_detectors(model, persist_val, persist_sig, sig_labels, lam, pi):
    """Signatures from the signature split; match statistics from validation."""
    sig_sub = subgraphs_for(persist_sig, lam)
    signatures = signatures_from_subgraphs(sig_sub, sig_labels, model.class_count)
    stats = compute_stats(signatures, sig_sub, subgraphs_for(persist_val, lam), pi)
    return signatures, stats


def score_inputs(ids, truth, predicted, subgraphs, signatures, stats):
    rows = []
    for input_id, t, c, g in zip(ids, truth, predicted, subgraphs):
        for verdict in detect_all(g, int(c), signatures, stats):
            rows.append((input_id, bool(t), verdict))
    return rows


def metrics_by_method(rows):
    out = {}
    for method in METHODS:
        picked = [(t, v.flagged) for _, t, v in rows if v.method == method]
        truth = [t for t, _ in picked]
        flags = [f for _, f in picked]
        out[method] = metrics_from_flags(flags, truth)
    return out


def _timer():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


def run_pipeline(cfg: RunConfig, outdir, model_path=None, progress=None) -> dict:
    """Run the whole experiment and write its artefacts under ``outdir``.

    Returns a summary with the metric tables, attack statistics and
    per-set subgraph features.  ``model_path`` reuses a trained model.
    """
    say = progress or log.info
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    inputs = [cfg.images, cfg.labels]
    data = load_idx(cfg.images, cfg.labels)
    X, y = data.images, data.labels
    split = make_split(len(X), cfg)

    elapsed = _timer()
    if model_path is None:
        model = nn.train(new_model(cfg), X[split.train], y[split.train], epochs=cfg.epochs,
                         batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                         seed=cfg.seed, log=say)
        model_path = outdir / "model.tdnn"
        nn.save_model(model, model_path, {"config": header})
    else:
        model = nn.load_model(model_path)
    test_acc = nn.accuracy(model, X[split.clean_test], y[split.clean_test])
    say(f"model ready ({elapsed():.1f}s), clean test accuracy {test_acc:.3f}")

    sources = pick_sources(model, X, y, split.source_pool, cfg.source_count)
    sets = build_adversary_sets(model, X[sources], y[sources], cfg.kappas, attack_config(cfg),
                                source_indices=sources)
    attack_summary = {}
    adversaries = {}
    for kappa, (succ, fail) in sets.items():
        formats.write_adversaries(succ + fail, outdir / f"adversaries_k{kappa:g}.tdad", header)
        attack_summary[kappa] = {
            "attempted": len(succ) + len(fail),
            "succeeded": len(succ),
            "success_rate": len(succ) / max(len(succ) + len(fail), 1),
            "mean_distortion": float(np.mean([e.distortion for e in succ])) if succ else float("nan"),
        }
        adversaries[kappa] = pick_adversaries(succ, cfg.adversarial_test_count, cfg.seed)
        say(f"kappa={kappa:g}: {len(succ)}/{len(succ) + len(fail)} attacks succeeded "
            f"({elapsed():.1f}s)")

    persist = lambda xs: [input_persistence(model, x, cfg.rho) for x in xs]
    p_val = persist(X[split.val])
    p_sig = persist(X[split.signature])
    p_clean = persist(X[split.clean_test])
    p_adv = {k: persist([e.perturbed for e in v]) for k, v in adversaries.items()}
    say(f"persistence done ({elapsed():.1f}s)")

    clean_ids = [f"clean:{i}" for i in split.clean_test]
    clean_pred = nn.logits_batch(model, X[split.clean_test]).argmax(axis=1)
    metric_rows = []
    features = []
    for lam in cfg.lambdas:
        sub_clean = subgraphs_for(p_clean, lam)
        features += [("clean", 0.0, lam, i, g) for i, g in zip(clean_ids, sub_clean)]
        for kappa in cfg.kappas:
            pi = cfg.pi_for(kappa)
            signatures, stats = fit_detectors(model, p_val, p_sig, y[split.signature], lam, pi)
            tag = f"k{kappa:g}_lam{lam:g}"
            formats.write_signatures(signatures, outdir / f"signatures_lam{lam:g}.txt", header, inputs)
            formats.write_stats(stats, outdir / f"stats_{tag}.txt", header, inputs)

            advs = adversaries[kappa]
            if not advs:
                log.warning("kappa=%g: no successful attacks, skipping detection", kappa)
                continue
            sub_adv = subgraphs_for(p_adv[kappa], lam)
            adv_ids = [f"adv:k{kappa:g}:{e.source_index}:{e.target}" for e in advs]
            features += [("adversarial", kappa, lam, i, g) for i, g in zip(adv_ids, sub_adv)]
            rows = score_inputs(clean_ids, [False] * len(clean_ids), clean_pred, sub_clean,
                                signatures, stats)
            rows += score_inputs(adv_ids, [True] * len(adv_ids),
                                 [e.predicted_class for e in advs], sub_adv, signatures, stats)
            formats.write_verdicts(rows, outdir / f"verdicts_{tag}.csv", header, inputs)
            for method, m in metrics_by_method(rows).items():
                metric_rows.append((kappa, lam, pi, method, m))
    formats.write_metrics(metric_rows, outdir / "metrics.csv", header, inputs)
    write_feature_tables(features, outdir, header)
    say(f"detection done ({elapsed():.1f}s)")

    summary = {
        "clean_test_accuracy": test_acc,
        "attacks": {repr(k): v for k, v in attack_summary.items()},
        "metrics": [
            {"kappa": k, "lambda": l, "pi": p, "method": meth, "accuracy": m.accuracy,
             "false_positives": m.false_positives, "false_negatives": m.false_negatives,
             "f1": m.f1}
            for k, l, p, meth, m in metric_rows
        ],
        "features": feature_means(features),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def feature_means(features) -> dict:
    """Mean edge count and mean average edge weight per (set, kappa, lambda)."""
    groups = {}
    for kind, kappa, lam, _, g in features:
        groups.setdefault(f"{kind}:k{kappa:g}:lam{lam:g}", []).append(g)
    return {
        key: {"count": len(gs),
              "mean_edge_count": float(np.mean([g.edge_count for g in gs])),
              "mean_average_edge_weight": float(np.mean([g.average_edge_weight for g in gs]))}
        for key, gs in groups.items()
    }


def write_feature_tables(features, outdir, header, bins: int = 20) -> None:
    """Per-input subgraph features plus binned histograms for plotting."""
    import csv
    import io

    outdir = Path(outdir)
    buf = io.StringIO()
    buf.write(formats.header_lines(header))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "kappa", "lambda", "input_id", "edge_count", "average_edge_weight",
                "embedded_average_weight"])
    for kind, kappa, lam, input_id, g in features:
        w.writerow([kind, repr(float(kappa)), repr(float(lam)), input_id, g.edge_count,
                    repr(g.average_edge_weight), repr(embedded_average_weight(g))])
    (outdir / "subgraph_features.csv").write_text(buf.getvalue())

    buf = io.StringIO()
    buf.write(formats.header_lines(header))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "set", "kappa", "lambda", "bin_low", "bin_high", "count"])
    for feature, get in (("edge_count", lambda g: g.edge_count),
                         ("average_edge_weight", lambda g: g.average_edge_weight)):
        values = np.array([get(g) for *_, g in features], dtype=np.float64)
        if len(values) == 0:
            continue
        edges = np.histogram_bin_edges(values, bins=bins)
        keys = sorted({(k, ka, la) for k, ka, la, _, _ in features})
        for kind, kappa, lam in keys:
            vals = [get(g) for k, ka, la, _, g in features if (k, ka, la) == (kind, kappa, lam)]
            counts, _ = np.histogram(vals, bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([feature, kind, repr(float(kappa)), repr(float(lam)),
                            repr(float(lo)), repr(float(hi)), int(c)])
    (outdir / "histograms.csv").write_text(buf.getvalue())


def desk_config(**overrides) -> RunConfig:
    return replace(RunConfig(), **overrides)


def full_scale_config(**overrides) -> RunConfig:
    """Reference architecture, long training, larger evaluation sets."""
    base = RunConfig(architecture="reference", train_count=3000, epochs=50,
                     learning_rate=0.05, signature_count=450, val_count=100,
                     clean_test_count=450, source_count=50, adversarial_test_count=450,
                     attack_iterations=1000, attack_learning_rate=0.01,
                     lambdas=(0.0, 0.05, 0.1, 0.15, 0.2))
    return replace(base, **overrides)
