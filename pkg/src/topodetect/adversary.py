"""Targeted L2 adversarial examples with a confidence margin.

The search variable ``w`` is unconstrained and the image is
``x' = (tanh(w) + 1) / 2``, so the box [0, 1] holds by construction.  For a
trade-off constant ``c`` we minimise

    ||x' - x||^2 + c * max(max_{i != t} z_i - z_t, -kappa)

and bisect ``c`` per example, keeping the smallest-distortion iterate that
reaches the target with margin at least ``kappa``.  Attacks are run in
batches; every example carries its own target, ``c`` and search bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import NetworkModel, backward, forward_batch, logits_batch

log = logging.getLogger(__name__)

_CLAMP = 1e-6


@dataclass(frozen=True)
class AttackConfig:
    kappa: float = 0.0
    c: float = 1.0
    c_search_steps: int = 5
    iterations: int = 1000
    learning_rate: float = 1e-2
    optimizer: str = "adam"  # or "sgd"
    restarts: int = 1
    seed: int = 0
    abort_early: bool = True

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError("kappa must be finite and non-negative")
        if self.c <= 0 or self.c_search_steps < 1 or self.iterations < 1:
            raise ValueError("invalid attack schedule")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class AdversarialExample:
    original: np.ndarray
    perturbed: np.ndarray
    target: int
    kappa: float
    distortion: float
    predicted_class: int
    success: bool
    source_index: int = -1


def attack_objective(logits, target: int, kappa: float) -> float:
    z = np.asarray(logits, dtype=np.float64)
    others = np.delete(z, target)
    return float(max(others.max() - z[target], -kappa))


@dataclass(frozen=True)
class AttackObjective:
    """Hinge objective as a loss descriptor for :func:`nn.input_gradient`.

    ``target`` may be an int or one target per batch row.
    """

    target: int | np.ndarray
    kappa: float = 0.0

    def value_and_grad(self, logits):
        z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        rows = np.arange(len(z))
        t = np.broadcast_to(np.asarray(self.target), (len(z),))
        masked = z.copy()
        masked[rows, t] = -np.inf
        other = masked.argmax(axis=1)
        gap = z[rows, other] - z[rows, t]
        active = gap > -self.kappa
        grad = np.zeros_like(z)
        grad[rows[active], other[active]] = 1.0
        grad[rows[active], t[active]] = -1.0
        return np.maximum(gap, -self.kappa), grad


def _margin(z, t):
    rows = np.arange(len(z))
    masked = z.copy()
    masked[rows, t] = -np.inf
    return z[rows, t] - masked.max(axis=1)


def _to_w(x):
    return np.arctanh(2.0 * np.clip(x, _CLAMP, 1.0 - _CLAMP) - 1.0)


def generate_batch(model: NetworkModel, images, targets, config: AttackConfig,
                   source_indices=None) -> list[AdversarialExample]:
    """Attack every ``images[i]`` towards ``targets[i]``."""
    x = np.asarray(images, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    n = len(x)
    if n == 0:
        return []
    if x.min() < 0 or x.max() > 1:
        raise ValueError("images must lie in [0, 1]")
    if t.min() < 0 or t.max() >= model.class_count:
        raise ValueError("target out of range")
    rng = np.random.default_rng(config.seed)
    objective = AttackObjective(t, config.kappa)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    c = np.full(n, float(config.c))
    best_dist = np.full(n, np.inf)
    best_img = x.copy()
    w_base = _to_w(x)

    for step in range(config.c_search_steps):
        found = np.zeros(n, dtype=bool)
        for restart in range(config.restarts):
            if restart == 0:
                w = w_base.copy()
            else:
                w = _to_w(np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1))
            m = np.zeros_like(w)
            v = np.zeros_like(w)
            prev = np.full(n, np.inf)
            check_every = max(config.iterations // 10, 1)
            for it in range(config.iterations):
                th = np.tanh(w)
                xp = (th + 1.0) / 2.0
                pre, post, cache = forward_batch(model, xp)
                z = post[-1]
                fval, dz = objective.value_and_grad(z)
                diff = xp - x
                dist2 = (diff ** 2).sum(axis=(1, 2))
                loss = dist2 + c * fval

                ok = (z.argmax(axis=1) == t) & (_margin(z, t) >= config.kappa)
                better = ok & (dist2 < best_dist ** 2)
                if better.any():
                    best_dist[better] = np.sqrt(dist2[better])
                    best_img[better] = xp[better]
                found |= ok

                _, dx = backward(model, pre, cache, dz * c[:, None], need_params=False)
                grad = (2.0 * diff + dx) * (1.0 - th ** 2) / 2.0
                if config.optimizer == "adam":
                    m = 0.9 * m + 0.1 * grad
                    v = 0.999 * v + 0.001 * grad ** 2
                    mh = m / (1 - 0.9 ** (it + 1))
                    vh = v / (1 - 0.999 ** (it + 1))
                    w = w - config.learning_rate * mh / (np.sqrt(vh) + 1e-8)
                else:
                    w = w - config.learning_rate * grad
                if config.abort_early and (it + 1) % check_every == 0:
                    if np.all(loss > prev * 0.9999):
                        break
                    prev = loss
        # bisect c per example
        hi = np.where(found, np.minimum(hi, c), hi)
        lo = np.where(found, lo, np.maximum(lo, c))
        c = np.where(np.isfinite(hi), (lo + hi) / 2.0, c * 2.0)
        log.debug("c-step %d: %d/%d found", step, int(found.sum()), n)

    z = logits_batch(model, best_img)
    pred = z.argmax(axis=1)
    out = []
    for i in range(n):
        success = bool(np.isfinite(best_dist[i]))
        img = best_img[i] if success else x[i]
        out.append(AdversarialExample(
            original=x[i],
            perturbed=img,
            target=int(t[i]),
            kappa=float(config.kappa),
            distortion=float(np.linalg.norm((img - x[i]).ravel())),
            predicted_class=int(pred[i]) if success else int(pred[i]),
            success=success and int(pred[i]) == int(t[i]),
            source_index=-1 if source_indices is None else int(source_indices[i]),
        ))
    return out


def generate(model: NetworkModel, x, target: int, config: AttackConfig = AttackConfig()) -> AdversarialExample:
    return generate_batch(model, np.asarray(x)[None], [target], config)[0]


def build_adversary_sets(model: NetworkModel, sources, source_labels, kappas=(0.0, 20.0),
                         config: AttackConfig = AttackConfig(), batch_size: int = 256,
                         source_indices=None) -> dict:
    """One attack per (source, wrong class) for each kappa.

    Returns ``{kappa: (successes, failures)}``.
    """
    sources = np.asarray(sources, dtype=np.float64)
    labels = np.asarray(source_labels, dtype=np.int64)
    if source_indices is None:
        source_indices = np.arange(len(sources))
    k = model.class_count
    jobs = [(i, tgt) for i in range(len(sources)) for tgt in range(k) if tgt != labels[i]]
    result = {}
    for kappa in kappas:
        cfg = AttackConfig(**{**config.__dict__, "kappa": float(kappa)})
        successes, failures = [], []
        for start in range(0, len(jobs), batch_size):
            chunk = jobs[start:start + batch_size]
            idx = np.array([j[0] for j in chunk], dtype=np.int64)
            tg = np.array([j[1] for j in chunk], dtype=np.int64)
            for ex in generate_batch(model, sources[idx], tg, cfg, np.asarray(source_indices)[idx]):
                (successes if ex.success else failures).append(ex)
        log.info("kappa=%g: %d/%d attacks succeeded", kappa, len(successes), len(jobs))
        result[float(kappa)] = (successes, failures)
    return result
