"""On-disk formats for diagrams, generators, signatures, statistics,
adversary sets, verdicts and metric tables.

Text files start with ``#`` comment lines holding the run configuration and
input checksums; readers skip them.  Floats are written with ``repr`` so
they round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .adversary import AdversarialExample
from .detection import ClassSignature, DetectionVerdict, DetectorStats
from .persistence import Persistence, PersistenceDiagram


class FormatError(ValueError):
    pass


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def header_lines(config: dict | None = None, inputs=()) -> str:
    """Comment block recording the configuration and input checksums.

    Inputs are named by basename so that headers do not depend on the
    directory a run happens in.
    """
    out = []
    if config is not None:
        out.append("# config " + json.dumps(config, sort_keys=True, default=str))
    for path in inputs:
        out.append(f"# input {Path(path).name} sha256={file_digest(path)}")
    return "".join(line + "\n" for line in out)


def _data_lines(path):
    return [line for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]


def read_header(path) -> dict:
    for line in Path(path).read_text().splitlines():
        if line.startswith("# config "):
            return json.loads(line[len("# config "):])
    return {}


# -- diagrams and generators -------------------------------------------------


def write_diagram(diagram: PersistenceDiagram, path, config=None, inputs=()) -> None:
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    buf.write(f"# omega {diagram.omega!r}\n# min_weight {diagram.min_weight!r}\n")
    buf.write("dim,birth,death,generator_id\n")
    for d, b, e, g in zip(diagram.dim.tolist(), diagram.birth.tolist(),
                          diagram.death.tolist(), diagram.generator_id.tolist()):
        buf.write(f"{d},{b!r},{e!r},{g}\n")
    Path(path).write_text(buf.getvalue())


def read_diagram(path) -> PersistenceDiagram:
    text = Path(path).read_text().splitlines()
    meta = {}
    for line in text:
        if line.startswith("# omega ") or line.startswith("# min_weight "):
            key, value = line[2:].split()
            meta[key] = float(value)
    rows = [line for line in text if line and not line.startswith("#")]
    if not rows or rows[0] != "dim,birth,death,generator_id":
        raise FormatError(f"{path}: missing diagram header row")
    table = [r.split(",") for r in rows[1:]]
    dim = np.array([int(r[0]) for r in table], dtype=np.int64)
    birth = np.array([float(r[1]) for r in table])
    death = np.array([float(r[2]) for r in table])
    gen = np.array([int(r[3]) for r in table], dtype=np.int64)
    omega = meta.get("omega", float(birth.max()) if len(birth) else 0.0)
    lo = meta.get("min_weight", float(death.min()) if len(death) else 0.0)
    return PersistenceDiagram(dim, birth, death, gen, omega, lo)


def write_generators(persistence: Persistence, path, min_lifetime: float = 0.0,
                     config=None, inputs=()) -> int:
    """Write generator subgraphs of dim-0 points with lifetime > ``min_lifetime``.

    Each block opens with ``# generator <id> birth <b> death <d>`` followed by
    ``# vertices ...`` and edge lines ``src dst weight layer``.
    """
    d = persistence.diagram
    f = persistence.filtration
    d0 = np.flatnonzero(d.dim == 0)
    chosen = d0[d.lifetime[d0] > min_lifetime]
    layer_of = {}
    if f.layer is not None:
        ids = f.vertex_ids
        layer_of = {(int(s), int(t)): int(l) for s, t, l in
                    zip(ids[f.src].tolist(), ids[f.dst].tolist(), f.layer.tolist())}
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    for idx in chosen.tolist():
        g = int(d.generator_id[idx])
        sub = persistence.generator(g)
        buf.write(f"# generator {g} birth {sub.birth!r} death {sub.death!r}\n")
        buf.write("# vertices " + " ".join(str(v) for v in sub.vertices.tolist()) + "\n")
        for s, t, w in sub.edges:
            buf.write(f"{s} {t} {w!r} {layer_of.get((s, t), -1)}\n")
    Path(path).write_text(buf.getvalue())
    return len(chosen)


# -- signatures and statistics ------------------------------------------------


def write_signatures(signatures, path, config=None, inputs=()) -> None:
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    for sig in signatures:
        buf.write(f"class {sig.class_index} {sig.size}\n")
        for v, c, r in zip(sig.vertex_ids.tolist(), sig.counts.tolist(), sig.ranks.tolist()):
            buf.write(f"{v} {c} {r}\n")
    Path(path).write_text(buf.getvalue())


def read_signatures(path) -> list:
    lines = _data_lines(path)
    sigs = []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "class" or len(parts) != 3:
            raise FormatError(f"{path}: expected 'class <i> <size>', got {lines[i]!r}")
        cls, size = int(parts[1]), int(parts[2])
        rows = [tuple(int(x) for x in line.split()) for line in lines[i + 1:i + 1 + size]]
        if len(rows) != size:
            raise FormatError(f"{path}: class {cls} truncated")
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        sigs.append(ClassSignature(cls, arr[:, 0], arr[:, 1], arr[:, 2]))
        i += 1 + size
    return sigs


def write_stats(stats: DetectorStats, path, config=None, inputs=()) -> None:
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    for name in DetectorStats.FIELDS:
        buf.write(f"{name} {getattr(stats, name)!r}\n")
    Path(path).write_text(buf.getvalue())


def read_stats(path) -> DetectorStats:
    values = {}
    for line in _data_lines(path):
        name, value = line.split()
        values[name] = float(value)
    missing = set(DetectorStats.FIELDS) - set(values)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    return DetectorStats(**{k: values[k] for k in DetectorStats.FIELDS})


# -- adversary sets -------------------------------------------------------------

ADV_MAGIC = b"TDAD"
ADV_VERSION = 1


def write_adversaries(examples, path, config=None) -> None:
    """Binary set: magic, version, JSON header, then float64 image pairs.

    The header lists one record per example (source index, target, kappa,
    distortion, success, predicted class); images follow in the same order,
    original then perturbed, little-endian float64.
    """
    records = [
        {"source_index": e.source_index, "target": e.target, "kappa": e.kappa,
         "distortion": e.distortion, "success": e.success, "predicted": e.predicted_class}
        for e in examples
    ]
    shape = list(examples[0].original.shape) if examples else []
    header = json.dumps({"config": config or {}, "shape": shape, "records": records},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(ADV_MAGIC)
        fh.write(struct.pack("<IQ", ADV_VERSION, len(header)))
        fh.write(header)
        for e in examples:
            fh.write(np.ascontiguousarray(e.original, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(e.perturbed, dtype="<f8").tobytes())


def read_adversaries(path) -> list:
    raw = Path(path).read_bytes()
    if raw[:4] != ADV_MAGIC:
        raise FormatError(f"{path}: not an adversary set")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != ADV_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header = json.loads(raw[16:16 + hlen])
    shape = tuple(header["shape"])
    size = int(np.prod(shape)) if shape else 0
    images = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    if len(images) != 2 * size * len(header["records"]):
        raise FormatError(f"{path}: image payload truncated")
    out = []
    for i, r in enumerate(header["records"]):
        orig = images[(2 * i) * size:(2 * i + 1) * size].reshape(shape).astype(np.float64)
        pert = images[(2 * i + 1) * size:(2 * i + 2) * size].reshape(shape).astype(np.float64)
        out.append(AdversarialExample(orig, pert, r["target"], r["kappa"], r["distortion"],
                                      r["predicted"], r["success"], r["source_index"]))
    return out


# -- verdicts and metrics -------------------------------------------------------

VERDICT_COLUMNS = ["input_id", "is_adversarial_truth", "method", "flagged", "score"]
METRIC_COLUMNS = ["kappa", "lambda", "pi", "method", "accuracy", "false_positives",
                  "false_negatives", "f1"]


def write_verdicts(rows, path, config=None, inputs=()) -> None:
    """``rows``: iterable of (input_id, is_adversarial, DetectionVerdict)."""
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for input_id, truth, v in rows:
        w.writerow([input_id, int(bool(truth)), v.method, int(v.flagged), repr(float(v.score))])
    Path(path).write_text(buf.getvalue())


def read_verdicts(path) -> list:
    lines = _data_lines(path)
    reader = csv.DictReader(lines)
    if reader.fieldnames != VERDICT_COLUMNS:
        raise FormatError(f"{path}: expected columns {VERDICT_COLUMNS}")
    return [
        (row["input_id"], row["is_adversarial_truth"] == "1",
         DetectionVerdict(row["method"], row["flagged"] == "1", float(row["score"]), -1))
        for row in reader
    ]


def write_metrics(rows, path, config=None, inputs=()) -> None:
    """``rows``: iterable of (kappa, lambda, pi, method, Metrics)."""
    buf = io.StringIO()
    buf.write(header_lines(config, inputs))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for kappa, lam, pi, method, m in rows:
        pi_cell = "" if pi is None else repr(float(pi))
        w.writerow([repr(float(kappa)), repr(float(lam)), pi_cell, method,
                    f"{m.accuracy:.6f}", m.false_positives, m.false_negatives, f"{m.f1:.6f}"])
    Path(path).write_text(buf.getvalue())


def read_metrics(path) -> list:
    return list(csv.DictReader(_data_lines(path)))
