"""Command line front end.

Each subcommand reads and writes the formats in :mod:`topodetect.formats`.
Options may also come from a JSON ``--config`` file; flags given on the
command line win.  Any error ends the command with a one-line message and
a nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import formats, nn
from .adversary import build_adversary_sets
from .detection import METHODS
from .graph import build_induced_graph, read_graph, write_graph
from .idx import load_idx
from .persistence import (build_filtration, compute_persistence,
                          input_persistence, interpolation_distance_curve, wasserstein_distance)
from .pipeline import (RunConfig, attack_config, fit_detectors, make_split, metrics_by_method,
                       new_model, pick_adversaries, pick_sources, run_pipeline, score_inputs,
                       subgraphs_for)

log = logging.getLogger("topodetect")


class CommandError(Exception):
    pass


# -- helpers -------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    values = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    if values.get("pi") is not None and not isinstance(values["pi"], dict):
        values["pi"] = {repr(float(k)): float(v) for k, v in
                        (item.split("=") for item in values["pi"])}
    return RunConfig.from_dict({k: v for k, v in values.items() if v is not None})


def _header(args) -> dict:
    skip = {"func", "config", "verbose", "out", "out_dir", "generators"}  # outputs are not inputs
    base = lambda v: Path(v).name if isinstance(v, str) and "/" in v else v
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        # basenames only, so headers do not depend on the run directory
        out[key] = [base(v) for v in value] if isinstance(value, list) else base(value)
    return out


def _dataset(args):
    return load_idx(args.images, args.labels)


def _single_image(args):
    """Image selected by ``--index`` from a dataset or an adversary set."""
    if args.adversaries:
        examples = formats.read_adversaries(args.adversaries)
        if not 0 <= args.index < len(examples):
            raise CommandError(f"index {args.index} outside adversary set of {len(examples)}")
        return examples[args.index].perturbed, [args.adversaries]
    if not (args.images and args.labels):
        raise CommandError("give --images and --labels, or --adversaries")
    data = _dataset(args)
    if not 0 <= args.index < len(data):
        raise CommandError(f"index {args.index} outside dataset of {len(data)}")
    return data.images[args.index], [args.images, args.labels]


def _print_table(rows, columns):
    widths = [max(len(c), *(len(str(r[i])) for r in rows)) for i, c in enumerate(columns)]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


# -- commands ------------------------------------------------------------------


def cmd_train(args):
    cfg = _run_config(args)
    data = _dataset(args)
    split = make_split(len(data), cfg)
    model = nn.train(new_model(cfg), data.images[split.train], data.labels[split.train],
                     epochs=cfg.epochs, batch_size=cfg.batch_size,
                     learning_rate=cfg.learning_rate, seed=cfg.seed, log=log.info)
    acc = nn.accuracy(model, data.images[split.clean_test], data.labels[split.clean_test])
    inputs = {Path(p).name: formats.file_digest(p) for p in (args.images, args.labels)}
    meta = {"config": cfg.header(), "inputs": inputs, "clean_test_accuracy": acc}
    nn.save_model(model, args.out, meta)
    print(f"clean test accuracy {acc:.4f}")


def cmd_attack(args):
    cfg = _run_config(args)
    data = _dataset(args)
    model = nn.load_model(args.model)
    split = make_split(len(data), cfg)
    sources = pick_sources(model, data.images, data.labels, split.source_pool, cfg.source_count)
    sets = build_adversary_sets(model, data.images[sources], data.labels[sources], cfg.kappas,
                                attack_config(cfg), source_indices=sources)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {**cfg.header(), "model_sha256": formats.file_digest(args.model)}
    for kappa, (succ, fail) in sets.items():
        formats.write_adversaries(succ + fail, out / f"adversaries_k{kappa:g}.tdad", header)
        dist = np.mean([e.distortion for e in succ]) if succ else float("nan")
        print(f"kappa={kappa:g} succeeded {len(succ)}/{len(succ) + len(fail)} "
              f"mean distortion {dist:.4f}")


def cmd_induce(args):
    model = nn.load_model(args.model)
    x, inputs = _single_image(args)
    graph = build_induced_graph(model, nn.forward(model, x), args.rho)
    cfg = _header(args)
    head = {"config": json.dumps(cfg, sort_keys=True, default=str)}
    for path in [args.model, *inputs]:
        head[f"input {Path(path).name}"] = "sha256=" + formats.file_digest(path)
    write_graph(graph, args.out, head)
    print(f"{graph.edge_count} edges, {len(graph.vertices)} vertices")


def cmd_persist(args):
    graph = read_graph(args.graph)
    p = compute_persistence(build_filtration(graph))
    header = _header(args)
    formats.write_diagram(p.diagram, args.out, header, [args.graph])
    if args.generators:
        n = formats.write_generators(p, args.generators, args.min_lifetime, header, [args.graph])
        print(f"{len(p.diagram)} points, {n} generators written")
    else:
        print(f"{len(p.diagram)} points")


def cmd_distance(args):
    a = formats.read_diagram(args.diagram_a)
    b = formats.read_diagram(args.diagram_b)
    print(repr(wasserstein_distance(a, b, p=args.p, q=args.q, dim=args.dim)))


def cmd_signatures(args):
    cfg = _run_config(args)
    data = _dataset(args)
    model = nn.load_model(args.model)
    split = make_split(len(data), cfg)
    lam = cfg.lambdas[0]
    pi = args.pi_value
    p_val = [input_persistence(model, x, cfg.rho) for x in data.images[split.val]]
    p_sig = [input_persistence(model, x, cfg.rho) for x in data.images[split.signature]]
    signatures, stats = fit_detectors(model, p_val, p_sig, data.labels[split.signature], lam, pi)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {**cfg.header(), "pi": pi}
    inputs = [args.model, args.images, args.labels]
    formats.write_signatures(signatures, out / "signatures.txt", header, inputs)
    formats.write_stats(stats, out / "stats.txt", header, inputs)
    print(f"edge threshold {stats.edge_threshold:.1f}, match threshold "
          f"{stats.mu_match + stats.sigma_match:.4f}")


def cmd_detect(args):
    cfg = _run_config(args)
    model = nn.load_model(args.model)
    signatures = formats.read_signatures(args.signatures)
    stats = formats.read_stats(args.stats)
    lam = cfg.lambdas[0]
    inputs = [args.model, args.signatures, args.stats]
    ids, truth, pred, xs = [], [], [], []
    if args.clean:
        data = _dataset(args)
        split = make_split(len(data), cfg)
        idx = split.clean_test
        ids += [f"clean:{i}" for i in idx]
        truth += [False] * len(idx)
        pred += list(nn.logits_batch(model, data.images[idx]).argmax(axis=1))
        xs += list(data.images[idx])
        inputs += [args.images, args.labels]
    for path in args.adversaries or []:
        succ = [e for e in formats.read_adversaries(path) if e.success]
        chosen = pick_adversaries(succ, cfg.adversarial_test_count, cfg.seed)
        ids += [f"adv:k{e.kappa:g}:{e.source_index}:{e.target}" for e in chosen]
        truth += [True] * len(chosen)
        pred += [e.predicted_class for e in chosen]
        xs += [e.perturbed for e in chosen]
        inputs.append(path)
    if not xs:
        raise CommandError("no inputs: give --clean and/or --adversaries")
    subs = subgraphs_for([input_persistence(model, x, cfg.rho) for x in xs], lam)
    rows = score_inputs(ids, truth, pred, subs, signatures, stats)
    formats.write_verdicts(rows, args.out, _header(args), inputs)
    flagged = {m: sum(v.flagged for _, _, v in rows if v.method == m) for m in METHODS}
    print(" ".join(f"{m}={n}/{len(xs)}" for m, n in flagged.items()))


def cmd_evaluate(args):
    rows = []
    for path in args.verdicts:
        rows += formats.read_verdicts(path)
    if not rows:
        raise CommandError("no verdict rows")
    table = [(args.kappa, args.lam, args.pi_value, m, metric)
             for m, metric in metrics_by_method(rows).items()]
    formats.write_metrics(table, args.out, _header(args), args.verdicts)
    _print_table(
        [(m, f"{t.accuracy:.4f}", t.false_positives, t.false_negatives, f"{t.f1:.4f}")
         for _, _, _, m, t in table],
        ["method", "accuracy", "FP", "FN", "F1"],
    )


def cmd_interpolate(args):
    model = nn.load_model(args.model)
    if args.adversaries:
        ex = formats.read_adversaries(args.adversaries)[args.index]
        x_a, x_b = ex.original, ex.perturbed
        inputs = [args.model, args.adversaries]
    else:
        if args.index_b is None or not (args.images and args.labels):
            raise CommandError("give --images, --labels and --index-b, or --adversaries")
        data = _dataset(args)
        x_a, x_b = data.images[args.index], data.images[args.index_b]
        inputs = [args.model, args.images, args.labels]
    curve = interpolation_distance_curve(model, x_a, x_b, args.steps, args.rho, args.lam)
    buf = io.StringIO()
    buf.write(formats.header_lines(_header(args), inputs))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "distance"])
    for t, d in curve:
        w.writerow([repr(float(t)), repr(float(d))])
    Path(args.out).write_text(buf.getvalue())
    print(f"final distance {curve[-1][1]:.6f}")


def cmd_pipeline(args):
    cfg = _run_config(args)
    summary = run_pipeline(cfg, args.out_dir, model_path=args.model, progress=log.info)
    for kappa, a in summary["attacks"].items():
        print(f"kappa={float(kappa):g}: {a['succeeded']}/{a['attempted']} attacks, "
              f"mean distortion {a['mean_distortion']:.4f}")
    _print_table(
        [(f"{m['kappa']:g}", f"{m['lambda']:g}", f"{m['pi']:g}", m["method"],
          f"{m['accuracy']:.4f}", m["false_positives"], m["false_negatives"], f"{m['f1']:.4f}")
         for m in summary["metrics"]],
        ["kappa", "lambda", "pi", "method", "accuracy", "FP", "FN", "F1"],
    )


# -- parser ----------------------------------------------------------------------


def _data_args(p, required=True):
    d = RunConfig()
    p.add_argument("--images", default=d.images if required else None, help="IDX image file")
    p.add_argument("--labels", default=d.labels if required else None, help="IDX label file")


def _split_args(p):
    d = RunConfig()
    g = p.add_argument_group("data split")
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--train-count", type=int, default=d.train_count)
    g.add_argument("--val-count", type=int, default=d.val_count)
    g.add_argument("--signature-count", type=int, default=d.signature_count)
    g.add_argument("--clean-test-count", type=int, default=d.clean_test_count)
    g.add_argument("--source-count", type=int, default=d.source_count)
    g.add_argument("--adversarial-test-count", type=int, default=d.adversarial_test_count)


def _train_args(p):
    d = RunConfig()
    p.add_argument("--architecture", choices=["scaled", "reference"], default=d.architecture)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)


def _attack_args(p):
    d = RunConfig()
    p.add_argument("--kappas", type=float, nargs="+", default=list(d.kappas))
    p.add_argument("--attack-iterations", type=int, default=d.attack_iterations)
    p.add_argument("--attack-learning-rate", type=float, default=d.attack_learning_rate)
    p.add_argument("--attack-c", type=float, default=d.attack_c)
    p.add_argument("--attack-c-steps", type=int, default=d.attack_c_steps)
    p.add_argument("--attack-optimizer", choices=["adam", "sgd"], default=d.attack_optimizer)


def _detect_args(p, multi=False):
    d = RunConfig()
    p.add_argument("--rho", type=float, default=d.rho)
    if multi:
        p.add_argument("--lambdas", type=float, nargs="+", default=list(d.lambdas))
        p.add_argument("--pi", nargs="+", metavar="KAPPA=PI", default=None,
                       help="percentile per kappa, e.g. 0=0.9 20=0.95")
    else:
        p.add_argument("--lambda", dest="lambdas", type=float, nargs=1, default=list(d.lambdas))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topodetect",
                                     description="Topological detection of adversarial inputs.")
    parser.add_argument("--config", help="JSON file of option defaults; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network on the training split")
    _data_args(p); _split_args(p); _train_args(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="build targeted adversary sets")
    _data_args(p); _split_args(p); _attack_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("induce", help="dump the pruned induced graph of one image")
    _data_args(p, required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--adversaries", help="take the image from an adversary set instead")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("persist", help="persistence diagram and generators of a graph dump")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="diagram CSV")
    p.add_argument("--generators", help="generator file")
    p.add_argument("--min-lifetime", type=float, default=0.0)
    p.set_defaults(func=cmd_persist)

    p = sub.add_parser("distance", help="Wasserstein distance between two diagram CSVs")
    p.add_argument("diagram_a")
    p.add_argument("diagram_b")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--dim", type=int, default=0)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("signatures", help="class signatures and detector statistics")
    _data_args(p); _split_args(p); _detect_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pi", dest="pi_value", type=float, default=0.9)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_signatures)

    p = sub.add_parser("detect", help="run the four detectors over an input set")
    _data_args(p); _split_args(p); _detect_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--signatures", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--clean", action="store_true", help="include the clean test split")
    p.add_argument("--adversaries", nargs="*", help="adversary set files")
    p.add_argument("--out", required=True, help="verdict CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="metrics table from verdict CSVs")
    p.add_argument("verdicts", nargs="+")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--pi", dest="pi_value", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("interpolate", help="diagram distance along a straight image path")
    _data_args(p, required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--adversaries", help="interpolate from an original to its adversary")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--index-b", type=int, help="second dataset index")
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("pipeline", help="full experiment: train, attack, detect, evaluate")
    _data_args(p); _split_args(p); _train_args(p); _attack_args(p); _detect_args(p, multi=True)
    p.add_argument("--model", help="reuse a trained model instead of training")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _apply_config(parser, argv):
    """Load ``--config`` and install its values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    values = json.loads(Path(known.config).read_text())
    if not isinstance(values, dict):
        raise CommandError(f"{known.config}: expected a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    command = next((a for a in rest if not a.startswith("-")), None)
    for action in parser._subparsers._group_actions:
        sub = action.choices.get(command)
        if sub is not None:
            sub.set_defaults(**values)
            for opt in sub._actions:
                if opt.dest in values:
                    opt.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError, CommandError) as exc:
        print(f"topodetect: error: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # one-line diagnostic for any module error
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"topodetect: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
