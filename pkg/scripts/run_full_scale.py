"""Run the pipeline at the larger reference scale.

Uses the reference architecture, 50 training epochs, 50 attack sources and
a sweep over lambda.  Expect hours on a single CPU core; the desk-scale
configuration used by the tests finishes in a few minutes.

    python3 scripts/run_full_scale.py runs/full
    python3 scripts/run_full_scale.py runs/quick --override epochs=5 source_count=10
"""
import argparse
import json
import logging
from pathlib import Path

from topodetect.pipeline import desk_config, full_scale_config, run_pipeline


def parse_override(text):
    key, _, value = text.partition("=")
    if not value:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, json.loads(value)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("outdir", type=Path)
    parser.add_argument("--desk", action="store_true", help="use the desk-scale configuration")
    parser.add_argument("--override", nargs="*", type=parse_override, default=[],
                        metavar="KEY=JSON", help="replace individual config fields")
    parser.add_argument("--model", type=Path, help="reuse a trained model file")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = dict(args.override)
    for key in ("kappas", "lambdas"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    cfg = (desk_config if args.desk else full_scale_config)(**overrides)
    summary = run_pipeline(cfg, args.outdir, model_path=args.model)
    for row in summary["metrics"]:
        print(f"kappa={row['kappa']:g} lambda={row['lambda']:g} {row['method']:<14} "
              f"acc={row['accuracy']:.3f} f1={row['f1']:.3f}")


if __name__ == "__main__":
    main()
