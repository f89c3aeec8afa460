"""Time the compiled and pure-Python filtration sweeps on induced graphs.

    python3 benchmarks/bench_kernels.py --repeats 5 --rho 0.9
"""
import argparse
import time

import numpy as np

from topodetect import nn
from topodetect.graph import build_induced_graph
from topodetect.persistence import available_backends, build_filtration


def best_of(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.99, 0.9, 0.5])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = nn.scaled_model(seed=args.seed)
    x = np.random.default_rng(args.seed).random((28, 28))
    trace = nn.forward(model, x)
    backends = available_backends()
    print(f"{'rho':>6} {'edges':>9} " + " ".join(f"{b + ' [ms]':>14}" for b in backends) + "  speedup")
    for rho in args.rho:
        f = build_filtration(build_induced_graph(model, trace, rho))
        call = (f.src, f.dst, f.weight, f.vertex_count)
        times = {b: best_of(fn, call, args.repeats) for b, fn in backends.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{rho:>6} {f.edge_count:>9} " + " ".join(f"{1e3 * t:>14.2f}" for t in times.values())
              + f"  {speed:7.1f}x")


if __name__ == "__main__":
    main()
