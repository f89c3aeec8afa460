"""Convert the 5000-digit MNIST sample shipped inside the mlxtend wheel to IDX.

mlxtend stores the digits as ``mnist_5k.csv.gz`` (784 pixel columns then the
label).  This writes gzipped IDX files in the layout of the original MNIST
distribution so that ``topodetect.idx.load_idx`` can read them.

    pip download --no-deps -d /tmp/wheels mlxtend
    python scripts/make_mnist5k.py /tmp/wheels/mlxtend-*.whl data/
"""
import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from topodetect.idx import write_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", type=Path)
    parser.add_argument("outdir", type=Path)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    args.outdir.mkdir(parents=True, exist_ok=True)
    write_idx(args.outdir / "mnist5k-images-idx3-ubyte.gz", pixels)
    write_idx(args.outdir / "mnist5k-labels-idx1-ubyte.gz", labels)
    print(f"wrote {len(labels)} digits to {args.outdir}")


if __name__ == "__main__":
    main()
