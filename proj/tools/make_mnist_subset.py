"""Write the 5000-digit MNIST sample shipped with mlxtend as IDX files.

    python3 tools/make_mnist_subset.py [--out data/mnist5k] [--test 1000] [--seed 0]

The rows are shuffled with a fixed seed and split into train and test sets.
"""

import argparse
import gzip
import pathlib
import struct

import numpy as np


def source_csv():
    import mlxtend.data

    return pathlib.Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"


def write_idx(path, array):
    magic = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
    dims = b"".join(struct.pack(">I", d) for d in array.shape)
    path.write_bytes(magic + dims + array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="path to mnist_5k.csv.gz (default: the copy inside mlxtend)")
    args = ap.parse_args()

    with gzip.open(args.csv or source_csv(), "rt") as f:
        rows = np.loadtxt(f, delimiter=",", dtype=np.int64)
    rows = rows[np.random.default_rng(args.seed).permutation(len(rows))]
    # pixels in the first 784 columns, label last
    labels, images = rows[:, -1], rows[:, :-1].reshape(-1, 28, 28)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cut = len(rows) - args.test
    write_idx(out / "train-images-idx3-ubyte", images[:cut])
    write_idx(out / "train-labels-idx1-ubyte", labels[:cut])
    write_idx(out / "t10k-images-idx3-ubyte", images[cut:])
    write_idx(out / "t10k-labels-idx1-ubyte", labels[cut:])
    print(f"{cut} train, {args.test} test digits written to {out}")


if __name__ == "__main__":
    main()
