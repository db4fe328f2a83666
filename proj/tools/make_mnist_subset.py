#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX, gzip) from mlxtend's mnist_5k.csv.gz.

The CSV holds 5000 MNIST digits, 500 per class, one row per image with 784
pixel columns followed by the label. The first 400 of each class become the
train split and the remaining 100 the test split.

    pip download --no-deps mlxtend && unzip mlxtend-*.whl 'mlxtend/data/data/mnist_5k.csv.gz'
    python3 tools/make_mnist_subset.py mlxtend/data/data/mnist_5k.csv.gz data/mnist-5k
"""
import argparse
import gzip
import pathlib
import struct

import numpy as np

TRAIN_PER_CLASS = 400


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archives byte-stable across regenerations.
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as out:
        out.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    images = table[:, :784].astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)

    train_idx, test_idx = [], []
    for c in range(10):
        rows = np.flatnonzero(labels == c)
        train_idx.extend(rows[:TRAIN_PER_CLASS])
        test_idx.extend(rows[TRAIN_PER_CLASS:])

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for prefix, idx in (("train", sorted(train_idx)), ("t10k", sorted(test_idx))):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, (len(idx), 28, 28), images[idx].tobytes())
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, (len(idx),), labels[idx].tobytes())
        print(f"{prefix}: {len(idx)} samples")


if __name__ == "__main__":
    main()
