#!/usr/bin/env python3
"""Write data/digits/*.idx from the 5000-image MNIST sample bundled with mlxtend.

Usage: make_digits.py [--source mnist_5k.csv.gz] [--out data/digits]

Without --source the file is taken from an installed mlxtend package.
Each of the 10 classes contributes 400 training and 100 validation images.
"""
import argparse
import gzip
import os
import struct

import numpy as np


def find_source():
    import mlxtend.data

    return os.path.join(os.path.dirname(mlxtend.data.__file__), "data", "mnist_5k.csv.gz")


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source")
    ap.add_argument("--out", default="data/digits")
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()

    with gzip.open(args.source or find_source()) as f:
        raw = np.loadtxt(f, delimiter=",")
    x, y = raw[:, :-1], raw[:, -1].astype(int)
    rng = np.random.default_rng(args.seed)
    train, val = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        train.extend(idx[: args.train_per_class])
        val.extend(idx[args.train_per_class :])
    train = rng.permutation(train)
    val = rng.permutation(val)

    os.makedirs(args.out, exist_ok=True)
    write_images(os.path.join(args.out, "train-images.idx3-ubyte"), x[train])
    write_labels(os.path.join(args.out, "train-labels.idx1-ubyte"), y[train])
    write_images(os.path.join(args.out, "val-images.idx3-ubyte"), x[val])
    write_labels(os.path.join(args.out, "val-labels.idx1-ubyte"), y[val])
    print(f"{len(train)} training and {len(val)} validation images in {args.out}")


if __name__ == "__main__":
    main()
