#!/usr/bin/env python3
"""Assemble a small MNIST subset in IDX format from package-bundled samples.

Sources (both redistribute digits from the MNIST database):
  * mlxtend's `mnist_5k.csv.gz` (5000 training digits, 500 per class)
  * the npm package `mnist` (10000 digits as normalised JSON arrays)

The 5000 mlxtend digits become the training split. The test split takes the
first 200 digits per class from the npm package that do not appear (byte for
byte) in the training split.

Usage:
    pip download --no-deps mlxtend==0.24.0 -d /tmp/pkgs
    (cd /tmp/pkgs && npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz)
    python3 scripts/build_mnist_subset.py /tmp/pkgs data/mnist-subset
"""

import glob
import gzip
import json
import os
import struct
import sys
import zipfile

TEST_PER_CLASS = 200


def load_mlxtend(pkg_dir):
    wheel = sorted(glob.glob(os.path.join(pkg_dir, "mlxtend-*.whl")))[-1]
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    images, labels = [], []
    for line in raw.strip().split("\n"):
        fields = [int(v) for v in line.split(",")]
        images.append(bytes(fields[:784]))
        labels.append(fields[784])
    return images, labels


def load_npm(pkg_dir):
    digits = {}
    for d in range(10):
        path = os.path.join(pkg_dir, "package", "src", "digits", f"{d}.json")
        with open(path) as f:
            flat = json.load(f)["data"]
        n = len(flat) // 784
        digits[d] = [
            bytes(round(v * 255) for v in flat[i * 784 : (i + 1) * 784]) for i in range(n)
        ]
    return digits


def write_idx(out_dir, prefix, images, labels):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg_dir, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    train_images, train_labels = load_mlxtend(pkg_dir)
    seen = set(train_images)
    test_images, test_labels = [], []
    npm = load_npm(pkg_dir)
    for d in range(10):
        taken = 0
        for img in npm[d]:
            if img in seen:
                continue
            seen.add(img)
            test_images.append(img)
            test_labels.append(d)
            taken += 1
            if taken == TEST_PER_CLASS:
                break
    # interleave classes so that prefixes of the test split stay balanced
    order = sorted(range(len(test_labels)), key=lambda i: (i % TEST_PER_CLASS, test_labels[i]))
    test_images = [test_images[i] for i in order]
    test_labels = [test_labels[i] for i in order]
    write_idx(out_dir, "train", train_images, train_labels)
    write_idx(out_dir, "t10k", test_images, test_labels)
    print(f"train={len(train_images)} test={len(test_images)} -> {out_dir}")


if __name__ == "__main__":
    main()
