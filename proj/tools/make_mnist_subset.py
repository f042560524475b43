#!/usr/bin/env python3
"""Build IDX-format MNIST files from the 5,000-image MNIST sample shipped in
the mlxtend wheel (500 images per digit, taken from the official release).

The sample is split into a 4,000-image training pool and a 1,000-image test
set (100 per class). The split is deterministic.

    python3 tools/make_mnist_subset.py --out data/mnist
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile


def load_sample(wheel_dir):
    wheels = glob.glob(os.path.join(wheel_dir, "mlxtend-*.whl"))
    if not wheels:
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                               "-d", wheel_dir, "mlxtend"])
        wheels = glob.glob(os.path.join(wheel_dir, "mlxtend-*.whl"))
    with zipfile.ZipFile(sorted(wheels)[-1]) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = []
    for line in raw.strip().split("\n"):
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_idx(path, images, labels):
    with gzip.GzipFile(path + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(path + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--wheel-dir", default=None)
    args = ap.parse_args()
    wheel_dir = args.wheel_dir or tempfile.mkdtemp()
    rows = load_sample(wheel_dir)

    seen = {}
    train, test = [], []
    for img, label in rows:
        k = seen.get(label, 0)
        seen[label] = k + 1
        # every fifth image of each class goes to the test split
        (test if k % 5 == 4 else train).append((img, label))

    os.makedirs(args.out, exist_ok=True)
    write_idx(os.path.join(args.out, "train"), [r[0] for r in train], [r[1] for r in train])
    write_idx(os.path.join(args.out, "t10k"), [r[0] for r in test], [r[1] for r in test])
    print(f"train={len(train)} test={len(test)} -> {args.out}")


if __name__ == "__main__":
    main()
