#!/usr/bin/env python3
"""Build IDX-format MNIST files from the digits bundled in the `mnist` npm package.

The package ships 10,000 real MNIST digits (28x28, grey levels stored as k/255
rounded to three decimals). They are shuffled with a fixed seed and split into
an 8,000-sample training file pair and a 2,000-sample test file pair, written
as gzip-compressed IDX files under data/mnist/.

Usage: tools/fetch_mnist.py [--out data/mnist] [--package path/to/mnist-x.y.z.tgz]
"""
import argparse
import gzip
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile

ROWS = COLS = 28
TRAIN_COUNT = 8000


def load_package(tgz):
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            raw = json.load(member)["data"]
            size = ROWS * COLS
            for start in range(0, len(raw), size):
                pixels = bytes(int(round(v * 255.0)) for v in raw[start:start + size])
                images.append(pixels)
                labels.append(digit)
    return images, labels


def write_idx(prefix, images, labels):
    with gzip.GzipFile(f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), ROWS, COLS))
        for img in images:
            f.write(img)
    with gzip.GzipFile(f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--package", default=None)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package
        if tgz is None:
            name = subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                                  capture_output=True, text=True).stdout.strip().splitlines()[-1]
            tgz = str(pathlib.Path(tmp) / name)
        images, labels = load_package(tgz)

    order = list(range(len(images)))
    random.Random(20240601).shuffle(order)
    images = [images[i] for i in order]
    labels = [labels[i] for i in order]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(str(out / "train"), images[:TRAIN_COUNT], labels[:TRAIN_COUNT])
    write_idx(str(out / "t10k"), images[TRAIN_COUNT:], labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} training and {len(images) - TRAIN_COUNT} test samples to {out}")


if __name__ == "__main__":
    main()
