"""Build the bundled 10k-digit MNIST subset as gzipped IDX files.

The source is the ``mnist`` npm package (v1.1.0), which ships 10,000 MNIST
digits as per-class JSON arrays of grey levels rounded to three decimals.
Rounding ``value * 255`` recovers the original bytes exactly.

Usage::

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python tools/make_mnist10k.py package/src/digits src/vimco/resources
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=float)
        block = np.rint(flat.reshape(-1, 784) * 255.0)
        assert block.min() >= 0 and block.max() <= 255
        images.append(block.astype(np.uint8))
        labels.append(np.full(len(block), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    # files are sorted by class; shuffle once so contiguous splits are mixed
    order = np.random.default_rng(20160101).permutation(len(images))
    images, labels = images[order], labels[order]

    with gzip.GzipFile(os.path.join(dst, "mnist10k-images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        fh.write(images.tobytes())
    with gzip.GzipFile(os.path.join(dst, "mnist10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.tobytes())
    print(f"wrote {len(images)} images to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
