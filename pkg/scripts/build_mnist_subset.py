"""Build gzipped IDX files from the 10,000 digits in the npm ``mnist`` package.

The package (MIT licensed, https://github.com/cazala/mnist) stores real
MNIST digits as one JSON file per class, 784 row-major intensities per
image rounded to three decimals. We rescale to bytes, interleave the classes
with a fixed permutation so any tail slice is class-balanced, and write the
standard IDX layout.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist
"""

import argparse
import gzip
import json
from pathlib import Path

import numpy as np

from ftnet.data import idx_images_bytes, idx_labels_bytes

SEED = 20161123


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.asarray(raw, dtype=np.float64).reshape(-1, 28, 28)
        images.append(np.rint(arr * 255.0).clip(0, 255).astype(np.uint8))
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(SEED).permutation(len(images))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in [("images-idx3-ubyte.gz", idx_images_bytes(images[order])),
                          ("labels-idx1-ubyte.gz", idx_labels_bytes(labels[order]))]:
        # mtime=0 keeps the archives byte-reproducible
        (args.out_dir / name).write_bytes(gzip.compress(payload, mtime=0))
    print(f"wrote {len(images)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
