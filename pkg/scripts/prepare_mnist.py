"""Write a desk-scale MNIST subset as IDX files.

The sandbox has no MNIST download; the 5000-image MNIST sample shipped
inside the ``mlxtend`` wheel is used instead.  In file order, the first
``--train-per-class`` images of each class go to the train files and the
rest to the test files.

    python scripts/prepare_mnist.py --out data/mnist5k
"""
import argparse
import gzip
import os
from pathlib import Path

import numpy as np

from nbcverify.data import Dataset, save_mnist_idx


def mlxtend_csv() -> Path:
    import mlxtend
    return Path(os.path.dirname(mlxtend.__file__)) / "data" / "data" / "mnist_5k.csv.gz"


def prepare(out: Path, train_per_class: int = 400, source: Path | None = None) -> dict:
    source = source or mlxtend_csv()
    with gzip.open(source, "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = raw[:, :-1], raw[:, -1]
    seen = np.zeros(10, dtype=int)
    train_idx, test_idx = [], []
    for i, c in enumerate(labels):
        (train_idx if seen[c] < train_per_class else test_idx).append(i)
        seen[c] += 1
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, idx in (("train", train_idx), ("test", test_idx)):
        ds = Dataset(pixels[idx] / 255.0, labels[idx], split, n_classes=10)
        img = out / f"{split}-images-idx3-ubyte"
        lab = out / f"{split}-labels-idx1-ubyte"
        # store as 28x28 images
        ds.inputs = ds.inputs.reshape(-1, 28, 28)
        save_mnist_idx(ds, img, lab)
        paths[split] = (img, lab)
    return paths


def ensure(out: Path) -> dict:
    out = Path(out)
    paths = {s: (out / f"{s}-images-idx3-ubyte", out / f"{s}-labels-idx1-ubyte") for s in ("train", "test")}
    if all(p.exists() for pair in paths.values() for p in pair):
        return paths
    return prepare(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--train-per-class", type=int, default=400)
    ap.add_argument("--source", default=None, help="mnist_5k.csv.gz (defaults to the mlxtend copy)")
    args = ap.parse_args()
    paths = prepare(Path(args.out), args.train_per_class, Path(args.source) if args.source else None)
    for split, (img, lab) in paths.items():
        print(f"{split}: {img} {lab}")


if __name__ == "__main__":
    main()
