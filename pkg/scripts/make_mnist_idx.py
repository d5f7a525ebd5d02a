"""Write MNIST IDX files from a CSV of flattened digits (784 pixels, label last).

The 5 000-digit subset shipped inside the mlxtend wheel has this layout:

    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/make_mnist_idx.py /tmp/mlx/mlxtend-*.whl data/

Accepts a .csv, a .csv.gz or a wheel containing mlxtend/data/data/mnist_5k.csv.gz.
"""
import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from optforge.tasks.mnist import TRAIN_IMAGES, TRAIN_LABELS, write_idx

WHEEL_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_bytes(path: Path) -> bytes:
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as z:
            return gzip.decompress(z.read(WHEEL_MEMBER))
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    table = np.loadtxt(io.BytesIO(read_csv_bytes(args.source)), delimiter=",", dtype=np.int64)
    images = table[:, :784].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / TRAIN_IMAGES, args.out_dir / TRAIN_LABELS, images, labels)
    print(f"wrote {len(labels)} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
