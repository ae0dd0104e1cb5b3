#!/usr/bin/env python3
"""Write the 5000-sample MNIST subset bundled with mlxtend as IDX files.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 -m zipfile -e /tmp/mlx/mlxtend-*.whl /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend/data/data/mnist_5k.csv.gz data/
"""
import gzip
import struct
import sys
from pathlib import Path


def main(csv_path: str, out_dir: str) -> None:
    rows = []
    with gzip.open(csv_path, "rt") as fh:
        for line in fh:
            vals = [int(float(v)) for v in line.strip().split(",")]
            rows.append((vals[:784], vals[784]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for pixels, _ in rows:
            fh.write(bytes(pixels))
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(rows)))
        fh.write(bytes(label for _, label in rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
