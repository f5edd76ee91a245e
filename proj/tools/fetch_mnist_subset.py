#!/usr/bin/env python3
"""Fetch a 5000-image MNIST subset and write it as standard IDX files.

The subset ships inside the `mlxtend` wheel (500 images per class), which is
available from any PyPI mirror. Output goes to $ATFS_DATA_DIR/mnist (default
~/.cache/atfs-lab/mnist) as train-images-idx3-ubyte / train-labels-idx1-ubyte,
so a full MNIST download dropped into the same directory works unchanged.
"""
import argparse
import gzip
import io
import os
import struct
import subprocess
import sys
import tempfile
import zipfile


def data_dir():
    root = os.environ.get("ATFS_DATA_DIR")
    if not root:
        cache = os.environ.get("XDG_CACHE_HOME", os.path.expanduser("~/.cache"))
        root = os.path.join(cache, "atfs-lab")
    return os.path.join(root, "mnist")


def read_csv_from_wheel(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = zf.read("mlxtend/data/data/mnist_5k.csv.gz")
    text = gzip.decompress(raw).decode("ascii")
    images, labels = [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        vals = [int(float(v)) for v in line.split(",")]
        images.append(bytes(vals[:-1]))
        labels.append(vals[-1])
    return images, labels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=data_dir())
    ap.add_argument("--wheel", help="use an already-downloaded mlxtend wheel")
    args = ap.parse_args()

    img_path = os.path.join(args.out, "train-images-idx3-ubyte")
    lbl_path = os.path.join(args.out, "train-labels-idx1-ubyte")
    if os.path.exists(img_path) and os.path.exists(lbl_path):
        print(f"mnist subset already present in {args.out}")
        return 0

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                                   "--only-binary", ":all:", "-q", "-d", tmp, "mlxtend"])
            wheel = next(os.path.join(tmp, f) for f in os.listdir(tmp) if f.endswith(".whl"))
        images, labels = read_csv_from_wheel(wheel)

    if any(len(im) != 784 for im in images) or len(images) != len(labels):
        print("unexpected mnist_5k layout", file=sys.stderr)
        return 1

    os.makedirs(args.out, exist_ok=True)
    for path, payload in ((img_path, struct.pack(">IIII", 0x803, len(images), 28, 28) + b"".join(images)),
                          (lbl_path, struct.pack(">II", 0x801, len(labels)) + bytes(labels))):
        tmp_path = path + ".tmp"
        with open(tmp_path, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    print(f"wrote {len(images)} images to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
