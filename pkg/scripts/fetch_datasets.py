#!/usr/bin/env python3
"""Download the MNIST-family IDX files into the layout the workbench reads.

Usage: python scripts/fetch_datasets.py --root data mnist fashion-mnist kmnist emnist

Only image files are fetched (labels are never used).  EMNIST ships as one
zip holding every split; the two balanced image files are extracted from it.
"""

import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

MNIST_FILES = ("train-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte.gz")

SOURCES = {
    "mnist": [
        ("https://ossci-datasets.s3.amazonaws.com/mnist/" + f, f) for f in MNIST_FILES
    ],
    "fashion-mnist": [
        (
            "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/" + f,
            f,
        )
        for f in MNIST_FILES
    ],
    "kmnist": [
        ("http://codh.rois.ac.jp/kmnist/dataset/kmnist/" + f, f) for f in MNIST_FILES
    ],
}

EMNIST_ZIP = "https://biometrics.nist.gov/cs_links/EMNIST/gzip.zip"
EMNIST_MEMBERS = {
    "gzip/emnist-balanced-train-images-idx3-ubyte.gz": "emnist-balanced-train-images-idx3-ubyte.gz",
    "gzip/emnist-balanced-test-images-idx3-ubyte.gz": "emnist-balanced-test-images-idx3-ubyte.gz",
}


def fetch(url, dest):
    if dest.exists():
        print(f"  {dest} already present")
        return
    print(f"  {url} -> {dest}")
    with urllib.request.urlopen(url) as response, open(dest, "wb") as out:
        while chunk := response.read(1 << 20):
            out.write(chunk)


def fetch_emnist(root):
    target_dir = root / "emnist"
    target_dir.mkdir(parents=True, exist_ok=True)
    if all((target_dir / name).exists() for name in EMNIST_MEMBERS.values()):
        print("  emnist files already present")
        return
    print(f"  {EMNIST_ZIP} (large archive; only two members are kept)")
    with urllib.request.urlopen(EMNIST_ZIP) as response:
        blob = io.BytesIO(response.read())
    with zipfile.ZipFile(blob) as zf:
        for member, name in EMNIST_MEMBERS.items():
            with zf.open(member) as src, open(target_dir / name, "wb") as out:
                out.write(src.read())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("datasets", nargs="+",
                        choices=sorted([*SOURCES, "emnist"]))
    parser.add_argument("--root", default="data", type=Path)
    args = parser.parse_args(argv)
    for name in args.datasets:
        print(f"{name}:")
        if name == "emnist":
            fetch_emnist(args.root)
            continue
        target_dir = args.root / name
        target_dir.mkdir(parents=True, exist_ok=True)
        for url, filename in SOURCES[name]:
            fetch(url, target_dir / filename)
    return 0


if __name__ == "__main__":
    sys.exit(main())
