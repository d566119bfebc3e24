"""Dataset ingestion, deterministic splits and batching, and file exports.

Datasets arrive as the standard big-endian IDX image files (optionally
gzipped) under a data root laid out as ``<root>/<dataset>/<file>``.  Only
image files are read; labels are irrelevant here.  EMNIST stores transposed
glyphs relative to the MNIST convention and is transposed on load so all four
datasets share orientation.
"""

import csv
import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

IDX_IMAGE_MAGIC = 0x00000803

DATASETS = {
    "mnist": {
        "train": ["train-images-idx3-ubyte"],
        "test": ["t10k-images-idx3-ubyte"],
        "transpose": False,
    },
    "fashion-mnist": {
        "train": ["train-images-idx3-ubyte"],
        "test": ["t10k-images-idx3-ubyte"],
        "transpose": False,
    },
    "kmnist": {
        "train": ["train-images-idx3-ubyte"],
        "test": ["t10k-images-idx3-ubyte"],
        "transpose": False,
    },
    "emnist": {
        "train": ["emnist-balanced-train-images-idx3-ubyte"],
        "test": ["emnist-balanced-test-images-idx3-ubyte"],
        "transpose": True,
    },
}


@dataclass
class ImageDataset:
    images: np.ndarray  # (count, n, n) float64 in [0, 1]
    name: str
    split: str

    def __len__(self):
        return len(self.images)


def load_idx(path, expected_side=28):
    """Parse an IDX image file into a (count, side, side) array in [0, 1].

    Gzip is detected by its 2-byte prefix.  Raises on a wrong magic number,
    truncated payload, or unexpected image dimensions.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        prefix = fh.read(2)
    opener = gzip.open if prefix == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(
                f"{path}: bad magic 0x{magic:08x}, expected image magic "
                f"0x{IDX_IMAGE_MAGIC:08x}"
            )
        if expected_side is not None and (rows, cols) != (expected_side, expected_side):
            raise ValueError(
                f"{path}: images are {rows}x{cols}, expected "
                f"{expected_side}x{expected_side}"
            )
        payload = fh.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise ValueError(f"{path}: truncated payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    return pixels.astype(np.float64) / 255.0


def find_dataset_file(name, root, split):
    """Locate the IDX image file for one dataset split under the data root.

    Tries ``<root>/<name>/<file>[.gz]`` and ``<root>/<file>[.gz]``.
    """
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}, expected one of {sorted(DATASETS)}")
    root = Path(root)
    candidates = []
    for stem in DATASETS[name][split]:
        for suffix in ("", ".gz"):
            candidates.append(root / name / f"{stem}{suffix}")
            candidates.append(root / f"{stem}{suffix}")
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(
        f"no {split} image file for dataset {name!r} under {root} "
        f"(looked for {DATASETS[name][split][0]}[.gz])"
    )


def load_dataset(name, root, split):
    """Load one dataset split, applying the EMNIST orientation fix."""
    path = find_dataset_file(name, root, split)
    images = load_idx(path)
    if DATASETS[name]["transpose"]:
        images = images.transpose(0, 2, 1)
    return ImageDataset(images=images, name=name, split=split)


def split(images, val_fraction, seed):
    """Deterministic disjoint (train, val) partition of an image stack."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    images = np.asarray(images)
    n_val = int(len(images) * val_fraction)
    if n_val == 0:
        return images, images[:0]
    perm = np.random.default_rng(seed).permutation(len(images))
    return images[perm[n_val:]], images[perm[:n_val]]


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int = 0

    def epoch_indices(self, n_items, epoch):
        """Seeded permutation for one epoch, chopped into batches; the final
        short batch is included."""
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, epoch)))
        order = rng.permutation(n_items)
        return [
            order[start : start + self.batch_size]
            for start in range(0, n_items, self.batch_size)
        ]


def batches(images, plan, epoch=1):
    """Yield image batches for one epoch under the plan's seeded shuffle."""
    images = np.asarray(images)
    for idx in plan.epoch_indices(len(images), epoch):
        yield images[idx]


def subset(images, k, seed):
    """First k images after a seeded shuffle (k=0 or k>=count: everything)."""
    images = np.asarray(images)
    if k is None or k <= 0 or k >= len(images):
        return images
    perm = np.random.default_rng(seed).permutation(len(images))
    return images[perm[:k]]


def write_image_grid(images, cols, path):
    """Tile images into an 8-bit grayscale PNG, row-major, clamped to [0, 1]."""
    stack = [np.asarray(img, dtype=np.float64) for img in images]
    if not stack:
        raise ValueError("no images to write")
    h, w = stack[0].shape
    for img in stack:
        if img.shape != (h, w):
            raise ValueError("all images in a grid must share one shape")
    cols = max(1, int(cols))
    rows = (len(stack) + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for i, img in enumerate(stack):
        r, c = divmod(i, cols)
        quantized = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = quantized
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(canvas, mode="L").save(path)


REPORT_CSV_HEADER = ["method", "dataset", "mse", "mae", "ssim", "ci95_mse", "count"]


def report_row(method, dataset, report):
    """One method-on-dataset result as a plain serializable dict."""
    return {
        "method": method,
        "dataset": dataset,
        "mse": report.mean_mse,
        "mae": report.mean_mae,
        "ssim": report.mean_ssim,
        "ci95_mse": report.ci95_mse,
        "count": report.count,
        "per_image": [list(p) for p in report.per_image],
        "metadata": report.metadata,
    }


def write_report(rows, json_path, csv_path=None):
    """Write the full JSON report and the summary CSV.

    ``rows`` is a list of dicts from :func:`report_row`.  The CSV holds one
    row per method x dataset with the exact header
    ``method,dataset,mse,mae,ssim,ci95_mse,count``.
    """
    if isinstance(rows, dict):
        rows = [rows]
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"rows": rows}, fh, indent=1, sort_keys=True)
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_CSV_HEADER)
            for row in rows:
                writer.writerow(
                    [
                        row["method"],
                        row["dataset"],
                        f"{row['mse']:.10g}",
                        f"{row['mae']:.10g}",
                        f"{row['ssim']:.10g}",
                        f"{row['ci95_mse']:.10g}",
                        row["count"],
                    ]
                )


def read_report(json_path):
    with open(json_path, encoding="utf-8") as fh:
        return json.load(fh)["rows"]
