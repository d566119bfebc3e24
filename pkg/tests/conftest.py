import os
from pathlib import Path

import numpy as np
import pytest


def data_root():
    """Directory holding the user-supplied IDX datasets, if any."""
    root = os.environ.get("PHASERET_DATA", "")
    if root:
        return Path(root)
    return Path(__file__).resolve().parent.parent / "data"


def dataset_available(name):
    from phaseret import data

    try:
        data.find_dataset_file(name, data_root(), "test")
        data.find_dataset_file(name, data_root(), "train")
    except FileNotFoundError:
        return False
    return True


def require_dataset(name):
    if not dataset_available(name):
        pytest.skip(
            f"{name} IDX files not present under {data_root()} "
            "(set PHASERET_DATA or place the standard files there)"
        )


def make_glyph(rng, n=8):
    """Small synthetic test image: a smooth non-negative blob with a few
    zeroed pixels, loosely shaped like a handwritten stroke."""
    base = rng.uniform(0.0, 1.0, size=(n, n))
    # smooth with a tiny box blur to get structure rather than white noise
    padded = np.pad(base, 1, mode="wrap")
    smooth = sum(
        padded[1 + di : 1 + di + n, 1 + dj : 1 + dj + n]
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
    ) / 9.0
    smooth[rng.integers(0, n, size=3), rng.integers(0, n, size=3)] = 0.0
    smooth -= smooth.min()
    peak = smooth.max()
    return smooth / peak if peak > 0 else smooth


def make_sparse_glyph(rng, n=8):
    """Stroke-like glyph with tight support, the regime where support-
    constrained solvers are expected to succeed on oversampled data."""
    img = np.zeros((n, n))
    r, c = rng.integers(1, n - 1, size=2)
    for _ in range(3 * n):
        img[r, c] = rng.uniform(0.4, 1.0)
        r = int(np.clip(r + rng.integers(-1, 2), 0, n - 1))
        c = int(np.clip(c + rng.integers(-1, 2), 0, n - 1))
    return img


def make_digit_like(rng, n=28):
    """28x28 synthetic stand-in for a handwritten glyph: a random walk stroke
    on a dark background, lightly blurred."""
    img = np.zeros((n, n))
    r, c = rng.integers(n // 4, 3 * n // 4, size=2)
    for _ in range(5 * n):
        img[r, c] = 1.0
        r = int(np.clip(r + rng.integers(-1, 2), 1, n - 2))
        c = int(np.clip(c + rng.integers(-1, 2), 1, n - 2))
    padded = np.pad(img, 1)
    blurred = sum(
        padded[1 + di : 1 + di + n, 1 + dj : 1 + dj + n]
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
    ) / 9.0
    return np.clip(blurred / max(blurred.max(), 1e-12), 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def digit_batch():
    gen = np.random.default_rng(7)
    return np.stack([make_digit_like(gen) for _ in range(64)])
