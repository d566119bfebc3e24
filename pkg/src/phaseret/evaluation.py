"""Registration and image-quality metrics.

Circular translation and 180-degree rotation leave the Fourier magnitude
unchanged, so reconstructions are registered against the ground truth over
both candidates (plain and rotated) and all circular shifts before MSE, MAE
and SSIM are computed.  Aggregation reports per-image values, their means and
a normal-approximation 95% confidence interval half-width for the mean MSE.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import as_image, check_same_shape

SSIM_PARAMS = {
    "window": 11,
    "sigma": 1.5,
    "k1": 0.01,
    "k2": 0.03,
    "dynamic_range": 1.0,
    "boundary": "valid",
}


def rotate180(x):
    return np.flip(np.asarray(x), axis=(0, 1))


@dataclass
class Registration:
    """Best alignment of a reconstruction against a reference image.

    ``shift`` is the circular shift (du, dv) applied to the (possibly
    rotated) reconstruction; ``aligned`` is the transformed array.
    """

    shift: tuple
    rotated: bool
    aligned: np.ndarray


def register(xhat, x):
    """Align ``xhat`` to ``x`` over {identity, rotate180} x circular shifts.

    The candidate maximizing the circular cross-correlation with ``x`` wins;
    ties prefer the unrotated candidate, then the smallest (du, dv) in
    row-major order.
    """
    xhat = as_image(xhat, name="xhat")
    x = as_image(x, name="x")
    check_same_shape(xhat, x, "xhat", "x")

    fx = np.fft.fft2(x)
    best = None
    for rotated, cand in ((False, xhat), (True, rotate180(xhat))):
        corr = np.fft.ifft2(fx * np.conj(np.fft.fft2(cand))).real
        idx = int(np.argmax(corr))
        peak = corr.flat[idx]
        if best is None or peak > best[0]:
            du, dv = np.unravel_index(idx, corr.shape)
            best = (peak, rotated, (int(du), int(dv)), cand)
    _, rotated, (du, dv), cand = best
    aligned = np.roll(cand, (du, dv), axis=(0, 1))
    return Registration(shift=(du, dv), rotated=rotated, aligned=aligned)


def mse(xhat, x):
    """Mean squared error, normalized by the pixel count."""
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    check_same_shape(a, b, "xhat", "x")
    return float(np.mean((a - b) ** 2))


def mae(xhat, x):
    """Mean absolute error, normalized by the pixel count."""
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    check_same_shape(a, b, "xhat", "x")
    return float(np.mean(np.abs(a - b)))


def _gaussian_kernel(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(xhat, x):
    """Mean local structural similarity over sliding Gaussian windows.

    Parameterization: 11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03,
    dynamic range 1 (images in [0, 1]); window centers are restricted so the
    full window fits inside the image.
    """
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    check_same_shape(a, b, "xhat", "x")
    size = SSIM_PARAMS["window"]
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"images must be at least {size}x{size} for SSIM")

    kernel = _gaussian_kernel(size, SSIM_PARAMS["sigma"])
    c1 = (SSIM_PARAMS["k1"] * SSIM_PARAMS["dynamic_range"]) ** 2
    c2 = (SSIM_PARAMS["k2"] * SSIM_PARAMS["dynamic_range"]) ** 2

    win_a = np.lib.stride_tricks.sliding_window_view(a, (size, size))
    win_b = np.lib.stride_tricks.sliding_window_view(b, (size, size))
    mu_a = np.tensordot(win_a, kernel, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(win_b, kernel, axes=([2, 3], [0, 1]))
    ex_aa = np.tensordot(win_a * win_a, kernel, axes=([2, 3], [0, 1]))
    ex_bb = np.tensordot(win_b * win_b, kernel, axes=([2, 3], [0, 1]))
    ex_ab = np.tensordot(win_a * win_b, kernel, axes=([2, 3], [0, 1]))
    var_a = ex_aa - mu_a**2
    var_b = ex_bb - mu_b**2
    cov = ex_ab - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    """Per-image metrics plus aggregates over one evaluation run."""

    per_image: list
    mean_mse: float
    mean_mae: float
    mean_ssim: float
    ci95_mse: float
    count: int
    metadata: dict = field(default_factory=dict)


def evaluate(reconstructions, originals, register_first=True):
    """Register each (reconstruction, original) pair and aggregate metrics.

    ``ci95_mse`` is 1.96 * stddev(per-image MSE, ddof=1) / sqrt(count), zero
    when fewer than two pairs are given.  Registration can be disabled for
    quick validation passes during training.
    """
    recs = list(reconstructions)
    origs = list(originals)
    if len(recs) != len(origs):
        raise ValueError(
            f"got {len(recs)} reconstructions but {len(origs)} originals"
        )
    per_image = []
    for rec, orig in zip(recs, origs):
        aligned = register(rec, orig).aligned if register_first else rec
        per_image.append((mse(aligned, orig), mae(aligned, orig), ssim(aligned, orig)))

    mses = np.array([p[0] for p in per_image])
    count = len(per_image)
    ci = 1.96 * float(mses.std(ddof=1)) / np.sqrt(count) if count > 1 else 0.0
    return EvalReport(
        per_image=per_image,
        mean_mse=float(mses.mean()) if count else float("nan"),
        mean_mae=float(np.mean([p[1] for p in per_image])) if count else float("nan"),
        mean_ssim=float(np.mean([p[2] for p in per_image])) if count else float("nan"),
        ci95_mse=ci,
        count=count,
        metadata={"ssim": dict(SSIM_PARAMS), "registration": "circular cross-correlation, 180-degree candidates"},
    )
