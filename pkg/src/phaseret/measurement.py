"""Forward measurement model and the phase/magnitude swap demonstration.

The measurement keeps only the modulus of the Fourier transform.  The swap
demo rebuilds an image once with its true magnitude plus a random (symmetry
respecting) phase and once with its true phase plus a random magnitude, which
makes visible how much of the image lives in the phase.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import (
    compose,
    decompose,
    fft2,
    hermitian_part,
    ifft2,
    index_reverse,
    real_image,
)
from .validation import as_image


def measure(x):
    """Fourier magnitude of a square image (non-oversampled, m = n)."""
    img = as_image(x)
    return np.abs(np.fft.fft2(img))


def pad_and_measure(x, m):
    """Embed ``x`` in the top-left corner of an m-by-m zero grid, then measure.

    ``m = 2n`` yields the magnitude oversampled by a factor of four; ``m = n``
    degenerates to :func:`measure`.
    """
    img = as_image(x)
    n = img.shape[0]
    m = int(m)
    if m < n:
        raise ValueError(f"padded size m={m} must be >= image size n={n}")
    padded = np.zeros((m, m), dtype=np.float64)
    padded[:n, :n] = img
    return np.abs(np.fft.fft2(padded))


def zero_pad(x, m):
    """The m-by-m zero-padded embedding used by :func:`pad_and_measure`."""
    img = as_image(x)
    n = img.shape[0]
    if m < n:
        raise ValueError(f"padded size m={m} must be >= image size n={n}")
    padded = np.zeros((m, m), dtype=np.float64)
    padded[:n, :n] = img
    return padded


def random_phase(n, seed=None):
    """Random phase field, uniform on [-pi, pi], antisymmetric under index
    reversal so that combining it with a symmetric magnitude yields a real
    image.  Self-paired frequencies take values in {0, pi}.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-np.pi, np.pi, size=(n, n))

    u = np.arange(n)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ru, rv = (-uu) % n, (-vv) % n
    self_paired = (uu == ru) & (vv == rv)
    # canonical half of each conjugate pair, lexicographic order
    canonical = (uu < ru) | ((uu == ru) & (vv <= rv))

    phase = np.where(canonical, theta, -index_reverse(theta))
    phase[self_paired] = rng.integers(0, 2, size=int(self_paired.sum())) * np.pi
    return phase


def random_magnitude(n, mean, stddev, seed=None, max_rounds=200):
    """Random magnitude: normal(mean, stddev) truncated to [0, inf), then
    symmetrized by averaging each entry with its index-reversed partner.

    Truncation is by rejection, which keeps the marginal exactly the
    truncated normal before symmetrization.
    """
    n = int(n)
    if stddev <= 0:
        raise ValueError("stddev must be > 0")
    rng = np.random.default_rng(seed)
    vals = rng.normal(mean, stddev, size=(n, n))
    for _ in range(max_rounds):
        neg = vals < 0
        if not neg.any():
            break
        vals[neg] = rng.normal(mean, stddev, size=int(neg.sum()))
    else:
        raise RuntimeError(
            f"rejection sampling did not converge in {max_rounds} rounds "
            f"(mean={mean:.3g}, stddev={stddev:.3g})"
        )
    return 0.5 * (vals + index_reverse(vals))


@dataclass
class SwapDemoResult:
    """Outputs of the swap demonstration.

    ``x_random_phase`` combines the true magnitude with a random phase;
    ``x_random_magnitude`` combines a random magnitude with the true phase.
    """

    x_random_phase: np.ndarray
    x_random_magnitude: np.ndarray
    phase_used: np.ndarray
    magnitude_used: np.ndarray


def swap_demo(x, seed=None):
    """Run the phase/magnitude swap on one image.

    The random magnitude is parameterized by the sample mean and stddev of the
    measured magnitude's non-DC entries; its DC entry is copied from the true
    magnitude so global brightness is preserved.  Both outputs are real images
    (imaginary residue below 1e-9 is discarded).
    """
    img = as_image(x)
    n = img.shape[0]
    seed_phase, seed_mag = np.random.SeedSequence(seed).spawn(2)

    # decompose the exactly-Hermitian part: near-zero bins otherwise carry
    # numerically meaningless phases that break the realness of x_rm once a
    # random magnitude re-inflates them
    omega, phi = decompose(hermitian_part(fft2(img)))
    phi_rand = random_phase(n, seed=seed_phase)
    x_rp = real_image(ifft2(compose(omega, phi_rand)), tol=1e-9)

    non_dc = np.delete(omega.ravel(), 0)
    omega_rand = random_magnitude(
        n, float(non_dc.mean()), float(non_dc.std(ddof=1)), seed=seed_mag
    )
    omega_rand[0, 0] = omega[0, 0]
    x_rm = real_image(ifft2(compose(omega_rand, phi)), tol=1e-9)

    return SwapDemoResult(
        x_random_phase=x_rp,
        x_random_magnitude=x_rm,
        phase_used=phi_rand,
        magnitude_used=omega_rand,
    )
