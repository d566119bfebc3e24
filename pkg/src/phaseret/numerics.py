"""Core 2-D Fourier machinery.

Conventions used throughout the package:

- forward transform is unnormalized, the inverse carries the 1/n^2 factor
  (the numpy default), so Parseval reads ``sum|F(x)|^2 = n^2 * sum(x^2)``;
- the phase of a zero-magnitude entry is 0;
- index reversal means ``A[(n-u) % n, (n-v) % n]``, the frequency pairing
  under which the transform of a real image is conjugate-symmetric.

All functions are pure and safe to call concurrently.
"""

import numpy as np

from .validation import as_field, as_image, check_same_shape


def fft2(a):
    """Unnormalized forward 2-D DFT of a square real image or complex field."""
    arr = np.asarray(a)
    if np.iscomplexobj(arr):
        arr = as_field(arr, name="field")
    else:
        arr = as_image(arr, name="image")
    return np.fft.fft2(arr)


def ifft2(field):
    """Inverse 2-D DFT (with the 1/n^2 factor); exact inverse of :func:`fft2`."""
    arr = as_field(field, name="field")
    return np.fft.ifft2(arr)


def decompose(field):
    """Split a complex field into (magnitude, phase).

    The phase is ``atan2`` of the components, in [-pi, pi], and is 0 wherever
    the magnitude vanishes.
    """
    arr = np.asarray(field, dtype=np.complex128)
    return np.abs(arr), np.angle(arr)


def compose(magnitude, phase):
    """Recombine magnitude and phase into a complex field, elementwise."""
    mag = np.asarray(magnitude, dtype=np.float64)
    ph = np.asarray(phase, dtype=np.float64)
    check_same_shape(mag, ph, "magnitude", "phase")
    return mag * np.exp(1j * ph)


def index_reverse(a):
    """Return ``B`` with ``B[u, v] = a[(n-u) % n, (n-v) % n]``."""
    arr = np.asarray(a)
    return np.roll(arr[::-1, ::-1], (1, 1), axis=(0, 1))


def hermitian_part(field):
    """Project a field onto exact conjugate symmetry.

    The DFT of a real image is conjugate-symmetric only up to rounding; this
    makes the symmetry exact, so magnitude/phase taken from the result are
    exactly symmetric/antisymmetric.
    """
    arr = np.asarray(field, dtype=np.complex128)
    return 0.5 * (arr + np.conj(index_reverse(arr)))


def is_conjugate_symmetric(field, tol=1e-9):
    """True if ``field[u, v] == conj(field[(n-u) % n, (n-v) % n])`` within tol."""
    arr = np.asarray(field, dtype=np.complex128)
    return bool(np.max(np.abs(arr - np.conj(index_reverse(arr)))) <= tol)


def real_image(field, tol=1e-9):
    """Inverse-transform helper: assert the imaginary residue is negligible.

    Returns the real part of ``field`` (an image-space array), raising if the
    largest imaginary component exceeds ``tol``.
    """
    arr = np.asarray(field)
    if np.iscomplexobj(arr):
        resid = float(np.max(np.abs(arr.imag))) if arr.size else 0.0
        if resid > tol:
            raise ValueError(
                f"expected a real-valued result, imaginary residue {resid:.3e} > {tol:.1e}"
            )
        return np.ascontiguousarray(arr.real)
    return np.asarray(arr, dtype=np.float64)
