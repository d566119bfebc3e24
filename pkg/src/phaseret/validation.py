"""Input validation helpers shared across the package.

All user-facing entry points funnel their array arguments through these
checks so that shape and finiteness errors surface as ``ValueError`` with a
readable message instead of a numpy broadcast failure deep in the call stack.
"""

import numpy as np


def as_image(x, name="image"):
    """Validate and return a square, finite, real 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_field(f, name="field"):
    """Validate and return a square 2-D complex128 array with finite entries."""
    arr = np.asarray(f, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_magnitude(m, name="magnitude"):
    """Validate a magnitude array: square, finite and non-negative."""
    arr = as_image(m, name=name)
    if (arr < 0).any():
        raise ValueError(f"{name} must be non-negative everywhere")
    return arr


def as_image_stack(x, name="images"):
    """Coerce input to a (count, n, n) stack of square images.

    Accepts a single 2-D image or a 3-D stack; always returns a 3-D array.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"{name} must be one or more square images, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, name_a="first", name_b="second"):
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"{name_a} and {name_b} must have the same shape, "
            f"got {np.shape(a)} and {np.shape(b)}"
        )
