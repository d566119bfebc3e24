"""Iterative magnitude-only solvers: HIO, RAAR and error reduction.

Update rules, acting on a real m-by-m iterate ``x`` with measured magnitude
``omega`` and a support mask ``S`` (all-true when no support is known):

- magnitude projection: ``P_M(x) = real(ifft2(omega * F(x) / (|F(x)| + eps)))``
  with ``eps = 1e-12`` guarding zero bins (phase 0 convention);
- image projection: ``P_S(y)`` zeroes pixels outside ``S`` and clamps
  negatives to zero; reflectors are ``R = 2P - I``;
- HIO:  ``x' = P_M(x)``; keep ``x'`` where it is inside the support and
  non-negative, elsewhere ``x - beta * x'``;
- RAAR: ``x_next = beta/2 * (R_S(R_M(x)) + x) + (1 - beta) * P_M(x)``;
- ER:   ``x_next = P_S(P_M(x))``.

Each run starts from a seeded uniform [0, 1] iterate inside the support.  The
candidate reconstruction at every step is ``P_S(P_M(x_k))``; its Frobenius
magnitude residual is recorded per iteration, and the final candidate
(optionally clipped to [0, 1]) is returned.  Everything is deterministic
given (seed, params, omega), and independent runs are batched internally so
that whole test sets solve in a handful of vectorized FFT passes.
"""

from dataclasses import dataclass, replace

import numpy as np

from .validation import as_magnitude

_EPS = 1e-12

KINDS = ("hio", "raar", "er")


@dataclass(frozen=True)
class SolverParams:
    """Configuration for one classical solve.

    ``seed`` may be an int or a tuple of ints (an entropy prefix); restart
    ``r`` of a run draws its start from ``SeedSequence(seed + (r,))``, which
    makes batched and per-image execution produce identical streams.
    """

    beta: float = 0.8
    iterations: int = 1000
    restarts: int = 1
    seed: object = 0
    support: np.ndarray | None = None
    clip_output: bool = True

    def validate(self, m=None):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.support is not None:
            sup = np.asarray(self.support)
            if sup.dtype != np.bool_:
                raise ValueError("support mask must be boolean")
            if m is not None and sup.shape != (m, m):
                raise ValueError(
                    f"support shape {sup.shape} does not match measurement {(m, m)}"
                )

    def seed_entropy(self):
        seed = self.seed if self.seed is not None else 0
        return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


@dataclass
class SolverResult:
    reconstruction: np.ndarray
    magnitude_error: float
    restart_index: int
    per_iteration_error: np.ndarray


def magnitude_error(xhat, omega):
    """Frobenius norm of ``|F(xhat)| - omega``."""
    omega = np.asarray(omega, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.shape != omega.shape:
        raise ValueError(f"shape mismatch: {xhat.shape} vs {omega.shape}")
    return float(np.linalg.norm(np.abs(np.fft.fft2(xhat)) - omega))


def _project_magnitude(x, omega):
    f = np.fft.fft2(x, axes=(-2, -1))
    f *= omega / (np.abs(f) + _EPS)
    return np.fft.ifft2(f, axes=(-2, -1)).real


def _project_support(x, support):
    return np.where(support & (x >= 0.0), x, 0.0)


def _init_iterates(entropies, m, support):
    x0 = np.empty((len(entropies), m, m), dtype=np.float64)
    for i, entropy in enumerate(entropies):
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        x0[i] = rng.uniform(0.0, 1.0, size=(m, m))
    return np.where(support, x0, 0.0)


def _run_batch(kind, omegas, beta, iterations, support, entropies, x0=None):
    """Run one solver over a stack of independent (omega, start) pairs.

    ``omegas`` has shape (runs, m, m); returns the final candidates and the
    (runs, iterations) residual history.  All updates are elementwise or
    per-slice FFTs, so batching changes nothing but speed.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown solver kind {kind!r}")
    m = omegas.shape[-1]
    x = _init_iterates(entropies, m, support) if x0 is None else x0.copy()
    errors = np.empty((x.shape[0], iterations), dtype=np.float64)
    candidate = None
    for k in range(iterations):
        xp = _project_magnitude(x, omegas)
        candidate = _project_support(xp, support)
        resid = np.abs(np.fft.fft2(candidate, axes=(-2, -1))) - omegas
        errors[:, k] = np.sqrt((resid * resid).sum(axis=(-2, -1)))
        if kind == "hio":
            keep = support & (xp >= 0.0)
            x = np.where(keep, xp, x - beta * xp)
        elif kind == "raar":
            rm = 2.0 * xp - x
            rs_rm = 2.0 * _project_support(rm, support) - rm
            x = 0.5 * beta * (rs_rm + x) + (1.0 - beta) * xp
        else:  # er
            x = candidate
    return candidate, errors


def _solve_single(kind, omega, params, restart_index, x0=None):
    omega = as_magnitude(omega, name="omega")
    params.validate(m=omega.shape[0])
    m = omega.shape[0]
    support = (
        np.ones((m, m), dtype=bool)
        if params.support is None
        else np.asarray(params.support, dtype=bool)
    )
    entropy = params.seed_entropy() + (restart_index,)
    x0 = None if x0 is None else np.asarray(x0, dtype=np.float64)[None]
    candidate, errors = _run_batch(
        kind, omega[None], params.beta, params.iterations, support, [entropy], x0=x0
    )
    rec = candidate[0]
    if params.clip_output:
        rec = np.clip(rec, 0.0, 1.0)
    return SolverResult(
        reconstruction=rec,
        magnitude_error=magnitude_error(rec, omega),
        restart_index=restart_index,
        per_iteration_error=errors[0],
    )


def hio(omega, params, x0=None):
    """Hybrid input-output from one seeded random start (restart index 0)."""
    return _solve_single("hio", omega, params, restart_index=0, x0=x0)


def raar(omega, params, x0=None):
    """Relaxed averaged alternating reflections from one seeded start."""
    return _solve_single("raar", omega, params, restart_index=0, x0=x0)


def error_reduction(omega, params, x0=None):
    """Alternating projections P_S o P_M; the residual is non-increasing."""
    return _solve_single("er", omega, params, restart_index=0, x0=x0)


_BY_FUNC = {}


def _solver_kind(solver):
    if isinstance(solver, str):
        kind = solver.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown solver {solver!r}, expected one of {KINDS}")
        return kind
    try:
        return _BY_FUNC[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}") from None


def solve_with_restarts(solver, omega, params):
    """Run ``params.restarts`` independent seeded runs, keep the lowest
    magnitude error (ties broken by lowest restart index)."""
    kind = _solver_kind(solver)
    best = None
    for r in range(params.restarts):
        result = _solve_single(kind, omega, params, restart_index=r)
        if best is None or result.magnitude_error < best.magnitude_error:
            best = result
    return best


def solve_dataset(solver, omegas, params, chunk_size=256):
    """Solve a stack of measurements with restarts, batching FFT work.

    ``omegas`` has shape (count, m, m).  Image ``i`` uses the entropy prefix
    ``params.seed + (i,)``, so its result is bit-for-bit the one returned by
    ``solve_with_restarts`` with that per-image seed.  Returns a list of
    SolverResult.
    """
    kind = _solver_kind(solver)
    omegas = np.asarray(omegas, dtype=np.float64)
    if omegas.ndim == 2:
        omegas = omegas[None]
    count, m, _ = omegas.shape
    params.validate(m=m)
    support = (
        np.ones((m, m), dtype=bool)
        if params.support is None
        else np.asarray(params.support, dtype=bool)
    )
    base = params.seed_entropy()
    restarts = params.restarts

    results = [None] * count
    for lo in range(0, count, max(1, chunk_size // restarts)):
        hi = min(count, lo + max(1, chunk_size // restarts))
        idx = range(lo, hi)
        stacked = np.repeat(omegas[lo:hi], restarts, axis=0)
        entropies = [base + (i, r) for i in idx for r in range(restarts)]
        candidates, errors = _run_batch(
            kind, stacked, params.beta, params.iterations, support, entropies
        )
        for j, i in enumerate(idx):
            block = slice(j * restarts, (j + 1) * restarts)
            recs = candidates[block]
            if params.clip_output:
                recs = np.clip(recs, 0.0, 1.0)
            final_err = np.array([magnitude_error(r, omegas[i]) for r in recs])
            winner = int(np.argmin(final_err))
            results[i] = SolverResult(
                reconstruction=recs[winner],
                magnitude_error=float(final_err[winner]),
                restart_index=winner,
                per_iteration_error=errors[block][winner],
            )
    return results


def per_image_params(params, image_index):
    """Params whose seed entropy is extended with the image index, matching
    the streams used by :func:`solve_dataset`."""
    return replace(params, seed=params.seed_entropy() + (int(image_index),))


_BY_FUNC.update({hio: "hio", raar: "raar", error_reduction: "er"})
