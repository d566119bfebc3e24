"""Fourier phase retrieval workbench.

Reconstruction of images from non-oversampled Fourier magnitudes: cascaded
dense networks trained stage-wise, classical HIO/RAAR/error-reduction
baselines, and an evaluation protocol that registers away the trivial
shift/rotation ambiguities before scoring.
"""

from .cascade import (
    CascadeSpec,
    TrainConfig,
    build_cascade,
    downsample_nn,
    load_checkpoint,
    reconstruct,
    reconstruct_many,
    save_checkpoint,
    train_cascade,
)
from .estimators import (
    CascadeReconstructor,
    ErrorReductionReconstructor,
    HIOReconstructor,
    RAARReconstructor,
)
from .evaluation import EvalReport, Registration, evaluate, mae, mse, register, ssim
from .measurement import (
    SwapDemoResult,
    measure,
    pad_and_measure,
    random_magnitude,
    random_phase,
    swap_demo,
)
from .numerics import compose, decompose, fft2, ifft2
from .solvers import (
    SolverParams,
    SolverResult,
    error_reduction,
    hio,
    magnitude_error,
    raar,
    solve_dataset,
    solve_with_restarts,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeReconstructor",
    "CascadeSpec",
    "ErrorReductionReconstructor",
    "EvalReport",
    "HIOReconstructor",
    "RAARReconstructor",
    "Registration",
    "SolverParams",
    "SolverResult",
    "SwapDemoResult",
    "TrainConfig",
    "build_cascade",
    "compose",
    "decompose",
    "downsample_nn",
    "error_reduction",
    "evaluate",
    "fft2",
    "hio",
    "ifft2",
    "load_checkpoint",
    "mae",
    "magnitude_error",
    "measure",
    "mse",
    "pad_and_measure",
    "raar",
    "random_magnitude",
    "random_phase",
    "reconstruct",
    "reconstruct_many",
    "register",
    "save_checkpoint",
    "solve_dataset",
    "solve_with_restarts",
    "ssim",
    "swap_demo",
    "train_cascade",
]
