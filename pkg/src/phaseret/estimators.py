"""Scikit-learn style estimators wrapping the solvers and the cascade.

These classes exist so the reconstructors compose with the usual ecosystem
tooling (``get_params`` / ``set_params``, ``clone``, pipelines).  ``X`` is
always a stack of square arrays: images for :meth:`fit`, measured magnitudes
for :meth:`predict`.  Predictions are the reconstructed images.
"""

import numpy as np
from sklearn.base import BaseEstimator

from . import cascade as cascade_mod
from . import solvers as solvers_mod
from .validation import as_image_stack


class _ClassicalReconstructor(BaseEstimator):
    """Shared behavior for the iterative solvers; stateless fit."""

    _algorithm = None

    def __init__(self, beta=0.8, iterations=1000, restarts=3, seed=0,
                 support=None, clip_output=True):
        self.beta = beta
        self.iterations = iterations
        self.restarts = restarts
        self.seed = seed
        self.support = support
        self.clip_output = clip_output

    def _params(self):
        return solvers_mod.SolverParams(
            beta=self.beta,
            iterations=self.iterations,
            restarts=self.restarts,
            seed=self.seed,
            support=self.support,
            clip_output=self.clip_output,
        )

    def fit(self, X=None, y=None):
        """Nothing to learn; validates the configuration."""
        self._params().validate()
        return self

    def predict(self, X):
        """Reconstruct images from a magnitude or a stack of magnitudes."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        results = solvers_mod.solve_dataset(self._algorithm, X, self._params())
        recs = np.stack([r.reconstruction for r in results])
        return recs[0] if single else recs

    def solve(self, omega, image_index=0):
        """Full SolverResult for one magnitude (restart metadata included)."""
        params = solvers_mod.per_image_params(self._params(), image_index)
        return solvers_mod.solve_with_restarts(self._algorithm, omega, params)


class HIOReconstructor(_ClassicalReconstructor):
    """Fienup's hybrid input-output with random restarts."""

    _algorithm = "hio"


class RAARReconstructor(_ClassicalReconstructor):
    """Relaxed averaged alternating reflections with random restarts."""

    _algorithm = "raar"

    def __init__(self, beta=0.87, iterations=1000, restarts=3, seed=0,
                 support=None, clip_output=True):
        super().__init__(beta=beta, iterations=iterations, restarts=restarts,
                         seed=seed, support=support, clip_output=clip_output)


class ErrorReductionReconstructor(_ClassicalReconstructor):
    """Plain alternating projections (Gerchberg-Saxton family)."""

    _algorithm = "er"


class CascadeReconstructor(BaseEstimator):
    """Learned reconstructor: fit on images, predict from magnitudes.

    ``method`` picks the architecture: "mlp" (single stage), "cpr" (five
    stages at increasing scales) or "cpr-fs" (``q`` full-scale stages).
    Measurement pairs are generated on the fly during fit, so no targets are
    passed; ``y`` is accepted and ignored for pipeline compatibility.
    """

    def __init__(self, method="cpr", q=None, epochs=100, batch_size=64,
                 learning_rate=1e-4, dropout_rate=0.2, val_fraction=0.1,
                 losses=None, seed=0, input_size=28, width=None):
        self.method = method
        self.q = q
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.dropout_rate = dropout_rate
        self.val_fraction = val_fraction
        self.losses = losses
        self.seed = seed
        self.input_size = input_size
        self.width = width

    def _spec(self):
        return cascade_mod.spec_for_method(
            self.method, q=self.q, losses=self.losses,
            input_size=self.input_size, width=self.width,
        )

    def fit(self, X, y=None, val_images=None, on_epoch_end=None):
        """Train on a (count, n, n) stack of images in [0, 1]."""
        images = as_image_stack(X)
        self.model_ = cascade_mod.build_cascade(
            self._spec(),
            seed=self.seed,
            dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate,
        )
        config = cascade_mod.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            val_fraction=self.val_fraction,
        )
        self.history_ = cascade_mod.train_cascade(
            self.model_, images, config, val_images=val_images,
            on_epoch_end=on_epoch_end,
        )
        return self

    def _require_model(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit or from_checkpoint")
        return self.model_

    def predict(self, X):
        """Reconstruct from one magnitude or a stack of magnitudes."""
        model = self._require_model()
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        recs = cascade_mod.reconstruct_many(model, X)
        return recs[0] if single else recs

    def predict_stages(self, omega):
        """All intermediate reconstructions for one magnitude."""
        return cascade_mod.reconstruct(self._require_model(), omega)[1]

    def save(self, path):
        cascade_mod.save_checkpoint(self._require_model(), path)

    @classmethod
    def from_checkpoint(cls, path):
        """Evaluation-ready estimator restored from a checkpoint directory."""
        model = cascade_mod.load_checkpoint(path)
        est = cls(
            method="cpr-fs" if len(set(model.spec.scales)) == 1 else "cpr",
            q=model.spec.q,
            seed=model.seed,
            input_size=model.spec.input_size,
        )
        if est.q == 1:
            est.method = "mlp"
        est.model_ = model
        est.history_ = None
        return est
