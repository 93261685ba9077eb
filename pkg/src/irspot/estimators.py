"""Scikit-learn style wrappers so the toolkit composes with the wider
ecosystem: ``get_params``/``set_params``/``fit`` follow the estimator
contract, fitted attributes carry the trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .attack import AttackConfig, Bounds, run_attack, run_dodge
from .oracle import DEFAULT_THRESHOLD, ReferenceEmbeddingOracle
from .spots import DEFAULT_COLOR_RATIO, PerturbationConfig, synthesize
from .validation import check_image

__all__ = ["SpotPerturbation", "ImpersonationAttack", "DodgingAttack"]


class SpotPerturbation(TransformerMixin, BaseEstimator):
    """Stateless transformer applying a fixed perturbation to images."""

    def __init__(self, config: PerturbationConfig | None = None):
        self.config = config

    def fit(self, X=None, y=None):
        if self.config is None:
            raise ValueError("SpotPerturbation needs a PerturbationConfig")
        self.config.validate()
        return self

    def transform(self, X):
        """Synthesize one image (H, W, 3) or a batch (N, H, W, 3)."""
        self.fit()
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 3:
            return synthesize(arr, self.config)
        return np.stack([synthesize(img, self.config) for img in arr])


class _AttackBase(BaseEstimator):
    def __init__(self, oracle=None, n_spots=5, max_iters=200, refine_iters=200,
                 lr_pos=0.05, lr_sigma=0.01, lr_s=0.01, lr_amp=0.01,
                 grad_mode="whitebox", threshold=DEFAULT_THRESHOLD, seed=0,
                 color_ratio=DEFAULT_COLOR_RATIO):
        self.oracle = oracle
        self.n_spots = n_spots
        self.max_iters = max_iters
        self.refine_iters = refine_iters
        self.lr_pos = lr_pos
        self.lr_sigma = lr_sigma
        self.lr_s = lr_s
        self.lr_amp = lr_amp
        self.grad_mode = grad_mode
        self.threshold = threshold
        self.seed = seed
        self.color_ratio = color_ratio

    def _attack_config(self) -> AttackConfig:
        return AttackConfig(
            n_spots=self.n_spots, max_iters=self.max_iters,
            refine_iters=self.refine_iters, lr_pos=self.lr_pos,
            lr_sigma=self.lr_sigma, lr_s=self.lr_s, lr_amp=self.lr_amp,
            grad_mode=self.grad_mode, threshold=self.threshold, seed=self.seed,
            bounds=Bounds(), color_ratio=tuple(self.color_ratio))

    def _oracle(self):
        return self.oracle if self.oracle is not None else ReferenceEmbeddingOracle()

    def _store(self, result):
        self.result_ = result
        self.best_config_ = result.best_config
        self.best_distance_ = result.best_distance
        self.success_ = result.success
        self.trajectory_ = result.trajectory
        return self

    def transform(self, X):
        """Apply the fitted perturbation to an image."""
        if not hasattr(self, "best_config_"):
            raise RuntimeError("call fit() before transform()")
        return synthesize(check_image(X), self.best_config_)


class ImpersonationAttack(_AttackBase):
    """Estimator searching a spot layout whose embedding approaches a victim's.

    ``fit(X, y)`` takes the attacker image as X and the victim image as y;
    fitted attributes expose the optimizer outcome.
    """

    def fit(self, X, y):
        result = run_attack(X, y, self._attack_config(), self._oracle())
        return self._store(result)


class DodgingAttack(_AttackBase):
    """Estimator searching a spot layout that breaks self-recognition."""

    def fit(self, X, y=None):
        result = run_dodge(X, self._attack_config(), self._oracle())
        return self._store(result)
