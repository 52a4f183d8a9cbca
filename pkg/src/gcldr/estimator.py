"""Scikit-learn compatible front end around the alternating trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import trainer
from .trainer import TrainConfig


class GcldrClassifier(BaseEstimator, ClassifierMixin):
    """Classifier that discovers and unifies latent domains while training.

    Parameters mirror TrainConfig; `variant` selects the full method, the
    direct baseline, one of the ablations, or the episodic meta extension.

    Examples
    --------
    >>> clf = GcldrClassifier(epochs=5, p_width=32, g_width=16, seed=0)
    >>> clf.fit(X_train, y_train).predict(X_test)  # doctest: +SKIP
    """

    def __init__(
        self,
        k: int = 2,
        variant: str = "full",
        epochs: int = 100,
        batch_size: int = 128,
        lr: float = 1e-3,
        optimizer: str = "adam",
        gamma: float = 0.01,
        alpha: float = 1.0,
        p_width: int = 512,
        g_width: int = 128,
        p_dropout: float = 0.5,
        seed: int = 0,
    ):
        self.k = k
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.gamma = gamma
        self.alpha = alpha
        self.p_width = p_width
        self.g_width = g_width
        self.p_dropout = p_dropout
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            k=self.k,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            optimizer=self.optimizer,
            seed=self.seed,
            variant=self.variant,
            gamma=self.gamma,
            alpha=self.alpha,
            p_width=self.p_width,
            g_width=self.g_width,
            p_dropout=self.p_dropout,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.bundle_, self.history_ = trainer.fit(X, encoded, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "bundle_")
        X = check_array(X, dtype=np.float64)
        return trainer.predict(self.bundle_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
