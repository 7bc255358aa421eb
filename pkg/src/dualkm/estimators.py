"""scikit-learn compatible wrappers around :func:`dualkm.model.train`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import RunConfig
from .model import OvrModel, ovr_train, predict_label, predict_proba, predict_raw, train

__all__ = ["DualKernelRegressor", "DualKernelClassifier"]


class _DualKernelBase(BaseEstimator):
    _default_loss = "square"

    def __init__(
        self,
        loss=None,
        lam=1.0,
        mode="exact",
        kernel="gaussian",
        sigma="median",
        n_components=4096,
        block_size=None,
        n_iter=1000,
        delta=1.0,
        epsilon=0.25,
        p=3.0,
        precision="double",
        normalize=True,
        random_state=0,
    ):
        self.loss = loss
        self.lam = lam
        self.mode = mode
        self.kernel = kernel
        self.sigma = sigma
        self.n_components = n_components
        self.block_size = block_size
        self.n_iter = n_iter
        self.delta = delta
        self.epsilon = epsilon
        self.p = p
        self.precision = precision
        self.normalize = normalize
        self.random_state = random_state

    def _config(self) -> RunConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return RunConfig(
            loss=self.loss or self._default_loss,
            lam=float(self.lam),
            mode=self.mode,
            kernel=self.kernel,
            sigma=self.sigma,
            n_components=int(self.n_components),
            block_size=self.block_size,
            n_iter=int(self.n_iter),
            delta=self.delta,
            epsilon=self.epsilon,
            p=self.p,
            precision=self.precision,
            normalize=self.normalize,
            seed_partition=seed,
            seed_rff=seed,
            seed_median=seed,
            primal_eval="off",
        )

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, accept_sparse="csr")
        if isinstance(self.model_, OvrModel):
            return self.model_.decision_function(X)
        return predict_raw(self.model_, X).astype(np.float64)


class DualKernelRegressor(RegressorMixin, _DualKernelBase):
    """Kernel regression (square, Lp, L1, Huber or SVR loss).

    Parameters
    ----------
    loss : str, default="square"
    lam : float
        Regularization; larger values fit the data less closely.
    mode : {"exact", "inexact"}
        Exact kernel evaluations or random Fourier features.
    sigma : float or "median"
    n_components : int
        Number of random features in inexact mode.
    random_state : int
        Seeds the block partition, the feature map and the bandwidth subsample.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", y_numeric=True)
        config = self._config()
        if config.make_loss().classification:
            raise ValueError(f"{config.loss} is a classification loss; use DualKernelClassifier")
        self.model_ = train(X, y, config)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        return self.decision_function(X)


class DualKernelClassifier(ClassifierMixin, _DualKernelBase):
    """Kernel classifier (hinge, squared hinge or logistic loss).

    More than two classes are handled one-vs-rest.  ``predict_proba`` is
    available for the logistic loss only.
    """

    _default_loss = "squared_hinge"

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr")
        config = self._config()
        if not config.make_loss().classification:
            raise ValueError(f"{config.loss} is a regression loss; use DualKernelRegressor")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        y_idx = y_idx.astype(np.float64)
        if self.classes_.size == 2:
            # +1 for classes_[1], matching sklearn's binary decision convention
            self.model_ = train(X, np.where(y_idx == 1, 1.0, -1.0), config)
        else:
            self.model_ = ovr_train(X, y_idx, config)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, accept_sparse="csr")
        idx = predict_label(self.model_, X)
        if not isinstance(self.model_, OvrModel):
            idx = (idx > 0).astype(int)
        return self.classes_[np.asarray(idx, dtype=int)]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        if isinstance(self.model_, OvrModel):
            raise ValueError("probabilities are only defined for binary logistic models")
        X = check_array(X, accept_sparse="csr")
        p1 = predict_proba(self.model_, X)
        return np.column_stack([1.0 - p1, p1])
