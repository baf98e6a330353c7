"""Zero-mean Gaussian-process regression with a squared-exponential kernel.

The kernel is ``k(x, x') = signal_variance * exp(-gamma * ||x - x'||^2)``.
Hyper-parameters are fixed by the caller; nothing here learns them.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "KernelParams",
    "FactorizationError",
    "GaussianProcess",
    "kernel_eval",
    "kernel_matrix",
    "predict_prior",
]


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed; ``pivot`` is the 0-based failing row."""

    def __init__(self, pivot: int, jitter: float):
        self.pivot = pivot
        self.jitter = jitter
        super().__init__(f"Cholesky factorization failed at pivot {pivot} (jitter={jitter:g})")


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    signal_variance: float = 1.0
    jitter: Optional[float] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if self.jitter is not None and self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def noise(self) -> float:
        """Diagonal term added to the kernel matrix."""
        return 1e-6 * self.signal_variance if self.jitter is None else self.jitter


def kernel_matrix(A, B, gamma: float, signal_variance: float = 1.0) -> np.ndarray:
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return signal_variance * np.exp(-gamma * sq)


def kernel_eval(x, x_prime, params: KernelParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    d = x - x_prime
    return float(params.signal_variance * np.exp(-params.gamma * np.dot(d, d)))


def predict_prior(params: KernelParams, x=None) -> tuple[float, float]:
    """Prior predictive ``(mean, variance)``; identical for every input."""
    return 0.0, float(params.signal_variance)


def _cholesky(A: np.ndarray, jitter: float) -> np.ndarray:
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(info - 1, jitter)
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return c


class GaussianProcess(RegressorMixin, BaseEstimator):
    """Exact GP regressor with fixed hyper-parameters.

    Parameters
    ----------
    gamma : float
        Inverse squared length-scale in ``exp(-gamma * ||x - x'||^2)``.
    signal_variance : float, default 1.0
        Prior variance ``k(x, x)``.
    jitter : float or None
        Term added to the kernel diagonal, standing in for observation
        noise. ``None`` means ``1e-6 * signal_variance``.
    max_jitter_doublings : int, default 5
        How many times ``fit`` doubles the jitter after a failed
        factorization before giving up. A zero jitter is never retried.

    Attributes
    ----------
    X_train_, y_train_ : ndarray
        Training data the mean is conditioned on.
    L_ : ndarray
        Lower Cholesky factor of ``K + jitter_ * I``.
    alpha_ : ndarray
        Weights ``(K + jitter_ * I)^{-1} y``.
    jitter_ : float
        Diagonal term actually used.
    X_var_, L_var_ : ndarray
        Inputs and factor that determine the predictive variance. They equal
        ``X_train_`` and ``L_`` until :meth:`hallucinate` adds pending inputs.
    n_variance_clamped_ : int
        Count of predictive variances clamped into ``[0, signal_variance]``.
    """

    def __init__(self, gamma: float = 0.1, signal_variance: float = 1.0, jitter: Optional[float] = None,
                 max_jitter_doublings: int = 5):
        self.gamma = gamma
        self.signal_variance = signal_variance
        self.jitter = jitter
        self.max_jitter_doublings = max_jitter_doublings

    @classmethod
    def from_params(cls, params: KernelParams, **kwargs) -> "GaussianProcess":
        return cls(gamma=params.gamma, signal_variance=params.signal_variance, jitter=params.jitter, **kwargs)

    @property
    def params(self) -> KernelParams:
        return KernelParams(self.gamma, self.signal_variance, self.jitter)

    def _kernel(self, A, B) -> np.ndarray:
        return kernel_matrix(A, B, self.gamma, self.signal_variance)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        KernelParams(self.gamma, self.signal_variance, self.jitter)
        K = self._kernel(X, X)
        jitter = self.params.noise
        attempts = self.max_jitter_doublings if jitter > 0 else 0
        for attempt in range(attempts + 1):
            A = K.copy()
            A[np.diag_indices_from(A)] += jitter
            try:
                L = _cholesky(A, jitter)
                break
            except FactorizationError:
                if attempt == attempts:
                    raise
                jitter *= 2.0
        self.X_train_ = X
        self.y_train_ = y
        self.jitter_ = jitter
        self.L_ = L
        v = solve_triangular(L, y, lower=True, check_finite=False)
        self.alpha_ = solve_triangular(L.T, v, lower=False, check_finite=False)
        self.X_var_ = X
        self.L_var_ = L
        self.n_features_in_ = X.shape[1]
        self.n_variance_clamped_ = 0
        return self

    def _check_query(self, X) -> np.ndarray:
        check_is_fitted(self, "alpha_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            # a single point, or a column of 1-D queries
            X = X.reshape(1, -1) if X.size == self.n_features_in_ else X.reshape(-1, 1)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"query has {X.shape[1]} features, model was fitted on {self.n_features_in_}")
        return X

    def predict_mean(self, X) -> np.ndarray:
        X = self._check_query(X)
        return self._kernel(X, self.X_train_) @ self.alpha_

    def raw_variance(self, X) -> np.ndarray:
        """Predictive variance before clamping (may dip slightly below 0)."""
        X = self._check_query(X)
        return self._raw_variance(X)

    def _raw_variance(self, X) -> np.ndarray:
        Ks = self._kernel(self.X_var_, X)
        V = solve_triangular(self.L_var_, Ks, lower=True, check_finite=False)
        return self.signal_variance - np.einsum("ij,ij->j", V, V)

    def predict(self, X, return_std: bool = False, return_var: bool = False):
        """Predictive mean, optionally with standard deviation or variance."""
        X = self._check_query(X)
        mean = self._kernel(X, self.X_train_) @ self.alpha_
        if not (return_std or return_var):
            return mean
        raw = self._raw_variance(X)
        var = np.clip(raw, 0.0, self.signal_variance)
        self.n_variance_clamped_ += int(np.count_nonzero(var != raw))
        if return_var:
            return mean, var
        return mean, np.sqrt(var)

    def hallucinate(self, x_new) -> "GaussianProcess":
        """Condition the variance on ``x_new`` without an outcome.

        Returns a new model whose predictive mean is unchanged and whose
        predictive variance equals that of a refit with ``x_new`` appended.
        The variance factor is extended by one Cholesky row.
        """
        check_is_fitted(self, "alpha_")
        x = np.asarray(x_new, dtype=float).reshape(1, -1)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"point has {x.shape[1]} features, model was fitted on {self.n_features_in_}")
        k = self._kernel(self.X_var_, x)[:, 0]
        l = solve_triangular(self.L_var_, k, lower=True, check_finite=False)
        d2 = self.signal_variance + self.jitter_ - l @ l
        if not d2 > 0:
            raise FactorizationError(self.L_var_.shape[0], self.jitter_)
        n = self.L_var_.shape[0]
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self.L_var_
        L[n, :n] = l
        L[n, n] = np.sqrt(d2)
        out = copy.copy(self)
        out.X_var_ = np.vstack([self.X_var_, x])
        out.L_var_ = L
        return out

    @property
    def n_pending_(self) -> int:
        return self.X_var_.shape[0] - self.X_train_.shape[0]
