"""I-divergence between a count matrix and its reconstruction, and its gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import CountMatrix, FactorModel


@dataclass(frozen=True)
class DivergenceConfig:
    epsilon_floor: float = 1e-10

    def __post_init__(self):
        if not self.epsilon_floor > 0:
            raise ValueError("epsilon_floor must be positive")


_DEFAULT = DivergenceConfig()


def _as_count_matrix(X) -> CountMatrix:
    if isinstance(X, CountMatrix):
        return X
    if sp.issparse(X):
        return CountMatrix.from_sparse(X)
    return CountMatrix.from_dense(X)


def _check_y(X: CountMatrix, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != X.shape:
        raise ValueError(f"shape mismatch: X is {X.shape}, Y is {Y.shape}")
    if np.isnan(Y).any():
        raise ValueError("Y contains NaN")
    if Y.size and Y.min() < 0:
        raise ValueError("Y contains negative entries")
    return Y


def i_divergence(X, Y, cfg: Optional[DivergenceConfig] = None) -> float:
    """Generalized KL divergence ``sum(y - x - x*log(y/x))``.

    Entries with ``x == 0`` contribute ``y``. Inside the logarithm ``y`` is
    floored at ``cfg.epsilon_floor``.
    """
    cfg = cfg or _DEFAULT
    X = _as_count_matrix(X)
    Y = _check_y(X, Y)
    x = X.values
    y = Y[X.rows, X.cols]
    terms = y - x - x * np.log(np.maximum(y, cfg.epsilon_floor) / x)
    empty = np.ones(Y.shape, dtype=bool)
    empty[X.rows, X.cols] = False
    return float(terms.sum() + Y[empty].sum())


def poisson_loglik(X, Y) -> float:
    """Poisson log-likelihood of ``X`` under means ``Y``, without the ``log(x!)`` terms."""
    X = _as_count_matrix(X)
    Y = _check_y(X, Y)
    y = Y[X.rows, X.cols]
    if (y <= 0).any():
        raise ValueError("Y must be positive wherever X is positive")
    return float(np.dot(X.values, np.log(y)) - Y.sum())


class SparseDivergence:
    """Divergence evaluator that never materializes the dense reconstruction.

    The sum over all entries is split as ``sum(Y)`` (closed form in the
    factors) plus a correction over the stored entries of ``X``.
    """

    def __init__(self, X: CountMatrix, cfg: Optional[DivergenceConfig] = None):
        cfg = cfg or _DEFAULT
        self.eps = cfg.epsilon_floor
        self.shape = X.shape
        self.rows = X.rows
        self.cols = X.cols
        self.x = X.values
        d, n = X.shape
        x = self.x
        self._const = float(np.dot(x, np.log(x)) - x.sum()) if x.size else 0.0
        self._flat = self.rows * n + self.cols
        # dense product is cheaper than gathering when X is small or dense
        self._dense = d * n <= max(8 * x.size, 200_000)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(self.rows, minlength=d))])
        self._ratio = sp.csr_array((np.ones_like(x), self.cols, indptr), shape=(d, n))
        # the same pattern stored column-major, for products with the transpose
        self._order_t = np.lexsort((self.rows, self.cols))
        indptr_t = np.concatenate([[0], np.cumsum(np.bincount(self.cols, minlength=n))])
        self._ratio_t = sp.csr_array((np.ones_like(x), self.rows[self._order_t], indptr_t), shape=(n, d))

    def fitted_at_nonzeros(self, A, W, b) -> np.ndarray:
        if not self.rows.size:
            return np.zeros(0)
        if self._dense:
            return (A @ W).ravel()[self._flat] + b[self.rows]
        return np.einsum("ik,ik->i", A[self.rows], W.T[self.cols]) + b[self.rows]

    def total(self, A, W, b) -> float:
        return float(A.sum(axis=0) @ W.sum(axis=1) + self.shape[1] * b.sum())

    def value(self, A, W, b) -> float:
        return self.value_and_floored(A, W, b)[0]

    def value_and_floored(self, A, W, b) -> tuple[float, int]:
        """Divergence and the number of positive-count entries whose fit is below the floor."""
        y = self.fitted_at_nonzeros(A, W, b)
        floored = int(np.count_nonzero(y < self.eps))
        y = np.maximum(y, self.eps)
        return self.total(A, W, b) - float(np.dot(self.x, np.log(y))) + self._const, floored

    def rounding_scale(self, A, W, b) -> float:
        """Magnitude of the partial sums in :meth:`value`; differences below a few ulps of it are noise."""
        y = np.maximum(self.fitted_at_nonzeros(A, W, b), self.eps)
        return abs(self.total(A, W, b)) + abs(float(np.dot(self.x, np.log(y)))) + abs(self._const)

    def _ratio_matrix(self, A, W, b):
        y = np.maximum(self.fitted_at_nonzeros(A, W, b), self.eps)
        S = self._ratio
        S.data[:] = self.x / y
        return S

    def grad_W(self, A, W, b) -> np.ndarray:
        y = np.maximum(self.fitted_at_nonzeros(A, W, b), self.eps)
        St = self._ratio_t
        St.data[:] = (self.x / y)[self._order_t]
        return A.sum(axis=0)[:, None] - (St @ A).T

    def grad_Ab(self, A, W, b) -> tuple[np.ndarray, np.ndarray]:
        S = self._ratio_matrix(A, W, b)
        gA = W.sum(axis=1)[None, :] - S @ W.T
        gb = self.shape[1] - np.bincount(self.rows, weights=S.data, minlength=self.shape[0])
        return gA, gb


def gradients(X, model: FactorModel, cfg: Optional[DivergenceConfig] = None):
    """Analytic gradients of the divergence with respect to ``A``, ``W`` and ``b``.

    With ``R = 1 - X / max(Y, eps)`` these are ``R W^T``, ``A^T R`` and the
    row sums of ``R``.
    """
    X = _as_count_matrix(X)
    if X.shape != (model.n_features, model.n_columns):
        raise ValueError(f"shape mismatch: X is {X.shape}, model implies "
                         f"{(model.n_features, model.n_columns)}")
    f = SparseDivergence(X, cfg)
    gA, gb = f.grad_Ab(model.A, model.W, model.b)
    gW = f.grad_W(model.A, model.W, model.b)
    return gA, gW, gb
