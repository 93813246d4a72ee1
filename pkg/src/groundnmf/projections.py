"""Euclidean projections onto the feasible sets of the factor model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Inputs already on the simplex up to rounding are returned as-is so that
# repeated projection is bit-identical.
_ON_SIMPLEX_ULPS = 2.0
_MAX_POLISH = 8


@dataclass(frozen=True)
class ScaledSimplexSpec:
    dimension: int
    lam: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")


def _on_simplex(v: np.ndarray, lam: float) -> bool:
    tol = _ON_SIMPLEX_ULPS * np.finfo(np.float64).eps * lam * v.size
    return bool(v.min() >= 0 and abs(v.sum() - lam) <= tol)


def project_scaled_simplex(v, lam: float = 1.0) -> np.ndarray:
    """Project ``v`` onto ``{u >= 0 : sum(u) = lam}``.

    Sort-and-threshold algorithm: with ``v`` sorted in decreasing order, the
    threshold is ``(sum of the top rho entries - lam) / rho`` for the largest
    ``rho`` whose ``rho``-th entry still exceeds it.

    Parameters
    ----------
    v : array-like, shape (d,)
    lam : float or ScaledSimplexSpec
        Target sum, must be positive.

    Returns
    -------
    ndarray, shape (d,)
        Non-negative vector summing to ``lam``, with exact zeros below the
        threshold.
    """
    if isinstance(lam, ScaledSimplexSpec):
        lam = lam.lam
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    return _project_columns(v[:, None], lam)[:, 0]


def _threshold(M: np.ndarray, lam: float) -> np.ndarray:
    d, k = M.shape
    U = -np.sort(-M, axis=0, kind="stable")
    css = np.cumsum(U, axis=0) - lam
    ind = np.arange(1, d + 1)[:, None]
    cond = U - css / ind > 0
    # last True per column; cond[0] is always True for finite input
    rho = d - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(k)] / (rho + 1)
    return np.maximum(M - theta[None, :], 0.0)


def _step(M: np.ndarray, lam: float) -> np.ndarray:
    out = _threshold(M, lam)
    tol = _ON_SIMPLEX_ULPS * np.finfo(np.float64).eps * lam * M.shape[0]
    keep = (M.min(axis=0) >= 0) & (np.abs(M.sum(axis=0) - lam) <= tol)
    out[:, keep] = M[:, keep]
    return out


def _project_columns(M: np.ndarray, lam: float) -> np.ndarray:
    out = _step(M, lam)
    # re-apply until the output is a fixed point, so that projecting twice is bit-identical
    for _ in range(_MAX_POLISH):
        nxt = _step(out, lam)
        if np.array_equal(nxt, out):
            break
        out = nxt
    return out


def project_columns_scaled_simplex(M, lam: float) -> np.ndarray:
    """Column-wise :func:`project_scaled_simplex` for a ``d x K`` matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("expected a 2-D array")
    if M.shape[1] == 0 or M.shape[0] == 0:
        return M.copy()
    return _project_columns(M, lam)


def project_box_support(w, support, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Clamp ``w`` to ``[lower, upper]`` and zero every entry outside ``support``."""
    w = np.asarray(w, dtype=np.float64)
    idx = np.fromiter(support, dtype=np.int64) if not isinstance(support, np.ndarray) else support
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= w.size):
        raise IndexError(f"support index out of range for length {w.size}")
    out = np.zeros_like(w)
    out[idx] = np.clip(w[idx], lower, upper)
    return out


def project_box_mask(W, mask) -> np.ndarray:
    """Matrix form of :func:`project_box_support` with a boolean ``K x N`` mask."""
    return np.where(mask, np.clip(W, 0.0, 1.0), 0.0)


def project_nonneg(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)
