"""Penalized logistic regression and ranking metrics for the prediction harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata


def auroc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties count 1/2)."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def youden_threshold(labels, scores) -> float:
    """Score threshold maximizing sensitivity + specificity - 1 (predict positive when ``score >= t``)."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    best_t, best_j = np.inf, -np.inf
    n_pos, n_neg = y.sum(), (~y).sum()
    for t in np.unique(s):
        pred = s >= t
        j = (pred & y).sum() / n_pos + (~pred & ~y).sum() / n_neg - 1.0
        if j > best_j:
            best_t, best_j = t, j
    return float(best_t)


def sensitivity_specificity(labels, scores, threshold: float) -> tuple[float, float]:
    y = np.asarray(labels).astype(bool)
    pred = np.asarray(scores) >= threshold
    sens = float((pred & y).sum() / y.sum()) if y.any() else float("nan")
    spec = float((~pred & ~y).sum() / (~y).sum()) if (~y).any() else float("nan")
    return sens, spec


def stratified_folds(labels, n_folds: int = 5, seed: int = 0) -> np.ndarray:
    """Assign each sample to one of ``n_folds`` folds, balancing both classes.

    Samples of each class are shuffled and dealt round-robin; the dealing
    continues across classes so fold sizes differ by at most one.
    """
    y = np.asarray(labels).astype(bool)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    n_pos = int(y.sum())
    minority = min(n_pos, y.size - n_pos)
    if minority == 0:
        raise ValueError("stratified folds need both classes")
    if not 2 <= n_folds <= minority:
        raise ValueError(f"n_folds must lie in [2, {minority}] (minority class size)")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    start = 0
    for cls in (True, False):
        idx = rng.permutation(np.flatnonzero(y == cls))
        folds[idx] = (start + np.arange(idx.size)) % n_folds
        start = (start + idx.size) % n_folds
    return folds


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _loss_and_grad(Z, y, theta):
    """Mean logistic loss; ``theta[0]`` is the intercept."""
    m = Z @ theta
    loss = float(np.mean(np.logaddexp(0.0, m) - y * m))
    g = Z.T @ (expit(m) - y) / y.size
    return loss, g


@dataclass(frozen=True)
class LogRegFit:
    weights: np.ndarray
    intercept: float
    strength: float
    converged: bool
    iterations: int
    validation_auroc: Optional[float] = None

    def decision_function(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.intercept


def fit_logistic(features, labels, C: float, penalty: str = "l2", tol: float = 1e-6,
                 max_iter: int = 20000) -> tuple[np.ndarray, float, bool, int]:
    """Minimize ``mean logloss + pen(w) / (C n)`` by accelerated proximal gradient.

    ``pen`` is ``||w||_1`` or ``||w||^2 / 2`` and the intercept is not
    penalized, which matches the ``C`` convention of common libraries. The
    stopping rule is the norm of the proximal gradient mapping.
    """
    if penalty not in ("l1", "l2"):
        raise ValueError("penalty must be 'l1' or 'l2'")
    if not C > 0:
        raise ValueError("C must be positive")
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n, p = F.shape
    Z = np.hstack([np.ones((n, 1)), F])
    reg = 1.0 / (C * n)
    L = np.linalg.norm(Z, 2) ** 2 / (4.0 * n) + (reg if penalty == "l2" else 0.0)
    t = 1.0 / L

    def prox(v):
        out = v.copy()
        out[1:] = _soft_threshold(v[1:], t * reg) if penalty == "l1" else v[1:]
        return out

    def smooth_grad(theta):
        _, g = _loss_and_grad(Z, y, theta)
        if penalty == "l2":
            g[1:] += reg * theta[1:]
        return g

    theta = np.zeros(p + 1)
    v, mom = theta.copy(), 1.0
    converged = False
    for it in range(1, max_iter + 1):
        theta_new = prox(v - t * smooth_grad(v))
        # adaptive restart keeps the iteration monotone-ish on ill-conditioned data
        if np.dot(v - theta_new, theta_new - theta) > 0:
            mom = 1.0
        mom_new = (1.0 + np.sqrt(1.0 + 4.0 * mom * mom)) / 2.0
        v = theta_new + ((mom - 1.0) / mom_new) * (theta_new - theta)
        theta, mom = theta_new, mom_new
        if it % 10 == 0 or it == max_iter:
            G = (theta - prox(theta - t * smooth_grad(theta))) / t
            if np.linalg.norm(G) <= tol:
                converged = True
                break
    return theta[1:], float(theta[0]), converged, it


def _holdout_split(y: np.ndarray, frac: float, rng) -> np.ndarray:
    """Boolean mask of a stratified validation subset."""
    val = np.zeros(y.size, dtype=bool)
    for cls in (True, False):
        idx = rng.permutation(np.flatnonzero(y == cls))
        if idx.size < 2:
            raise ValueError("each class needs at least two samples for validation")
        k = min(max(1, int(round(frac * idx.size))), idx.size - 1)
        val[idx[:k]] = True
    return val


def train_logreg(features, labels, penalty: str = "l2",
                 strength_grid: Sequence[float] = (0.01, 0.1, 1.0, 10.0), *,
                 seed: int = 0, standardize: bool = True, tol: float = 1e-6,
                 max_iter: int = 20000) -> LogRegFit:
    """Fit penalized logistic regression, choosing ``C`` on a held-out 20%.

    With more than one grid value, each is fitted on a stratified 80% of the
    data and scored by AUROC on the rest; the first best value is refitted
    on all data. Features are z-scored internally when ``standardize`` and
    the returned weights are mapped back to the original scale, so exact
    zeros survive.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if F.ndim != 2 or F.shape[0] != y.size:
        raise ValueError("features must be (n_samples, n_features) matching labels")
    if not np.all(np.isfinite(F)):
        raise ValueError("features must be finite")
    if y.all() or not y.any():
        raise ValueError("training labels must contain both classes")
    grid = [float(c) for c in strength_grid]
    if not grid:
        raise ValueError("strength_grid is empty")

    def scaler(M):
        if not standardize:
            return np.zeros(M.shape[1]), np.ones(M.shape[1])
        mu = M.mean(axis=0)
        sd = M.std(axis=0)
        return mu, np.where(sd > 0, sd, 1.0)

    val_auc = None
    chosen = grid[0]
    if len(grid) > 1:
        val = _holdout_split(y, 0.2, np.random.default_rng(seed))
        mu, sd = scaler(F[~val])
        Ztr, Zva = (F[~val] - mu) / sd, (F[val] - mu) / sd
        best = -np.inf
        for C in grid:
            w, c, _, _ = fit_logistic(Ztr, y[~val], C, penalty, tol, max_iter)
            score = auroc(y[val], Zva @ w + c)
            if score > best:
                best, chosen = score, C
        val_auc = float(best)
    mu, sd = scaler(F)
    w, c, converged, it = fit_logistic((F - mu) / sd, y, chosen, penalty, tol, max_iter)
    w_orig = w / sd
    c_orig = c - float(np.dot(w_orig, mu))
    return LogRegFit(weights=w_orig, intercept=c_orig, strength=chosen, converged=converged,
                     iterations=it, validation_auroc=val_auc)
