"""Evaluation protocols: phenotype sparsity, lambda sweeps, term export and outcome prediction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .logistic import (
    auroc,
    sensitivity_specificity,
    stratified_folds,
    train_logreg,
    youden_threshold,
)
from .model import CountMatrix, FactorModel, SolveReport, SupportSets
from .objective import _as_count_matrix
from .solver import SolverConfig, fit, transform

logger = logging.getLogger(__name__)

FEATURE_MODES = ("loadings", "raw", "augmented")
DEFAULT_PENALTY = {"loadings": "l2", "raw": "l1", "augmented": "l1"}
DEFAULT_GRID = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class SparsityReport:
    per_column_nnz: tuple[int, ...]
    median_nnz: float
    third_quartile_nnz: float
    lam: float
    min_terms_ok: bool

    def to_dict(self) -> dict:
        return {
            "per_column_nnz": list(self.per_column_nnz),
            "median_nnz": self.median_nnz,
            "third_quartile_nnz": self.third_quartile_nnz,
            "lambda": self.lam,
            "min_terms_ok": self.min_terms_ok,
        }


def sparsity(model: FactorModel, zero_tol: float = 1e-12, min_terms: int = 5) -> SparsityReport:
    """Count non-zero entries per phenotype column."""
    nnz = (np.abs(model.A) > zero_tol).sum(axis=0)
    if nnz.size == 0:
        return SparsityReport((), 0.0, 0.0, model.lam, True)
    return SparsityReport(
        per_column_nnz=tuple(int(v) for v in nnz),
        median_nnz=float(np.median(nnz)),
        third_quartile_nnz=float(np.percentile(nnz, 75)),
        lam=model.lam,
        min_terms_ok=bool((nnz >= min_terms).all()),
    )


@dataclass(frozen=True)
class SweepRow:
    lam: float
    divergence: float
    sparsity: Optional[SparsityReport]
    report: Optional[SolveReport] = None
    error: Optional[str] = None


def lambda_sweep(X, supports: Optional[SupportSets], lambdas: Sequence[float],
                 cfg: SolverConfig, zero_tol: float = 1e-12, min_terms: int = 5) -> list[SweepRow]:
    """Fit once per ``lambda`` with the same seeds and tabulate fit against sparsity.

    A failing fit is recorded with its error message and the sweep moves on.
    """
    if len(lambdas) == 0:
        raise ValueError("lambdas is empty")
    X = _as_count_matrix(X)
    rows = []
    for lam in lambdas:
        try:
            model, report = fit(X, supports, cfg.replace(lam=float(lam)))
        except (ValueError, RuntimeError) as exc:
            logger.warning("fit failed for lambda=%g: %s", lam, exc)
            rows.append(SweepRow(float(lam), float("nan"), None, None, str(exc)))
            continue
        rows.append(SweepRow(float(lam), report.final_objective,
                             sparsity(model, zero_tol, min_terms), report))
    return rows


def _ranked(values: np.ndarray, k: int) -> np.ndarray:
    # descending magnitude, ties by index
    order = np.lexsort((np.arange(values.size), -np.abs(values)))
    return order[:k]


def top_terms(model: FactorModel, names: Sequence[str], k: int = 15) -> list[list[tuple[str, float]]]:
    """The ``k`` largest-magnitude terms of each phenotype, as ``(name, weight)`` pairs."""
    d = model.n_features
    if len(names) != d:
        raise ValueError(f"expected {d} names, got {len(names)}")
    if k > d:
        warnings.warn(f"k={k} exceeds the number of features; truncating to {d}", stacklevel=2)
        k = d
    out = []
    for col in model.A.T:
        out.append([(names[i], float(col[i])) for i in _ranked(col, k)])
    return out


@dataclass(frozen=True)
class WeightTables:
    loadings: list[tuple[str, float]]
    raw: list[tuple[str, float]]


def weight_inspection(weights, feature_names: Sequence[str], condition_names: Sequence[str],
                      top_k: int = 10) -> WeightTables:
    """Split augmented-classifier weights into loading and raw-feature blocks, each ranked by magnitude.

    ``weights`` holds the ``K`` loading weights first, then the ``d`` raw weights.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    K, d = len(condition_names), len(feature_names)
    if w.size != K + d:
        raise ValueError(f"expected {K + d} weights, got {w.size}")
    wl, wr = w[:K], w[K:]
    return WeightTables(
        loadings=[(condition_names[i], float(wl[i])) for i in _ranked(wl, top_k)],
        raw=[(feature_names[i], float(wr[i])) for i in _ranked(wr, top_k)],
    )


@dataclass(frozen=True)
class FoldResult:
    auroc: float
    sensitivity: float
    specificity: float
    strength: float
    nonzero_raw_fraction: Optional[float] = None
    weights: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class PredictionReport:
    feature_mode: str
    per_fold: tuple[FoldResult, ...]

    def _stat(self, name, fn):
        return float(fn([getattr(f, name) for f in self.per_fold]))

    @property
    def mean_auroc(self) -> float:
        return self._stat("auroc", np.mean)

    @property
    def std_auroc(self) -> float:
        return self._stat("auroc", np.std)

    @property
    def mean_sensitivity(self) -> float:
        return self._stat("sensitivity", np.mean)

    @property
    def std_sensitivity(self) -> float:
        return self._stat("sensitivity", np.std)

    @property
    def mean_specificity(self) -> float:
        return self._stat("specificity", np.mean)

    @property
    def std_specificity(self) -> float:
        return self._stat("specificity", np.std)

    @property
    def chosen_regularization(self) -> tuple[float, ...]:
        return tuple(f.strength for f in self.per_fold)

    @property
    def nonzero_raw_feature_fraction(self) -> Optional[float]:
        if self.feature_mode != "augmented":
            return None
        return self._stat("nonzero_raw_fraction", np.mean)

    def to_dict(self) -> dict:
        return {
            "feature_mode": self.feature_mode,
            "per_fold": [
                {"auroc": f.auroc, "sensitivity": f.sensitivity, "specificity": f.specificity,
                 "strength": f.strength, "nonzero_raw_fraction": f.nonzero_raw_fraction}
                for f in self.per_fold
            ],
            "mean_auroc": self.mean_auroc,
            "std_auroc": self.std_auroc,
            "mean_sensitivity": self.mean_sensitivity,
            "std_sensitivity": self.std_sensitivity,
            "mean_specificity": self.mean_specificity,
            "std_specificity": self.std_specificity,
            "chosen_regularization": list(self.chosen_regularization),
            "nonzero_raw_feature_fraction": self.nonzero_raw_feature_fraction,
        }


def _score_fold(F_train, y_train, F_test, y_test, penalty, grid, seed, n_loadings=None) -> FoldResult:
    clf = train_logreg(F_train, y_train, penalty, grid, seed=seed)
    s_train = clf.decision_function(F_train)
    s_test = clf.decision_function(F_test)
    sens, spec = sensitivity_specificity(y_test, s_test, youden_threshold(y_train, s_train))
    frac = None
    if n_loadings is not None:
        raw = clf.weights[n_loadings:]
        frac = float(np.count_nonzero(raw) / raw.size) if raw.size else 0.0
    return FoldResult(auroc(y_test, s_test), sens, spec, clf.strength, frac, clf.weights)


def cross_validate_features(features, labels, penalty: str = "l2",
                            strength_grid: Sequence[float] = DEFAULT_GRID,
                            n_folds: int = 5, seed: int = 0) -> PredictionReport:
    """Stratified cross-validation of a classifier on a fixed feature matrix ``(n, p)``."""
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    folds = stratified_folds(y, n_folds, seed)
    results = []
    for k in range(n_folds):
        te = folds == k
        results.append(_score_fold(F[~te], y[~te], F[te], y[te], penalty, strength_grid, seed + k))
    return PredictionReport("fixed", tuple(results))


def predict_eval(X, supports: SupportSets, labels, mode: str = "loadings",
                 cfg: Optional[SolverConfig] = None, *, n_folds: int = 5,
                 strength_grid: Sequence[float] = DEFAULT_GRID,
                 penalty: Optional[str] = None, seed: int = 0) -> PredictionReport:
    """Cross-validated outcome prediction from factor loadings, raw counts, or both.

    Per fold the factorization is fitted on the training columns only with
    their supports; training loadings are re-solved under those supports and
    test loadings under the box constraint alone, so test supports and labels
    never reach the fit.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"mode must be one of {FEATURE_MODES}")
    X = _as_count_matrix(X)
    y = np.asarray(labels).astype(np.int64)
    if y.size != X.n_columns:
        raise ValueError(f"expected {X.n_columns} labels, got {y.size}")
    if supports is not None and len(supports) != X.n_columns:
        raise ValueError("supports do not match X")
    cfg = cfg or SolverConfig()
    penalty = penalty or DEFAULT_PENALTY[mode]
    folds = stratified_folds(y, n_folds, seed)
    results = []
    for k in range(n_folds):
        tr, te = np.flatnonzero(folds != k), np.flatnonzero(folds == k)
        X_tr, X_te = X.select_columns(tr), X.select_columns(te)
        blocks_tr, blocks_te = [], []
        if mode in ("loadings", "augmented"):
            sup_tr = None if supports is None else supports.select(tr)
            model, _ = fit(X_tr, sup_tr, cfg)
            W_tr = transform(X_tr, model, sup_tr, cfg, W_init=model.W)
            W_te = transform(X_te, model, None, cfg)
            blocks_tr.append(W_tr.T)
            blocks_te.append(W_te.T)
        if mode in ("raw", "augmented"):
            blocks_tr.append(X_tr.to_dense().T)
            blocks_te.append(X_te.to_dense().T)
        n_load = blocks_tr[0].shape[1] if mode == "augmented" else None
        results.append(_score_fold(np.hstack(blocks_tr), y[tr], np.hstack(blocks_te), y[te],
                                   penalty, strength_grid, seed + k, n_load))
        logger.info("fold %d: AUROC %.4f", k, results[-1].auroc)
    return PredictionReport(mode, tuple(results))
