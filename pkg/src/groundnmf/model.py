"""Domain types shared by every stage of the factorization.

Orientation follows the factor model: an observation matrix ``X`` has one
row per feature (``d`` rows) and one column per sample (``N`` columns), the
phenotype matrix ``A`` is ``d x K`` and the loading matrix ``W`` is ``K x N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


class CountMatrix:
    """Sparse non-negative ``d x N`` observation matrix in coordinate form.

    Coordinates are kept in row-major order (sorted by row, then column) and
    are unique. Explicit zeros are dropped on construction.

    Parameters
    ----------
    rows, cols : array-like of int
        0-based coordinates of the stored entries.
    values : array-like of float
        Entry values, finite and non-negative.
    shape : tuple of int
        ``(n_features, n_columns)``.
    feature_names, column_ids : sequence of str, optional
    """

    __slots__ = ("rows", "cols", "values", "shape", "feature_names", "column_ids", "_csr")

    def __init__(
        self,
        rows,
        cols,
        values,
        shape: tuple[int, int],
        feature_names: Optional[Sequence[str]] = None,
        column_ids: Optional[Sequence[str]] = None,
    ):
        d, n = int(shape[0]), int(shape[1])
        if d < 0 or n < 0:
            raise ValueError(f"invalid shape {shape!r}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.size == cols.size == values.size):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= d or cols.min() < 0 or cols.max() >= n:
                raise ValueError(f"coordinate out of range for shape ({d}, {n})")
            if not np.all(np.isfinite(values)):
                raise ValueError("entries must be finite")
            if values.min() < 0:
                raise ValueError("entries must be non-negative")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate coordinate ({rows[i]}, {cols[i]})")
        keep = values != 0
        self.rows = _frozen(rows[keep])
        self.cols = _frozen(cols[keep])
        self.values = _frozen(values[keep])
        self.shape = (d, n)
        if feature_names is not None:
            feature_names = tuple(str(s) for s in feature_names)
            if len(feature_names) != d:
                raise ValueError(f"expected {d} feature names, got {len(feature_names)}")
        if column_ids is not None:
            column_ids = tuple(str(s) for s in column_ids)
            if len(column_ids) != n:
                raise ValueError(f"expected {n} column ids, got {len(column_ids)}")
        self.feature_names = feature_names
        self.column_ids = column_ids
        self._csr = None

    @classmethod
    def from_dense(cls, X, **kwargs) -> "CountMatrix":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array")
        rows, cols = np.nonzero(X)
        return cls(rows, cols, X[rows, cols], X.shape, **kwargs)

    @classmethod
    def from_sparse(cls, S, **kwargs) -> "CountMatrix":
        S = sp.coo_array(S)
        S.sum_duplicates()
        return cls(S.row, S.col, S.data, S.shape, **kwargs)

    @property
    def n_features(self) -> int:
        return self.shape[0]

    @property
    def n_columns(self) -> int:
        return self.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def to_dense(self) -> np.ndarray:
        X = np.zeros(self.shape)
        X[self.rows, self.cols] = self.values
        return X

    def to_csr(self) -> sp.csr_array:
        if self._csr is None:
            self._csr = sp.csr_array((self.values, (self.rows, self.cols)), shape=self.shape)
        return self._csr

    def select_columns(self, idx) -> "CountMatrix":
        """Return the sub-matrix made of columns ``idx`` (in the given order)."""
        idx = np.asarray(idx, dtype=np.int64)
        sub = self.to_csr()[:, idx]
        sub = sp.coo_array(sub)
        ids = None if self.column_ids is None else [self.column_ids[i] for i in idx]
        return CountMatrix(sub.row, sub.col, sub.data, (self.shape[0], idx.size),
                           feature_names=self.feature_names, column_ids=ids)

    def row_means(self) -> np.ndarray:
        if self.shape[1] == 0:
            return np.zeros(self.shape[0])
        return np.bincount(self.rows, weights=self.values, minlength=self.shape[0]) / self.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"CountMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True)
class SupportSets:
    """Per-column sets of admissible condition indices (0-based)."""

    sets: tuple[frozenset[int], ...]
    n_conditions: int

    def __post_init__(self):
        sets = tuple(frozenset(int(k) for k in s) for s in self.sets)
        object.__setattr__(self, "sets", sets)
        if self.n_conditions < 0:
            raise ValueError("n_conditions must be non-negative")
        for j, s in enumerate(sets):
            if any(k < 0 or k >= self.n_conditions for k in s):
                raise ValueError(f"support of column {j} has an index outside [0, {self.n_conditions})")

    @classmethod
    def full(cls, n_columns: int, n_conditions: int) -> "SupportSets":
        every = frozenset(range(n_conditions))
        return cls(tuple(every for _ in range(n_columns)), n_conditions)

    @classmethod
    def from_mask(cls, mask) -> "SupportSets":
        mask = np.asarray(mask, dtype=bool)
        return cls(tuple(frozenset(np.flatnonzero(mask[:, j]).tolist()) for j in range(mask.shape[1])),
                   mask.shape[0])

    def __len__(self):
        return len(self.sets)

    @property
    def n_columns(self) -> int:
        return len(self.sets)

    def mask(self) -> np.ndarray:
        """Boolean ``K x N`` indicator of admissible entries."""
        M = np.zeros((self.n_conditions, len(self.sets)), dtype=bool)
        for j, s in enumerate(self.sets):
            if s:
                M[list(s), j] = True
        return M

    def select(self, idx: Iterable[int]) -> "SupportSets":
        return SupportSets(tuple(self.sets[int(j)] for j in idx), self.n_conditions)


@dataclass(frozen=True, eq=False)
class FactorModel:
    """Fitted (or planted) factors ``A`` (d x K), ``W`` (K x N) and bias ``b`` (d)."""

    A: np.ndarray
    W: np.ndarray
    b: np.ndarray
    lam: float
    simplex_enabled: bool = True

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).ravel()
        if A.ndim != 2 or W.ndim != 2:
            raise ValueError("A and W must be 2-D")
        if A.shape[1] != W.shape[0]:
            raise ValueError(f"A has {A.shape[1]} columns but W has {W.shape[0]} rows")
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]} but A has {A.shape[0]} rows")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "simplex_enabled", bool(self.simplex_enabled))

    @property
    def n_features(self) -> int:
        return self.A.shape[0]

    @property
    def n_components(self) -> int:
        return self.A.shape[1]

    @property
    def n_columns(self) -> int:
        return self.W.shape[1]

    def replace(self, **changes) -> "FactorModel":
        kw = dict(A=self.A, W=self.W, b=self.b, lam=self.lam, simplex_enabled=self.simplex_enabled)
        kw.update(changes)
        return FactorModel(**kw)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a multi-restart fit.

    ``objective_trace[0]`` is the objective at initialization and entry ``t``
    the objective after outer iteration ``t``.
    """

    objective_trace: tuple[float, ...]
    outer_iterations: int
    restart_objectives: tuple[float, ...]
    selected_restart: int
    converged: bool
    feasibility_max_violation: float
    feasibility_trace: tuple[float, ...] = field(default=())

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> dict:
        return {
            "objective_trace": list(self.objective_trace),
            "outer_iterations": self.outer_iterations,
            "restart_objectives": list(self.restart_objectives),
            "selected_restart": self.selected_restart,
            "converged": self.converged,
            "feasibility_max_violation": self.feasibility_max_violation,
            "feasibility_trace": list(self.feasibility_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(
            objective_trace=tuple(float(v) for v in d["objective_trace"]),
            outer_iterations=int(d["outer_iterations"]),
            restart_objectives=tuple(float(v) for v in d["restart_objectives"]),
            selected_restart=int(d["selected_restart"]),
            converged=bool(d["converged"]),
            feasibility_max_violation=float(d["feasibility_max_violation"]),
            feasibility_trace=tuple(float(v) for v in d.get("feasibility_trace", ())),
        )


@dataclass(frozen=True)
class FeasibilityReport:
    box: float
    support_leak: float
    simplex_deviation: float
    a_negativity: float
    b_negativity: float

    @property
    def max_violation(self) -> float:
        return max(self.box, self.support_leak, self.simplex_deviation,
                   self.a_negativity, self.b_negativity)


def reconstruct(model: FactorModel) -> np.ndarray:
    """Return ``Y = A W + b 1^T``."""
    return model.A @ model.W + model.b[:, None]


def check_feasibility(model: FactorModel, supports: Optional[SupportSets] = None) -> FeasibilityReport:
    """Measure how far ``model`` is from the constrained feasible set.

    Each field is a non-negative magnitude; zero means the corresponding
    constraint family holds. Support is checked as inclusion, so a supported
    entry equal to zero is not a violation.
    """
    A, W, b = model.A, model.W, model.b
    box = float(max(0.0, -W.min(initial=0.0), W.max(initial=1.0) - 1.0))
    leak = 0.0
    if supports is not None:
        if supports.n_conditions != W.shape[0] or len(supports) != W.shape[1]:
            raise ValueError("supports do not match the shape of W")
        outside = ~supports.mask()
        if outside.any():
            leak = float(np.abs(W[outside]).max())
    dev = 0.0
    if model.simplex_enabled and A.size:
        dev = float(np.abs(A.sum(axis=0) - model.lam).max())
    return FeasibilityReport(
        box=box,
        support_leak=leak,
        simplex_deviation=dev,
        a_negativity=float(max(0.0, -A.min(initial=0.0))),
        b_negativity=float(max(0.0, -b.min(initial=0.0))),
    )
