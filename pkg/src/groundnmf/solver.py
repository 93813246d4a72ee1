"""Alternating projected-gradient solver for the constrained factorization.

Each outer iteration improves the loadings ``W`` with ``A, b`` fixed and then
``(A, b)`` jointly with ``W`` fixed. Both sub-problems are convex and are
solved inexactly by projected gradient descent with Armijo backtracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np

from .model import CountMatrix, FactorModel, SolveReport, SupportSets, check_feasibility
from .objective import DivergenceConfig, SparseDivergence, _as_count_matrix
from .projections import project_box_mask, project_columns_scaled_simplex, project_nonneg

logger = logging.getLogger(__name__)

# Smallest trial step before a line search gives up.
_MIN_STEP = 1e-30
# a few ulps of the objective's partial sums
_ROUNDING = 4 * np.finfo(np.float64).eps


class SolverError(RuntimeError):
    """Raised when the objective becomes non-finite during a fit."""


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.4
    n_components: Optional[int] = None
    simplex_enabled: bool = True
    max_outer_iters: int = 500
    outer_tol: float = 1e-6
    max_inner_iters: int = 50
    armijo_beta: float = 0.5
    armijo_sigma: float = 1e-4
    initial_step: float = 1.0
    n_restarts: int = 5
    rng_seed: int = 0
    epsilon_floor: float = 1e-10

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.n_components is not None and self.n_components < 1:
            raise ValueError("n_components must be at least 1")
        if not 0 < self.armijo_beta < 1:
            raise ValueError("armijo_beta must lie in (0, 1)")
        if not 0 < self.armijo_sigma <= 0.5:
            raise ValueError("armijo_sigma must lie in (0, 0.5]")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be at least 1")
        if not self.initial_step > 0 or not self.outer_tol >= 0:
            raise ValueError("initial_step must be positive and outer_tol non-negative")
        if not self.epsilon_floor > 0:
            raise ValueError("epsilon_floor must be positive")

    @property
    def divergence(self) -> DivergenceConfig:
        return DivergenceConfig(self.epsilon_floor)

    def replace(self, **changes) -> "SolverConfig":
        kw = asdict(self)
        kw.update(changes)
        return SolverConfig(**kw)


@dataclass
class _PGDResult:
    x: tuple
    value: tuple
    step: float
    iterations: int


def _projected_descent(
    f: Callable,
    grad: Callable,
    project: Callable,
    x0: tuple,
    f0: tuple,
    cfg: SolverConfig,
    step: float,
    max_iters: int,
    tol: float,
    noise: float = 0.0,
) -> _PGDResult:
    """Projected gradient descent over a tuple of arrays with a shared step.

    A trial step ``eta`` is accepted when
    ``f(P(x - eta*g)) <= f(x) - sigma * <g, x - P(x - eta*g)>``; otherwise
    ``eta`` shrinks by ``beta``. After an accepted step the next trial starts
    at ``eta / beta``.

    ``f`` returns ``(value, n_floored)``. A trial that raises the count of
    positive-count entries fitted below the epsilon floor is rejected: the
    true divergence is infinite there and the floored value would reward it.

    A predicted decrease at or below ``noise`` (the rounding error of ``f``)
    is treated as stationarity, so that rounding cannot drive the step
    size to zero.
    """
    x, (fx, floored) = x0, f0
    it = 0
    while it < max_iters:
        g = grad(*x)
        accepted = False
        step_in = step
        while step > _MIN_STEP:
            x_new = project(*(xi - step * gi for xi, gi in zip(x, g)))
            decrease = sum(float(np.vdot(gi, xi - xn)) for gi, xi, xn in zip(g, x, x_new))
            if decrease <= noise:
                # projected gradient vanishes at this step, up to rounding
                return _PGDResult(x, (fx, floored), step_in, it)
            f_new, floored_new = f(*x_new)
            if not np.isfinite(f_new):
                raise SolverError("objective became non-finite; check epsilon_floor")
            if (floored_new <= floored and f_new <= fx - cfg.armijo_sigma * decrease
                    and f_new <= fx):
                accepted = True
                break
            step *= cfg.armijo_beta
        if not accepted:
            # no decrease even at the smallest step; restart the search from the initial step next call
            step = cfg.initial_step
            break
        it += 1
        rel = (fx - f_new) / max(abs(fx), 1e-300)
        x, fx, floored = x_new, f_new, floored_new
        step = step / cfg.armijo_beta
        if rel < tol:
            break
    return _PGDResult(x, (fx, floored), step, it)


def _check_inputs(X, supports: Optional[SupportSets], K: Optional[int] = None):
    X = _as_count_matrix(X)
    if supports is not None:
        if len(supports) != X.n_columns:
            raise ValueError(f"supports has {len(supports)} columns but X has {X.n_columns}")
        if K is not None and supports.n_conditions != K:
            raise ValueError(f"supports use {supports.n_conditions} conditions but K = {K}")
    return X


def _resolve_k(cfg: SolverConfig, supports: Optional[SupportSets]) -> int:
    K = cfg.n_components
    if K is None:
        if supports is None:
            raise ValueError("n_components must be set when no supports are given")
        K = supports.n_conditions
    if K < 1:
        raise ValueError("K must be at least 1")
    return K


def init_model(X, supports: Optional[SupportSets], cfg: SolverConfig, rng=None) -> FactorModel:
    """Draw a feasible starting point.

    ``A`` columns are uniform on ``[0, 2*lam/d)`` projected onto the scaled
    simplex, ``b`` is half the row means of ``X`` and ``W`` is uniform on
    ``[0, 1]`` inside the supports and zero elsewhere.
    """
    X = _as_count_matrix(X)
    K = _resolve_k(cfg, supports)
    X = _check_inputs(X, supports, K)
    d, n = X.shape
    if d == 0:
        raise ValueError("X has no features")
    rng = np.random.default_rng(cfg.rng_seed if rng is None else rng)
    A = project_columns_scaled_simplex(rng.uniform(0.0, 2.0 * cfg.lam / d, size=(d, K)), cfg.lam)
    b = 0.5 * X.row_means()
    mask = np.ones((K, n), dtype=bool) if supports is None else supports.mask()
    W = np.where(mask, rng.uniform(0.0, 1.0, size=(K, n)), 0.0)
    return FactorModel(A=A, W=W, b=b, lam=cfg.lam, simplex_enabled=cfg.simplex_enabled)


def _w_problem(f: SparseDivergence, A, b, mask, W0, f0, cfg, step, max_iters, tol):
    return _projected_descent(
        f=lambda W: f.value_and_floored(A, W, b),
        grad=lambda W: (f.grad_W(A, W, b),),
        project=lambda W: (project_box_mask(W, mask),),
        x0=(W0,), f0=f0, cfg=cfg, step=step, max_iters=max_iters, tol=tol,
        noise=_ROUNDING * f.rounding_scale(A, W0, b),
    )


def _ab_problem(f: SparseDivergence, W, A0, b0, f0, cfg, step, max_iters, tol):
    if cfg.simplex_enabled:
        def project(A, b):
            return project_columns_scaled_simplex(A, cfg.lam), project_nonneg(b)
    else:
        def project(A, b):
            return project_nonneg(A), project_nonneg(b)
    return _projected_descent(
        f=lambda A, b: f.value_and_floored(A, W, b),
        grad=lambda A, b: f.grad_Ab(A, W, b),
        project=project,
        x0=(A0, b0), f0=f0, cfg=cfg, step=step, max_iters=max_iters, tol=tol,
        noise=_ROUNDING * f.rounding_scale(A0, W, b0),
    )


def _mask_for(supports: Optional[SupportSets], K: int, n: int) -> np.ndarray:
    return np.ones((K, n), dtype=bool) if supports is None else supports.mask()


def w_step(X, model: FactorModel, supports: Optional[SupportSets], cfg: SolverConfig) -> np.ndarray:
    """One inexact solve of the loading sub-problem; returns the new ``W``."""
    X = _check_inputs(X, supports, model.n_components)
    f = SparseDivergence(X, cfg.divergence)
    mask = _mask_for(supports, model.n_components, X.n_columns)
    W0 = np.array(model.W)
    res = _w_problem(f, model.A, model.b, mask, W0, f.value_and_floored(model.A, W0, model.b), cfg,
                     cfg.initial_step, cfg.max_inner_iters, cfg.outer_tol / 10)
    return res.x[0]


def a_b_step(X, model: FactorModel, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """One inexact joint solve of the phenotype/bias sub-problem; returns ``(A, b)``."""
    X = _check_inputs(X, None)
    f = SparseDivergence(X, cfg.divergence)
    A0, b0 = np.array(model.A), np.array(model.b)
    res = _ab_problem(f, model.W, A0, b0, f.value_and_floored(A0, model.W, b0), cfg,
                      cfg.initial_step, cfg.max_inner_iters, cfg.outer_tol / 10)
    return res.x


def _fit_single(X: CountMatrix, supports, cfg: SolverConfig, rng) -> tuple[FactorModel, list, list, bool]:
    f = SparseDivergence(X, cfg.divergence)
    start = init_model(X, supports, cfg, rng)
    K, n = start.W.shape
    mask = _mask_for(supports, K, n)
    A, W, b = np.array(start.A), np.array(start.W), np.array(start.b)
    fx = f.value_and_floored(A, W, b)
    if not np.isfinite(fx[0]):
        raise SolverError("objective at initialization is non-finite")
    trace, feas = [fx[0]], []
    step_w = step_ab = cfg.initial_step
    inner_tol = cfg.outer_tol / 10
    converged = False
    for _ in range(cfg.max_outer_iters):
        rw = _w_problem(f, A, b, mask, W, fx, cfg, step_w, cfg.max_inner_iters, inner_tol)
        W, step_w = rw.x[0], rw.step
        rab = _ab_problem(f, W, A, b, rw.value, cfg, step_ab, cfg.max_inner_iters, inner_tol)
        (A, b), step_ab = rab.x, rab.step
        f_prev, fx = fx[0], rab.value
        trace.append(fx[0])
        model = FactorModel(A=A, W=W, b=b, lam=cfg.lam, simplex_enabled=cfg.simplex_enabled)
        feas.append(check_feasibility(model, supports).max_violation)
        if (f_prev - fx[0]) / max(abs(f_prev), 1e-300) < cfg.outer_tol:
            converged = True
            break
    model = FactorModel(A=A, W=W, b=b, lam=cfg.lam, simplex_enabled=cfg.simplex_enabled)
    return model, trace, feas, converged


def fit(X, supports: Optional[SupportSets], cfg: SolverConfig) -> tuple[FactorModel, SolveReport]:
    """Fit the constrained factorization with ``cfg.n_restarts`` random starts.

    Parameters
    ----------
    X : CountMatrix or array-like, shape (d, N)
    supports : SupportSets or None
        Admissible conditions per column. ``None`` leaves every loading free.
    cfg : SolverConfig

    Returns
    -------
    model : FactorModel
        The restart with the lowest final divergence (ties go to the lowest
        restart index).
    report : SolveReport
    """
    K = _resolve_k(cfg, supports)
    X = _check_inputs(X, supports, K)
    if X.n_columns == 0:
        raise ValueError("X has no columns")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_restarts)
    best = None
    finals = []
    for r, seed in enumerate(seeds):
        model, trace, feas, converged = _fit_single(X, supports, cfg.replace(n_components=K),
                                                    np.random.default_rng(seed))
        finals.append(trace[-1])
        logger.debug("restart %d: divergence %.6g after %d iterations", r, trace[-1], len(trace) - 1)
        if best is None or trace[-1] < best[1][-1]:
            best = (model, trace, feas, converged, r)
    model, trace, feas, converged, r = best
    report = SolveReport(
        objective_trace=tuple(trace),
        outer_iterations=len(trace) - 1,
        restart_objectives=tuple(finals),
        selected_restart=r,
        converged=converged,
        feasibility_max_violation=check_feasibility(model, supports).max_violation,
        feasibility_trace=tuple(feas),
    )
    return model, report


def transform(X_new, model: FactorModel, supports: Optional[SupportSets] = None,
              cfg: Optional[SolverConfig] = None, W_init=None) -> np.ndarray:
    """Loadings of new columns under frozen ``(A, b)``.

    Solves the loading sub-problem alone until the relative decrease per
    round of inner iterations drops below ``outer_tol / 10`` (at most
    ``max_outer_iters`` rounds). Without ``supports`` only the box
    constraint applies.
    """
    cfg = cfg or SolverConfig(lam=model.lam)
    X_new = _as_count_matrix(X_new)
    if X_new.n_features != model.n_features:
        raise ValueError(f"X_new has {X_new.n_features} features, model expects {model.n_features}")
    X_new = _check_inputs(X_new, supports, model.n_components)
    K, n = model.n_components, X_new.n_columns
    mask = _mask_for(supports, K, n)
    if W_init is None:
        W = np.where(mask, 0.5, 0.0)
    else:
        W = project_box_mask(np.asarray(W_init, dtype=np.float64), mask)
    if n == 0:
        return W
    f = SparseDivergence(X_new, cfg.divergence)
    A, b = model.A, model.b
    fx = f.value_and_floored(A, W, b)
    step = cfg.initial_step
    for _ in range(cfg.max_outer_iters):
        res = _w_problem(f, A, b, mask, W, fx, cfg, step, cfg.max_inner_iters, cfg.outer_tol / 10)
        f_prev, fx, W, step = fx[0], res.value, res.x[0], res.step
        if (res.iterations < cfg.max_inner_iters
                or (f_prev - fx[0]) / max(abs(f_prev), 1e-300) < cfg.outer_tol / 10):
            break
    return W
