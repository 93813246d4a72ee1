"""scikit-learn compatible wrapper around the constrained factorization."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_non_negative

from .model import CountMatrix, FactorModel, SupportSets
from .objective import i_divergence
from .solver import SolverConfig, fit, transform


def check_supports(supports, n_samples: int, n_components=None) -> SupportSets:
    """Coerce per-sample condition lists or a boolean ``(n_samples, K)`` mask to :class:`SupportSets`."""
    if isinstance(supports, SupportSets):
        out = supports
    elif isinstance(supports, np.ndarray) and supports.dtype == bool:
        if supports.ndim != 2:
            raise ValueError("a support mask must be 2-D (n_samples, n_components)")
        out = SupportSets.from_mask(supports.T)
    else:
        sets = [frozenset(int(k) for k in s) for s in supports]
        if n_components is None:
            n_components = 1 + max((max(s) for s in sets if s), default=-1)
        out = SupportSets(tuple(sets), int(n_components))
    if len(out) != n_samples:
        raise ValueError(f"supports describe {len(out)} samples, X has {n_samples}")
    if n_components is not None and out.n_conditions != n_components:
        raise ValueError(f"supports use {out.n_conditions} conditions, expected {n_components}")
    return out


def _to_count_matrix(X) -> CountMatrix:
    # rows are samples here; the factor model stores them as columns
    X = check_array(X, accept_sparse=("csr", "csc", "coo"), dtype=np.float64, ensure_min_samples=1)
    check_non_negative(X, "ConstrainedNMF")
    if sp.issparse(X):
        return CountMatrix.from_sparse(X.T)
    return CountMatrix.from_dense(X.T)


class ConstrainedNMF(TransformerMixin, BaseEstimator):
    """Non-negative factorization with support-constrained loadings and simplex-constrained components.

    Follows scikit-learn orientation: ``X`` is ``(n_samples, n_features)``,
    :meth:`transform` returns ``(n_samples, n_components)`` loadings in
    ``[0, 1]`` and ``components_`` is ``(n_components, n_features)`` with
    each row summing to ``lam`` when ``simplex`` is on.

    Parameters
    ----------
    n_components : int or None
        Number of conditions. Inferred from ``supports`` when omitted.
    lam : float
        Sum of every component row.
    simplex : bool
        ``False`` keeps components merely non-negative.
    max_iter, tol : int, float
        Outer iteration cap and relative-decrease stopping threshold.
    max_inner_iter : int
        Projected-gradient steps per sub-problem and outer iteration.
    n_restarts : int
    random_state : int or None
    epsilon : float
        Floor applied to reconstructed values inside the logarithm.

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
    bias_ : ndarray of shape (n_features,)
    loadings_ : ndarray of shape (n_samples, n_components)
        Training loadings.
    reconstruction_err_ : float
        Final I-divergence on the training data.
    report_ : SolveReport
    """

    def __init__(self, n_components=None, *, lam=0.4, simplex=True, max_iter=500, tol=1e-6,
                 max_inner_iter=50, armijo_beta=0.5, armijo_sigma=1e-4, initial_step=1.0,
                 n_restarts=5, random_state=None, epsilon=1e-10):
        self.n_components = n_components
        self.lam = lam
        self.simplex = simplex
        self.max_iter = max_iter
        self.tol = tol
        self.max_inner_iter = max_inner_iter
        self.armijo_beta = armijo_beta
        self.armijo_sigma = armijo_sigma
        self.initial_step = initial_step
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.epsilon = epsilon

    def _solver_config(self) -> SolverConfig:
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1)[0])
        elif isinstance(seed, np.random.RandomState):
            seed = int(seed.randint(np.iinfo(np.int32).max))
        return SolverConfig(
            lam=self.lam, n_components=self.n_components, simplex_enabled=self.simplex,
            max_outer_iters=self.max_iter, outer_tol=self.tol, max_inner_iters=self.max_inner_iter,
            armijo_beta=self.armijo_beta, armijo_sigma=self.armijo_sigma,
            initial_step=self.initial_step, n_restarts=self.n_restarts, rng_seed=int(seed),
            epsilon_floor=self.epsilon,
        )

    def fit(self, X, y=None, supports=None):
        """Fit on ``X``; ``supports`` lists the admissible conditions of each sample."""
        self._fit(X, supports)
        return self

    def fit_transform(self, X, y=None, supports=None):
        return self._fit(X, supports).W.T.copy()

    def _fit(self, X, supports) -> FactorModel:
        Xc = _to_count_matrix(X)
        cfg = self._solver_config()
        sup = None
        if supports is not None:
            sup = check_supports(supports, Xc.n_columns, self.n_components)
        elif self.n_components is None:
            raise ValueError("n_components is required when no supports are given")
        model, report = fit(Xc, sup, cfg)
        self.model_ = model
        self.report_ = report
        self.components_ = model.A.T.copy()
        self.bias_ = model.b.copy()
        self.loadings_ = model.W.T.copy()
        self.reconstruction_err_ = report.final_objective
        self.n_features_in_ = Xc.n_features
        self._cfg = cfg
        return model

    def transform(self, X, supports=None):
        """Loadings of new samples with components and bias held fixed."""
        check_is_fitted(self)
        Xc = _to_count_matrix(X)
        if Xc.n_features != self.n_features_in_:
            raise ValueError(f"X has {Xc.n_features} features, but ConstrainedNMF was fitted "
                             f"with {self.n_features_in_}")
        sup = None
        if supports is not None:
            sup = check_supports(supports, Xc.n_columns, self.model_.n_components)
        return transform(Xc, self.model_, sup, self._cfg).T.copy()

    def inverse_transform(self, W):
        """Expected counts ``W @ components_ + bias_``."""
        check_is_fitted(self)
        W = check_array(W)
        return W @ self.components_ + self.bias_[None, :]

    def score(self, X, y=None, supports=None):
        """Negative I-divergence between ``X`` and its reconstruction (higher is better)."""
        Wt = self.transform(X, supports)
        Xc = _to_count_matrix(X)
        return -i_divergence(Xc, self.inverse_transform(Wt).T)
