"""Synthetic instances drawn from the grounded phenotype model.

Each column ``j`` has a set of active conditions ``C_j``; its expected counts
are ``sum_{k in C_j} w_kj a_k + b`` and the observed counts are Poisson.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .model import CountMatrix, FactorModel, SupportSets


@dataclass(frozen=True)
class LabelRule:
    """Binary outcome ``y ~ Bernoulli(sigmoid(scale * z + noise * e))``.

    ``z`` is the standardized score ``theta . w_j`` for a fixed standard
    normal ``theta`` and ``e`` is standard normal.
    """

    scale: float = 4.0
    noise: float = 0.5

    def __post_init__(self):
        if self.scale < 0 or self.noise < 0:
            raise ValueError("scale and noise must be non-negative")


@dataclass(frozen=True)
class GenConfig:
    d: int = 60
    N: int = 300
    K: int = 4
    lam: float = 40.0
    support_density: float = 0.4
    phenotype_support_size: int = 12
    overlap: float = 0.0
    bias_scale: float = 0.2
    label_rule: Optional[LabelRule] = None
    loading_low: float = 0.2

    def __post_init__(self):
        if isinstance(self.label_rule, dict):
            object.__setattr__(self, "label_rule", LabelRule(**self.label_rule))
        if min(self.d, self.N, self.K) < 1:
            raise ValueError("d, N and K must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.support_density <= 1:
            raise ValueError("support_density must lie in [0, 1]")
        if not 1 <= self.phenotype_support_size <= self.d:
            raise ValueError(f"phenotype_support_size must lie in [1, d={self.d}]")
        if not 0 <= self.overlap <= 1:
            raise ValueError("overlap must lie in [0, 1]")
        if self.bias_scale < 0:
            raise ValueError("bias_scale must be non-negative")
        if not 0 <= self.loading_low <= 1:
            raise ValueError("loading_low must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    A_true: np.ndarray
    W_true: np.ndarray
    b_true: np.ndarray
    supports_true: SupportSets
    X: CountMatrix
    labels: Optional[np.ndarray]
    theta: Optional[np.ndarray]
    rng_seed: int
    lam: float

    @property
    def model(self) -> FactorModel:
        return FactorModel(A=self.A_true, W=self.W_true, b=self.b_true, lam=self.lam)

    @property
    def mean(self) -> np.ndarray:
        return self.A_true @ self.W_true + self.b_true[:, None]


def phenotype_supports(cfg: GenConfig) -> list[np.ndarray]:
    """Feature index sets of the planted phenotypes.

    Consecutive supports are windows of length ``phenotype_support_size``
    shifted so that neighbours share a fraction ``overlap`` of their features.
    """
    s = cfg.phenotype_support_size
    shift = max(1, int(round(s * (1.0 - cfg.overlap)))) if cfg.overlap < 1 else 0
    return [(k * shift + np.arange(s)) % cfg.d for k in range(cfg.K)]


def sample_counts(mean, rng) -> np.ndarray:
    """Independent Poisson draws with the given (non-negative) means."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.size and mean.min() < 0:
        raise ValueError("Poisson means must be non-negative")
    return np.random.default_rng(rng).poisson(mean).astype(np.float64)


def generate(cfg: GenConfig, seed: int = 0) -> PlantedInstance:
    rng = np.random.default_rng(seed)
    d, N, K = cfg.d, cfg.N, cfg.K
    A = np.zeros((d, K))
    for k, idx in enumerate(phenotype_supports(cfg)):
        g = rng.gamma(1.0, size=idx.size)
        A[idx, k] = cfg.lam * g / g.sum()
    mask = rng.random((K, N)) < cfg.support_density
    W = np.where(mask, rng.uniform(cfg.loading_low, 1.0, size=(K, N)), 0.0)
    b = rng.uniform(0.0, 2.0 * cfg.bias_scale, size=d)
    M = A @ W + b[:, None]
    X = CountMatrix.from_dense(sample_counts(M, rng),
                               feature_names=[f"term_{i + 1:04d}" for i in range(d)],
                               column_ids=[f"col_{j + 1:06d}" for j in range(N)])
    labels = theta = None
    if cfg.label_rule is not None:
        theta = rng.standard_normal(K)
        score = theta @ W
        sd = score.std()
        z = (score - score.mean()) / (sd if sd > 0 else 1.0)
        logit = cfg.label_rule.scale * z + cfg.label_rule.noise * rng.standard_normal(N)
        labels = (rng.random(N) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    return PlantedInstance(A_true=A, W_true=W, b_true=b, supports_true=SupportSets.from_mask(mask),
                           X=X, labels=labels, theta=theta, rng_seed=seed, lam=cfg.lam)


@dataclass(frozen=True)
class FactorMatch:
    """Greedy column matching, stored in assignment order."""

    true_index: np.ndarray
    fit_index: np.ndarray
    cosine: np.ndarray

    @property
    def permutation(self) -> np.ndarray:
        """``permutation[t]`` is the fitted column matched to true column ``t``."""
        perm = np.empty_like(self.true_index)
        perm[self.true_index] = self.fit_index
        return perm

    @property
    def mean_cosine(self) -> float:
        return float(self.cosine.mean()) if self.cosine.size else 0.0


def cosine_matrix(A_fit, A_true) -> np.ndarray:
    """``C[t, f]`` is the cosine between true column ``t`` and fitted column ``f``; zero-norm columns give 0."""
    A_fit = np.asarray(A_fit, dtype=np.float64)
    A_true = np.asarray(A_true, dtype=np.float64)
    nf = np.linalg.norm(A_fit, axis=0)
    nt = np.linalg.norm(A_true, axis=0)
    C = A_true.T @ A_fit
    denom = np.outer(nt, nf)
    return np.divide(C, denom, out=np.zeros_like(C), where=denom > 0)


def match_factors(A_fit, A_true) -> FactorMatch:
    """Greedily pair columns by decreasing cosine similarity, without replacement."""
    A_fit = np.asarray(A_fit)
    A_true = np.asarray(A_true)
    if A_fit.shape != A_true.shape:
        raise ValueError(f"shape mismatch: {A_fit.shape} vs {A_true.shape}")
    C = cosine_matrix(A_fit, A_true)
    K = C.shape[0]
    free = C.copy()
    ti, fi, cs = [], [], []
    for _ in range(K):
        t, f = np.unravel_index(np.argmax(free), free.shape)
        ti.append(t)
        fi.append(f)
        cs.append(C[t, f])
        free[t, :] = -np.inf
        free[:, f] = -np.inf
    return FactorMatch(np.array(ti, dtype=np.int64), np.array(fi, dtype=np.int64), np.array(cs))
