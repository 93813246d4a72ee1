"""Grounded non-negative matrix factorization with support and simplex constraints."""

from .datagen import GenConfig, LabelRule, PlantedInstance, generate, match_factors
from .estimator import ConstrainedNMF
from .evaluation import lambda_sweep, predict_eval, sparsity, top_terms, weight_inspection
from .model import (
    CountMatrix,
    FactorModel,
    FeasibilityReport,
    SolveReport,
    SupportSets,
    check_feasibility,
    reconstruct,
)
from .objective import DivergenceConfig, gradients, i_divergence, poisson_loglik
from .projections import project_box_support, project_nonneg, project_scaled_simplex
from .solver import SolverConfig, SolverError, a_b_step, fit, init_model, transform, w_step

__version__ = "0.1.0"

__all__ = [
    "ConstrainedNMF",
    "CountMatrix",
    "DivergenceConfig",
    "FactorModel",
    "FeasibilityReport",
    "GenConfig",
    "LabelRule",
    "PlantedInstance",
    "SolveReport",
    "SolverConfig",
    "SolverError",
    "SupportSets",
    "a_b_step",
    "check_feasibility",
    "fit",
    "generate",
    "gradients",
    "i_divergence",
    "init_model",
    "lambda_sweep",
    "match_factors",
    "poisson_loglik",
    "predict_eval",
    "project_box_support",
    "project_nonneg",
    "project_scaled_simplex",
    "reconstruct",
    "sparsity",
    "top_terms",
    "transform",
    "w_step",
    "weight_inspection",
]
