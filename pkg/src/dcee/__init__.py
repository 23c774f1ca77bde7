"""Distal causal excursion effects for micro-randomized trials."""

__version__ = "0.1.0"

from .comparators import ComparatorFit, estimate_gee, estimate_wcls
from .data import CsvSchema, MrtDataset, ValidationReport, load_csv, validate, write_csv
from .errors import (
    DataError,
    DceeError,
    EmptyArmError,
    NumericalError,
    SingularMatrixError,
    SpecError,
    ValidationError,
)
from .estimand import EstimandSpec, Term, WeightSpec, build_features, build_weights
from .estimator import DceeFit, estimate_dcee, sandwich_variance, solve_beta, xi_estimate
from .nuisance import LearnerSpec, OutcomeModel, fit_outcome_model, make_folds
from .simulator import (
    OracleResult,
    PolicySpec,
    SimParams,
    closed_form_tau1_example4,
    compute_oracle_beta,
    compute_oracle_betas,
    default_paper_params,
    simulate_dataset,
    simulate_example4,
)

__all__ = [
    "ComparatorFit",
    "CsvSchema",
    "DataError",
    "DceeError",
    "DceeFit",
    "EmptyArmError",
    "EstimandSpec",
    "LearnerSpec",
    "MrtDataset",
    "NumericalError",
    "OracleResult",
    "OutcomeModel",
    "PolicySpec",
    "SimParams",
    "SingularMatrixError",
    "SpecError",
    "Term",
    "ValidationError",
    "ValidationReport",
    "WeightSpec",
    "build_features",
    "build_weights",
    "closed_form_tau1_example4",
    "compute_oracle_beta",
    "compute_oracle_betas",
    "default_paper_params",
    "estimate_dcee",
    "estimate_gee",
    "estimate_wcls",
    "fit_outcome_model",
    "load_csv",
    "make_folds",
    "sandwich_variance",
    "simulate_dataset",
    "simulate_example4",
    "solve_beta",
    "validate",
    "write_csv",
    "xi_estimate",
]
