"""Bayesian synthesizers and attribute disclosure risk estimation."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AttriskError,
    DomainError,
    FitError,
    NumericalError,
    ParseError,
    PlanError,
    PlanOrderError,
    PlanTypeError,
    SchemaError,
    SingularityError,
    SizeError,
)
from .schema import (
    ColumnSchema,
    Dataset,
    ModelSpec,
    SynthesisPlan,
    ValidatedPlan,
    load_dataset,
    read_plan,
    validate_plan,
    write_dataset,
)
from .synthesizers import (
    DrawsMatrix,
    DrawsSet,
    NIGPrior,
    fit_glm_metropolis,
    fit_linear_conjugate,
    fit_plan,
    simulate_synthetic,
)
from .density import Theta, log_f, log_f_star, log_g
from .risk import GuessGrid, RiskReport, RiskResult, build_guess_grid, evaluate_all, evaluate_record, summarize
from .oracle import brute_force_probability

__all__ = [name for name in dir() if not name.startswith("_")]
