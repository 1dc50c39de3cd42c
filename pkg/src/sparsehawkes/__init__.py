"""Estimation and sparsity testing for marked multivariate Hawkes
processes observed through many short independent replicates.

The workflow: describe the model (`make_spec`, `make_theta`), simulate or
load replicated event data, aggregate it, fit by maximum likelihood with
adjacency cells allowed to sit exactly on the zero boundary, and compare
nested fits with a likelihood-ratio test whose null distribution is a
chi-bar-squared mixture.
"""

from .model import (
    ModelSpec,
    ParamVector,
    UnstableModel,
    make_spec,
    make_theta,
    spec_from_toml,
    spec_to_toml,
    validate,
)
from .simulate import (
    Dataset,
    EventSequence,
    aggregate,
    load_jsonl,
    save_jsonl,
    simulate_dataset,
    simulate_replicate,
)
from .likelihood import (
    LikelihoodContext,
    NonFiniteIntensity,
    build_context,
    empirical_information,
    log_likelihood,
    score,
)
from .volterra import asymptotic_information, information_report, mean_count, solve_h
from .chibar import (
    ChiBarMixture,
    mc_weights,
    mixture_quantile,
    mixture_sf,
    project_onto_orthant,
    weights_closed_form,
    weights_closed_form_p2,
)
from .estimate import (
    FitOptions,
    FitResult,
    InfeasiblePattern,
    NonConvergence,
    fit,
    fit_strategy_averaged,
    fit_strategy_pooled,
)
from .test import (
    CalibrationReport,
    NestingViolation,
    TestResult,
    bonferroni_combine,
    calibrate_level,
    lrs,
    power_curve,
    test_conditional_susko,
    test_known_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ModelSpec", "ParamVector", "UnstableModel", "make_spec", "make_theta",
    "spec_from_toml", "spec_to_toml", "validate",
    "Dataset", "EventSequence", "aggregate", "load_jsonl", "save_jsonl",
    "simulate_dataset", "simulate_replicate",
    "LikelihoodContext", "NonFiniteIntensity", "build_context",
    "empirical_information", "log_likelihood", "score",
    "asymptotic_information", "information_report", "mean_count", "solve_h",
    "ChiBarMixture", "mc_weights", "mixture_quantile", "mixture_sf",
    "project_onto_orthant", "weights_closed_form", "weights_closed_form_p2",
    "FitOptions", "FitResult", "InfeasiblePattern", "NonConvergence",
    "fit", "fit_strategy_averaged", "fit_strategy_pooled",
    "CalibrationReport", "NestingViolation", "TestResult",
    "bonferroni_combine", "calibrate_level", "lrs", "power_curve",
    "test_conditional_susko", "test_known_weights",
    "__version__",
]
