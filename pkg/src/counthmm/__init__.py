"""Nonparametric hidden Markov models for bounded count time series.

State-dependent probability mass functions are estimated freely on
{0, ..., K} under a difference-based roughness penalty, with data-driven
smoothing-parameter selection by cross-validation, Viterbi decoding,
pseudo-residual diagnostics, and a simulation harness for comparing
estimators.
"""

from .model import (
    CountSeries,
    HmmParams,
    UnconstrainedParams,
    from_unconstrained,
    n_free_parameters,
    pack_free,
    simulate,
    softmax_rows,
    stationary_distribution,
    to_unconstrained,
    unpack_free,
)
from .likelihood import (
    LogLikelihoodValue,
    PenaltyConfig,
    difference_matrix,
    forward_backward,
    forward_loglik,
    gradient,
    penalized_loglik,
    penalty,
    value_and_gradient,
)
from .estimation import FitConfig, FitError, FitResult, canonicalize, fit, make_starts
from .smoothing import CvGrid, CvResult, FoldPlan, greedy_search, make_folds, oos_loglik
from .inference import (
    DecodeResult,
    PseudoResiduals,
    conditional_distributions,
    kld,
    misclassification_rate,
    pseudo_residuals,
    state_probabilities,
    transition_mae,
    viterbi,
)
from .io import ParseError, load_counts, load_model, save_counts, save_model
from .experiment import (
    ESTIMATORS,
    ExperimentResult,
    ExperimentSpec,
    RunRecord,
    fit_oracle_transitions,
    fit_poisson_hmm,
    load_experiment_spec,
    run_experiment,
    spec_from_dict,
    truncated_poisson_pmfs,
)

__version__ = "0.1.0"

__all__ = [
    "CountSeries",
    "CvGrid",
    "CvResult",
    "DecodeResult",
    "ESTIMATORS",
    "ExperimentResult",
    "ExperimentSpec",
    "FitConfig",
    "FitError",
    "FitResult",
    "FoldPlan",
    "HmmParams",
    "LogLikelihoodValue",
    "ParseError",
    "PenaltyConfig",
    "PseudoResiduals",
    "RunRecord",
    "UnconstrainedParams",
    "canonicalize",
    "conditional_distributions",
    "difference_matrix",
    "fit",
    "fit_oracle_transitions",
    "fit_poisson_hmm",
    "forward_backward",
    "forward_loglik",
    "from_unconstrained",
    "gradient",
    "greedy_search",
    "kld",
    "load_counts",
    "load_experiment_spec",
    "load_model",
    "make_folds",
    "make_starts",
    "misclassification_rate",
    "n_free_parameters",
    "oos_loglik",
    "pack_free",
    "penalized_loglik",
    "penalty",
    "pseudo_residuals",
    "run_experiment",
    "save_counts",
    "save_model",
    "simulate",
    "spec_from_dict",
    "truncated_poisson_pmfs",
    "softmax_rows",
    "state_probabilities",
    "stationary_distribution",
    "to_unconstrained",
    "transition_mae",
    "unpack_free",
    "value_and_gradient",
    "viterbi",
]
