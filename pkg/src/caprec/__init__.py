"""Doubly robust capture-recapture estimation of closed population size."""

from .crossfit import (
    FoldAssignment,
    NuisanceEstimates,
    assign_folds,
    crossfit_nuisances,
    read_idfold,
    read_nuisances,
)
from .dataset import DataFormatError, Dataset, check_format, load_dataset, reformat
from .estimator import (
    EstimationError,
    ResultTable,
    confidence_interval,
    estimate_psi_dr,
    estimate_psi_pi,
    gamma,
    phi,
    popsize,
    popsize_cond,
    read_results,
    remainder_r2,
    variance_n,
)
from .learners import Hyper, LearnerKind, QTriple, fit_nuisance, predict_q
from .simulator import DgpSpec, calibrate_ep, simulate, true_q

__version__ = "0.1.0"

__all__ = [
    "DataFormatError", "Dataset", "DgpSpec", "EstimationError", "FoldAssignment",
    "Hyper", "LearnerKind", "NuisanceEstimates", "QTriple", "ResultTable",
    "assign_folds", "calibrate_ep", "check_format", "confidence_interval",
    "crossfit_nuisances", "estimate_psi_dr", "estimate_psi_pi", "fit_nuisance",
    "gamma", "load_dataset", "phi", "popsize", "popsize_cond", "predict_q",
    "read_idfold", "read_nuisances", "read_results", "reformat", "remainder_r2",
    "simulate", "true_q", "variance_n",
]
