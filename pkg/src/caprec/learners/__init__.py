"""Nuisance learners: logit, mlogit, gam, ranger, rangerlogit and sl."""

from .core import (
    DEFAULT_SL_LIBRARY,
    LEARNER_TAGS,
    CovariateEncoder,
    Hyper,
    LearnerKind,
    QModel,
    QTriple,
    SchemaError,
    blend_weight,
    child_seed,
    clamp_q,
    fit_binary,
    fit_nuisance,
    predict_q,
    predict_q_raw,
    stack_weights,
)
from .forest import Forest, fit_forest

__all__ = [
    "DEFAULT_SL_LIBRARY",
    "LEARNER_TAGS",
    "CovariateEncoder",
    "Forest",
    "Hyper",
    "LearnerKind",
    "QModel",
    "QTriple",
    "SchemaError",
    "blend_weight",
    "child_seed",
    "clamp_q",
    "fit_binary",
    "fit_forest",
    "fit_nuisance",
    "predict_q",
    "predict_q_raw",
    "stack_weights",
]
