"""Nuisance models for the observed-data probabilities of a list pair.

For lists ``(j, k)`` the three targets are ``Y_j``, ``Y_k`` and
``Y_j * Y_k`` among observed individuals; their conditional means given the
covariates are ``q1``, ``q2`` and ``q12``. Every learner kind except
``mlogit`` fits the three targets independently. ``mlogit`` fits one
softmax model over the capture profiles of the pair, which makes
``q12 <= min(q1, q2)`` hold by construction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import expit

from ..dataset import Dataset
from .forest import Forest, fit_forest
from .logistic import irls_logistic, multinomial_proba, newton_multinomial
from .spline import natural_spline_basis, quantile_knots

log = logging.getLogger(__name__)

LEARNER_TAGS = ("logit", "mlogit", "gam", "ranger", "rangerlogit", "sl")
DEFAULT_SL_LIBRARY = ("logit", "gam", "ranger")
_LOSS_EPS = 1e-6


class SchemaError(ValueError):
    """Covariates to score do not match the training covariates."""


class QTriple(NamedTuple):
    """Observed-data probabilities; fields may be scalars or row-aligned arrays."""

    q1: np.ndarray
    q2: np.ndarray
    q12: np.ndarray


@dataclass(frozen=True)
class LearnerKind:
    tag: str
    sl_library: tuple[str, ...] = ()

    def __post_init__(self):
        if self.tag not in LEARNER_TAGS:
            raise ValueError(
                f"unknown learner {self.tag!r}; choose from {', '.join(LEARNER_TAGS)}"
            )
        lib = tuple(self.sl_library)
        if self.tag == "sl":
            lib = lib or DEFAULT_SL_LIBRARY
            bad = [t for t in lib if t not in LEARNER_TAGS or t == "sl"]
            if bad:
                raise ValueError(f"invalid sl library member {bad[0]!r}")
        elif lib:
            raise ValueError("sl_library is only meaningful for the 'sl' learner")
        object.__setattr__(self, "sl_library", lib)

    @property
    def name(self) -> str:
        return self.tag

    @classmethod
    def parse(cls, text: str, sl_library=()) -> "LearnerKind":
        return cls(text.strip(), tuple(sl_library) if text.strip() == "sl" else ())


@dataclass(frozen=True)
class Hyper:
    """Learner settings. Defaults are the package defaults."""

    max_iter: int = 50
    tol: float = 1e-8
    ridge: float = 1e-10
    spline_df: int = 4
    n_trees: int = 200
    min_leaf: int = 5
    mtry: int | None = None
    cv_folds: int = 5
    blend_grid: tuple[float, ...] = tuple(np.round(np.linspace(0, 1, 11), 10))
    blend_cv: str = "oob"
    sl_iters: int = 200
    sl_step: float = 0.5

    def __post_init__(self):
        if self.blend_cv not in ("oob", "kfold"):
            raise ValueError("blend_cv must be 'oob' or 'kfold'")


def child_seed(seed: int, *keys: int) -> int:
    """Derive an independent integer seed from ``seed`` and a key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# -- covariate encoding ------------------------------------------------------

@dataclass(frozen=True)
class CovariateEncoder:
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]

    @classmethod
    def fit(cls, data: Dataset) -> "CovariateEncoder":
        cov = data.covariates
        levels = tuple(tuple(sorted(pd.unique(cov[c].astype(str)))) for c in data.categorical_names)
        return cls(tuple(data.numeric_names), tuple(data.categorical_names), levels)

    def transform(self, frame: pd.DataFrame) -> tuple[np.ndarray, np.ndarray, int]:
        """Return (numeric block, one-hot block, count of unseen-level cells)."""
        expected = set(self.numeric) | set(self.categorical)
        if set(frame.columns) != expected:
            raise SchemaError(
                f"covariates {sorted(frame.columns)} do not match training {sorted(expected)}"
            )
        n = len(frame)
        try:
            xnum = frame[list(self.numeric)].to_numpy(dtype=float).reshape(n, len(self.numeric))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"numeric covariate could not be read: {exc}") from exc
        blocks = []
        unseen = 0
        for name, lev in zip(self.categorical, self.levels):
            vals = frame[name].astype(str).to_numpy()
            known = np.isin(vals, lev)
            unseen += int((~known).sum())
            # first level is the reference; unseen levels map to it
            blocks.append(np.column_stack([vals == lv for lv in lev[1:]]).astype(float)
                          if len(lev) > 1 else np.zeros((n, 0)))
        xcat = np.hstack(blocks) if blocks else np.zeros((n, 0))
        return xnum, xcat, unseen


def _standardize(x):
    center = x.mean(axis=0) if len(x) else np.zeros(x.shape[1])
    scale = x.std(axis=0) if len(x) else np.ones(x.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


# -- binary learners ---------------------------------------------------------

@dataclass(frozen=True)
class _Constant:
    p: float

    def predict(self, xnum, xcat):
        return np.full(xnum.shape[0], self.p)


@dataclass(frozen=True)
class _Linear:
    """Logistic model on a (possibly spline-expanded) standardized design."""

    knots: tuple[np.ndarray, ...] | None
    center: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    converged: bool

    @staticmethod
    def expand(xnum, knots):
        if knots is None:
            return xnum
        cols = [natural_spline_basis(xnum[:, i], kn) for i, kn in enumerate(knots)]
        return np.hstack(cols) if cols else xnum

    @staticmethod
    def design(z, xcat, center, scale):
        return np.hstack([np.ones((z.shape[0], 1)), (z - center) / scale, xcat])

    @classmethod
    def fit(cls, xnum, xcat, y, hyper, spline_df=None):
        knots = None
        if spline_df is not None and spline_df >= 3:
            knots = tuple(quantile_knots(xnum[:, i], spline_df) for i in range(xnum.shape[1]))
        z = cls.expand(xnum, knots)
        center, scale = _standardize(z)
        fit = irls_logistic(cls.design(z, xcat, center, scale), y,
                            max_iter=hyper.max_iter, tol=hyper.tol, ridge=hyper.ridge)
        return cls(knots, center, scale, fit.coef, fit.converged)

    def predict(self, xnum, xcat):
        z = self.expand(xnum, self.knots)
        return expit(self.design(z, xcat, self.center, self.scale) @ self.coef)


@dataclass(frozen=True)
class _Ranger:
    forest: Forest

    def predict(self, xnum, xcat):
        return self.forest.predict(np.hstack([xnum, xcat]))


@dataclass(frozen=True)
class _Blend:
    """Convex combination of member predictions."""

    members: tuple
    weights: np.ndarray

    def predict(self, xnum, xcat):
        return sum(w * m.predict(xnum, xcat) for w, m in zip(self.weights, self.members))


def _log_loss(y, p):
    p = np.clip(p, _LOSS_EPS, 1 - _LOSS_EPS)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))


def _kfold_labels(n, nfolds, seed):
    labels = np.empty(n, dtype=int)
    labels[np.random.default_rng(seed).permutation(n)] = np.arange(n) % nfolds
    return labels


def _cv_predict(tag, xnum, xcat, y, hyper, seed):
    """Out-of-fold predictions of ``tag`` over ``cv_folds`` folds."""
    nfolds = min(hyper.cv_folds, len(y))
    labels = _kfold_labels(len(y), nfolds, child_seed(seed, 99))
    out = np.empty(len(y))
    for f in range(nfolds):
        tr, te = labels != f, labels == f
        model, _ = fit_binary(tag, xnum[tr], xcat[tr], y[tr], hyper, child_seed(seed, 100, f))
        out[te] = model.predict(xnum[te], xcat[te])
    return out


def blend_weight(y, p_forest, p_logit, grid) -> float:
    """Forest weight on ``grid`` minimizing held-out log loss.

    Ties go to the smaller forest weight, i.e. toward the logit.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    losses = [_log_loss(y, w * p_forest + (1 - w) * p_logit) for w in grid]
    return float(grid[int(np.argmin(losses))])


def stack_weights(y, Z, iters: int = 200, step: float = 0.5) -> np.ndarray:
    """Convex weights for the columns of ``Z`` minimizing log loss.

    Exponentiated-gradient (multiplicative weights) descent started from the
    uniform mixture; each step is scaled by the largest gradient entry.
    """
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    w = np.full(Z.shape[1], 1.0 / Z.shape[1])
    for _ in range(iters):
        p = np.clip(Z @ w, _LOSS_EPS, 1 - _LOSS_EPS)
        grad = -(Z * (y / p - (1 - y) / (1 - p))[:, None]).mean(axis=0)
        scale = max(1.0, np.max(np.abs(grad)))
        w = w * np.exp(-step * grad / scale)
        w /= w.sum()
    return w


def fit_binary(tag, xnum, xcat, y, hyper: Hyper, seed: int, library=()):
    """Fit one binary target. Returns (predictor, flags)."""
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training set")
    if np.all(y == y[0]):
        return _Constant(float(y.mean())), ("constant target",)
    flags: list[str] = []
    if tag in ("logit", "mlogit"):
        model = _Linear.fit(xnum, xcat, y, hyper)
    elif tag == "gam":
        model = _Linear.fit(xnum, xcat, y, hyper, spline_df=hyper.spline_df)
    elif tag == "ranger":
        X = np.hstack([xnum, xcat])
        if X.shape[1] == 0:
            return _Constant(float(y.mean())), ("no covariates",)
        model = _Ranger(fit_forest(X, y, n_trees=hyper.n_trees, min_leaf=hyper.min_leaf,
                                   mtry=hyper.mtry, seed=child_seed(seed, 1)))
    elif tag == "rangerlogit":
        rf, f1 = fit_binary("ranger", xnum, xcat, y, hyper, seed)
        lg, f2 = fit_binary("logit", xnum, xcat, y, hyper, seed)
        flags += f1 + f2
        if isinstance(rf, _Ranger) and hyper.blend_cv == "oob":
            p_rf = rf.forest.oob
        else:
            p_rf = _cv_predict("ranger", xnum, xcat, y, hyper, child_seed(seed, 2))
        p_lg = _cv_predict("logit", xnum, xcat, y, hyper, child_seed(seed, 3))
        w = blend_weight(y, p_rf, p_lg, hyper.blend_grid)
        model = _Blend((rf, lg), np.array([w, 1 - w]))
    elif tag == "sl":
        lib = tuple(library) or DEFAULT_SL_LIBRARY
        members, cols = [], []
        for i, member in enumerate(lib):
            m, f = fit_binary(member, xnum, xcat, y, hyper, child_seed(seed, 10, i))
            members.append(m)
            flags += f
            cols.append(_cv_predict(member, xnum, xcat, y, hyper, child_seed(seed, 20, i)))
        w = stack_weights(y, np.column_stack(cols), hyper.sl_iters, hyper.sl_step)
        model = _Blend(tuple(members), w)
    else:
        raise ValueError(f"unknown learner {tag!r}")
    if isinstance(model, _Linear) and not model.converged:
        flags.append("IRLS did not converge")
    return model, tuple(flags)


# -- multinomial profile model -----------------------------------------------

# capture profiles of (Y_j, Y_k): class 0 = (1,1), 1 = (1,0), 2 = (0,1), 3 = (0,0)
_PROFILE_CODE = {(1, 1): 0, (1, 0): 1, (0, 1): 2, (0, 0): 3}


@dataclass(frozen=True)
class _Profile:
    classes: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    coef: np.ndarray | None
    converged: bool

    def proba(self, xnum, xcat):
        """Probabilities over all four profiles (absent classes get 0)."""
        out = np.zeros((xnum.shape[0], 4))
        if self.coef is None:
            out[:, self.classes[0]] = 1.0
            return out
        X = _Linear.design(xnum, xcat, self.center, self.scale)
        out[:, self.classes] = multinomial_proba(X, self.coef)
        return out


def _fit_profile(xnum, xcat, codes, hyper):
    classes = np.unique(codes)
    center, scale = _standardize(xnum)
    if classes.size == 1:
        return _Profile(classes, center, scale, None, True)
    labels = np.searchsorted(classes, codes)
    X = _Linear.design(xnum, xcat, center, scale)
    fit = newton_multinomial(X, labels, classes.size, max_iter=hyper.max_iter,
                             tol=hyper.tol, ridge=hyper.ridge)
    return _Profile(classes, center, scale, fit.coef, fit.converged)


# -- public surface ------------------------------------------------------------

@dataclass(frozen=True)
class QModel:
    kind: LearnerKind
    pair: tuple[int, int]
    encoder: CovariateEncoder
    targets: tuple | None = None
    profile: _Profile | None = None
    train_folds: tuple[int, ...] = ()
    flags: tuple[str, ...] = field(default=())

    @property
    def converged(self) -> bool:
        return not any("converge" in f for f in self.flags)


def _check_pair(pair, K):
    j, k = pair
    if j == k or not (1 <= j <= K and 1 <= k <= K):
        raise ValueError(f"invalid list pair {pair} for K={K}")


def fit_nuisance(kind: LearnerKind | str, train: Dataset, pair=(1, 2),
                 hyper: Hyper | None = None, seed: int = 0,
                 train_folds=()) -> QModel:
    """Fit the q1/q2/q12 model of ``kind`` for the 1-based list ``pair``.

    Deterministic given (train, hyper, seed). A constant binary target
    falls back to its empirical proportion and is flagged; IRLS that hits
    the iteration cap keeps its last iterate and is flagged.
    """
    if isinstance(kind, str):
        kind = LearnerKind.parse(kind)
    hyper = hyper or Hyper()
    if train.N == 0:
        raise ValueError("empty training set")
    _check_pair(pair, train.K)
    j, k = pair
    enc = CovariateEncoder.fit(train)
    xnum, xcat, _ = enc.transform(train.covariates)
    yj = train.captures[:, j - 1].astype(float)
    yk = train.captures[:, k - 1].astype(float)
    if kind.tag == "mlogit":
        codes = np.array([_PROFILE_CODE[(a, b)] for a, b in zip(yj.astype(int), yk.astype(int))])
        prof = _fit_profile(xnum, xcat, codes, hyper)
        flags = () if prof.converged else ("Newton did not converge",)
        if prof.classes.size == 1:
            flags += ("single capture profile",)
        return QModel(kind, tuple(pair), enc, profile=prof,
                      train_folds=tuple(train_folds), flags=flags)
    targets, flags = [], []
    for t, y in enumerate((yj, yk, yj * yk)):
        model, f = fit_binary(kind.tag, xnum, xcat, y, hyper, child_seed(seed, t),
                              kind.sl_library)
        targets.append(model)
        flags += [f"{('q1', 'q2', 'q12')[t]}: {msg}" for msg in f]
    return QModel(kind, tuple(pair), enc, targets=tuple(targets),
                  train_folds=tuple(train_folds), flags=tuple(flags))


def predict_q_raw(model: QModel, covariates: pd.DataFrame) -> QTriple:
    """Predictions before truncation."""
    xnum, xcat, unseen = model.encoder.transform(covariates)
    if unseen:
        warnings.warn(f"{unseen} categorical cells had levels unseen in training; "
                      "mapped to the reference level", stacklevel=2)
    if model.profile is not None:
        P = model.profile.proba(xnum, xcat)
        return QTriple(P[:, 0] + P[:, 1], P[:, 0] + P[:, 2], P[:, 0])
    q1, q2, q12 = (m.predict(xnum, xcat) for m in model.targets)
    return QTriple(q1, q2, q12)


def clamp_q(q: QTriple, margin: float) -> QTriple:
    """Clamp every component into [margin, 1]."""
    return QTriple(*(np.clip(np.asarray(v, dtype=float), margin, 1.0) for v in q))


def predict_q(model: QModel, covariates: pd.DataFrame, margin: float = 0.005) -> QTriple:
    if not 0 < margin < 0.5:
        raise ValueError(f"margin must lie in (0, 0.5), got {margin}")
    return clamp_q(predict_q_raw(model, covariates), margin)
