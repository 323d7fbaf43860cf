"""Synthetic closed-population capture data with known truth.

Individuals carry ``l`` covariates drawn independently from Uniform(0, 6)
and, optionally, a three-level categorical ``catcov``. List k captures an
individual with probability

    pi_k(x) = expit(ep + sum_j a_kj x_j + b_kj sin(x_j) + c_kj (x_j/3 - 1)^2
                    + offset[catcov])

independently across lists given the covariates, so every pair of lists is
conditionally independent. Only individuals captured at least once are
returned. ``data_xstar`` carries the same rows with covariates distorted by
x -> exp(x/3) - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .dataset import Dataset
from .learners import QTriple

CAT_LEVELS = ("a", "b", "c")

# Rows are lists 1..3, columns covariate slots; covariate j uses slot j mod 3.
_A = np.array([[0.32, 0.25, 0.30],
               [0.17, 0.30, 0.25],
               [0.25, 0.30, 0.30]])
_B = np.array([[0.60, -0.40, 0.30],
               [-0.50, 0.50, 0.40],
               [0.40, 0.30, -0.50]])
_C = np.array([[0.50, 0.80, 0.30],
               [1.00, -0.40, 0.60],
               [-0.30, 0.70, 0.50]])


def default_coefficients(K: int, l: int):
    cols = np.arange(l) % 3
    return _A[:K][:, cols], _B[:K][:, cols], _C[:K][:, cols]


def _as_table(value, K, l, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (K, l):
        raise ValueError(f"{name} must have shape ({K}, {l}), got {arr.shape}")
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclass(frozen=True)
class DgpSpec:
    n_true: int = 5000
    K: int = 2
    l: int = 1
    categorical: bool = False
    ep: float = 0.0
    coef_a: tuple | None = None
    coef_b: tuple | None = None
    coef_c: tuple | None = None
    cat_offsets: tuple[float, float, float] = (0.0, 0.3, -0.3)
    seed: int = 0

    def __post_init__(self):
        if self.K not in (2, 3):
            raise ValueError(f"K must be 2 or 3, got {self.K}")
        if self.l < 1:
            raise ValueError(f"l must be at least 1, got {self.l}")
        if self.n_true < 1:
            raise ValueError(f"n_true must be positive, got {self.n_true}")
        a, b, c = default_coefficients(self.K, self.l)
        for name, default in (("coef_a", a), ("coef_b", b), ("coef_c", c)):
            value = getattr(self, name)
            object.__setattr__(self, name, _as_table(default if value is None else value,
                                                     self.K, self.l, name))
        if len(self.cat_offsets) != 3:
            raise ValueError("cat_offsets needs one offset per level a, b, c")

    @classmethod
    def linear(cls, slopes, **kw) -> "DgpSpec":
        """Logistic-linear capture probabilities: ``slopes`` is K x l, no sin/square terms."""
        slopes = np.asarray(slopes, dtype=float)
        zeros = np.zeros_like(slopes)
        return cls(K=slopes.shape[0], l=slopes.shape[1], coef_a=slopes,
                   coef_b=zeros, coef_c=zeros, **kw)

    def with_(self, **changes) -> "DgpSpec":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return DgpSpec(**fields)

    def to_config(self) -> str:
        lines = [f"n_true={self.n_true}", f"K={self.K}", f"l={self.l}",
                 f"categorical={str(self.categorical).lower()}", f"ep={self.ep!r}",
                 f"seed={self.seed}",
                 "cat_offsets=" + ",".join(repr(v) for v in self.cat_offsets)]
        for name in ("coef_a", "coef_b", "coef_c"):
            for k, row in enumerate(getattr(self, name), start=1):
                lines.append(f"{name}.{k}=" + ",".join(repr(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "DgpSpec":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            kv[key] = value
        K, l = int(kv.pop("K", 2)), int(kv.pop("l", 1))
        args = dict(K=K, l=l, n_true=int(kv.pop("n_true", 5000)),
                    ep=float(kv.pop("ep", 0.0)), seed=int(kv.pop("seed", 0)),
                    categorical=kv.pop("categorical", "false").lower() in ("1", "true", "yes"))
        if "cat_offsets" in kv:
            args["cat_offsets"] = tuple(float(v) for v in kv.pop("cat_offsets").split(","))
        for name in ("coef_a", "coef_b", "coef_c"):
            rows = [kv.pop(f"{name}.{k}", None) for k in range(1, K + 1)]
            if any(r is not None for r in rows):
                if any(r is None for r in rows):
                    raise ValueError(f"{name} needs one line per list")
                args[name] = [[float(v) for v in r.split(",")] for r in rows]
        if kv:
            raise ValueError(f"unknown DGP key {next(iter(kv))!r}")
        return cls(**args)


def _linear_predictor(dgp: DgpSpec, x, levels=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dgp.l:
        raise ValueError(f"covariate dimension {x.shape[1]} does not match l={dgp.l}")
    a, b, c = (np.asarray(t) for t in (dgp.coef_a, dgp.coef_b, dgp.coef_c))
    eta = dgp.ep + x @ a.T + np.sin(x) @ b.T + ((x / 3 - 1) ** 2) @ c.T
    if dgp.categorical and levels is not None:
        idx = np.array([CAT_LEVELS.index(str(v)) for v in np.atleast_1d(levels)])
        eta = eta + np.asarray(dgp.cat_offsets)[idx][:, None]
    return eta


def capture_probs(dgp: DgpSpec, x, levels=None) -> np.ndarray:
    """(n, K) matrix of per-list capture probabilities."""
    return expit(_linear_predictor(dgp, x, levels))


def true_capture_prob(dgp: DgpSpec, list_index: int, x, level=None):
    """Probability of capture on list ``list_index`` (1-based) at covariates ``x``."""
    if not 1 <= list_index <= dgp.K:
        raise ValueError(f"list index {list_index} out of range 1..{dgp.K}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    levels = None if level is None else np.atleast_1d(level)
    p = capture_probs(dgp, x.reshape(1, -1) if single else x, levels)[:, list_index - 1]
    return float(p[0]) if single else p


def _frame_covariates(dgp, frame):
    x = frame[[f"x{j}" for j in range(1, dgp.l + 1)]].to_numpy(dtype=float)
    levels = frame["catcov"].to_numpy() if dgp.categorical else None
    return x, levels


def true_q(dgp: DgpSpec, data: Dataset, pair=(1, 2)) -> QTriple:
    """Observed-data q-probabilities at the rows of ``data`` (original covariates)."""
    x, levels = _frame_covariates(dgp, data.covariates)
    P = capture_probs(dgp, x, levels)
    g = 1 - np.prod(1 - P, axis=1)
    pj, pk = P[:, pair[0] - 1], P[:, pair[1] - 1]
    return QTriple(pj / g, pk / g, pj * pk / g)


def xstar(x):
    return np.exp(np.asarray(x) / 3) - 1


@dataclass(frozen=True)
class SimOutput:
    psi0: float
    data: Dataset
    data_xstar: Dataset
    dgp: DgpSpec

    def pi(self, list_index: int, x, level=None):
        return true_capture_prob(self.dgp, list_index, x, level)


def simulate(spec: DgpSpec) -> SimOutput:
    rng = np.random.default_rng(spec.seed)
    n, K, l = spec.n_true, spec.K, spec.l
    x = rng.uniform(0.0, 6.0, size=(n, l))
    levels = np.array(CAT_LEVELS)[rng.integers(0, 3, size=n)] if spec.categorical else None
    P = capture_probs(spec, x, levels)
    Y = (rng.random((n, K)) < P).astype(np.int8)
    seen = Y.any(axis=1)
    lists = tuple(f"y{k}" for k in range(1, K + 1))
    names = [f"x{j}" for j in range(1, l + 1)]

    def frame(values):
        cov = pd.DataFrame(values[seen], columns=names)
        if levels is not None:
            cov["catcov"] = levels[seen]
        return cov

    num = tuple(names)
    cat = ("catcov",) if levels is not None else ()
    data = Dataset(Y[seen], frame(x), lists, num, cat)
    data_x = Dataset(Y[seen], frame(xstar(x)), lists, num, cat)
    return SimOutput(float(seen.mean()), data, data_x, spec)


def population_psi(dgp: DgpSpec, n_eval: int = 200_000, seed: int | None = None) -> float:
    """Monte Carlo average of 1 - prod_k (1 - pi_k(X)) over fresh covariates."""
    rng = np.random.default_rng(dgp.seed if seed is None else seed)
    x = rng.uniform(0.0, 6.0, size=(n_eval, dgp.l))
    levels = np.array(CAT_LEVELS)[rng.integers(0, 3, size=n_eval)] if dgp.categorical else None
    return float(np.mean(1 - np.prod(1 - capture_probs(dgp, x, levels), axis=1)))


def calibrate_ep(dgp_template: DgpSpec, target_psi: float, tol: float = 0.01,
                 n_eval: int = 200_000, max_steps: int = 60, full_output: bool = False):
    """Bisection on the intercept shift ``ep`` until psi is within ``tol`` of target.

    The covariate sample is fixed across evaluations, so psi(ep) is a smooth
    increasing function. With ``full_output`` returns ``(ep, steps)``.
    """
    if not 0 < target_psi < 1:
        raise ValueError(f"target_psi must lie in (0, 1), got {target_psi}")
    rng = np.random.default_rng(dgp_template.seed)
    x = rng.uniform(0.0, 6.0, size=(n_eval, dgp_template.l))
    levels = (np.array(CAT_LEVELS)[rng.integers(0, 3, size=n_eval)]
              if dgp_template.categorical else None)
    base = _linear_predictor(dgp_template.with_(ep=0.0), x, levels)

    def psi(ep):
        return float(np.mean(1 - np.prod(1 - expit(base + ep), axis=1)))

    lo, hi = -10.0, 10.0
    while psi(lo) > target_psi:
        lo *= 2
        if lo < -1e3:
            raise RuntimeError("could not bracket target psi from below")
    while psi(hi) < target_psi:
        hi *= 2
        if hi > 1e3:
            raise RuntimeError("could not bracket target psi from above")
    for step in range(1, max_steps + 1):
        mid = 0.5 * (lo + hi)
        value = psi(mid)
        if abs(value - target_psi) <= tol:
            return (mid, step) if full_output else mid
        if value < target_psi:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not reach tol={tol} in {max_steps} steps")
