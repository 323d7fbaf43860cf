"""Monte Carlo study: bias, RMSE and coverage of the population size estimates.

Every replication simulates a fresh population, then estimates n on the
original covariates (``CorX``), on the distorted covariates (``MisX``), or
with the true nuisance functions injected (``Oracle``).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .crossfit import NuisanceEstimates
from .estimator import METHODS, popsize
from .learners import DEFAULT_SL_LIBRARY, LearnerKind, child_seed
from .plotting import plot_metrics
from .simulator import DgpSpec, calibrate_ep, simulate, true_q

log = logging.getLogger(__name__)

ARMS = ("CorX", "MisX", "Oracle")
METRIC_COLUMNS = ["arm", "learner", "method", "mean_bias", "mean_abs_bias",
                  "rmse", "coverage", "reps_used"]
MAX_FAILURE_RATE = 0.2


class BenchmarkAborted(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    n_true: int = 5000
    reps: int = 100
    dgp: DgpSpec = field(default_factory=DgpSpec)
    learners: tuple[LearnerKind, ...] = (LearnerKind("rangerlogit"),)
    methods: tuple[str, ...] = ("DR", "PI")
    arms: tuple[str, ...] = ("CorX", "MisX")
    nfolds: int = 5
    margin: float = 0.005
    alpha: float = 0.05
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.arms:
            raise ConfigError("at least one arm is required")
        bad = [a for a in self.arms if a not in ARMS]
        if bad:
            raise ConfigError(f"unknown arm {bad[0]!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method {bad[0]!r}")


@dataclass(frozen=True)
class RepResult:
    rep: int
    arm: str
    learner: str
    method: str
    n: float
    cin_l: float
    cin_u: float
    failed: bool = False


@dataclass(frozen=True)
class MetricsRow:
    arm: str
    learner: str
    method: str
    mean_bias: float
    mean_abs_bias: float
    rmse: float
    coverage: float
    reps_used: int


def rep_seed(seed: int, rep: int) -> int:
    """Seed of replication ``rep``; depends only on (seed, rep)."""
    return child_seed(seed, 7, rep)


def run_replication(cfg: BenchConfig, rep: int) -> list[RepResult]:
    s = rep_seed(cfg.seed, rep)
    sim = simulate(cfg.dgp.with_(n_true=cfg.n_true, seed=s))
    out = []
    for arm in cfg.arms:
        learners = ["truth"] if arm == "Oracle" else [k.name for k in cfg.learners]
        try:
            if arm == "Oracle":
                nuis = NuisanceEstimates((1, 2), {"truth": true_q(cfg.dgp, sim.data)},
                                         None, ("truth",))
                table = popsize(sim.data, getnuis=nuis, methods=cfg.methods,
                                margin=cfg.margin, alpha=cfg.alpha)
            else:
                data = sim.data if arm == "CorX" else sim.data_xstar
                table = popsize(data, cfg.learners, nfolds=cfg.nfolds, margin=cfg.margin,
                                alpha=cfg.alpha, pair=(1, 2), methods=cfg.methods, seed=s)
        except Exception as exc:  # a failed rep is recorded, not fatal
            log.warning("rep %d arm %s failed: %s", rep, arm, exc)
            out += [RepResult(rep, arm, lr, m, math.nan, math.nan, math.nan, True)
                    for lr in learners for m in cfg.methods]
            continue
        for r in table.rows:
            out.append(RepResult(rep, arm, r.model, r.method, r.n, r.cin_l, r.cin_u,
                                 r.degenerate))
    return out


def aggregate(results: list[RepResult], n_true: int, reps: int) -> list[MetricsRow]:
    groups: dict[tuple, list[RepResult]] = {}
    for r in sorted(results, key=lambda r: r.rep):
        groups.setdefault((r.arm, r.learner, r.method), []).append(r)
    rows = []
    for (arm, learner, method), rs in groups.items():
        ok = [r for r in rs if not r.failed]
        failed = len(rs) - len(ok)
        if failed > MAX_FAILURE_RATE * reps:
            raise BenchmarkAborted(
                f"{arm}/{learner}/{method}: {failed} of {reps} replications failed"
            )
        if not ok:
            raise BenchmarkAborted(f"{arm}/{learner}/{method}: no usable replications")
        err = np.array([r.n for r in ok]) - n_true
        hit = [r.cin_l <= n_true <= r.cin_u for r in ok]
        rows.append(MetricsRow(arm, learner, method, float(err.mean()),
                               float(np.abs(err).mean()), float(np.sqrt(np.mean(err**2))),
                               float(np.mean(hit)), len(ok)))
    return rows


def run_benchmark(cfg: BenchConfig, return_reps: bool = False):
    """Run ``cfg.reps`` replications and aggregate per (arm, learner, method).

    Replications are independent and may run in worker processes; results
    are folded in replication order, so output does not depend on
    ``threads``.
    """
    if cfg.threads > 1:
        with ProcessPoolExecutor(cfg.threads) as pool:
            per_rep = list(pool.map(run_replication, [cfg] * cfg.reps, range(cfg.reps)))
    else:
        per_rep = [run_replication(cfg, r) for r in range(cfg.reps)]
    results = [x for rep in per_rep for x in rep]
    rows = aggregate(results, cfg.n_true, cfg.reps)
    return (rows, results) if return_reps else rows


def metrics_frame(rows: list[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([[getattr(r, c) for c in METRIC_COLUMNS] for r in rows],
                        columns=METRIC_COLUMNS)


def emit_report(rows: list[MetricsRow], out_dir, stem: str = "metrics") -> tuple[str, str]:
    """Write ``<stem>.csv`` and the ``<stem>.svg`` bar chart; return their paths."""
    if not rows:
        raise ValueError("no metrics rows to report")
    frame = metrics_frame(rows)
    numeric = frame[METRIC_COLUMNS[3:]].to_numpy(dtype=float)
    if not np.all(np.isfinite(numeric)):
        raise ValueError("metrics contain NaN or infinite cells")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    svg_path = os.path.join(out_dir, f"{stem}.svg")
    frame.to_csv(csv_path, index=False, lineterminator="\n")
    plot_metrics(frame, svg_path)
    return csv_path, svg_path


# -- config file -----------------------------------------------------------------

_INT_KEYS = {"n_true", "reps", "K", "l", "nfolds", "seed", "threads"}
_FLOAT_KEYS = {"ep", "target_psi", "margin", "alpha"}
_LIST_KEYS = {"learners", "methods", "arms", "sl_library"}
_BOOL_KEYS = {"categorical"}
_KEYS = _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _BOOL_KEYS


def parse_config(text: str) -> BenchConfig:
    """Parse a ``key=value`` benchmark config (``#`` starts a comment).

    Keys: n_true, reps, K, l, ep or target_psi, categorical, learners,
    sl_library, methods, arms, nfolds, margin, alpha, seed, threads.
    """
    kv: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                kv[key] = int(value)
            elif key in _FLOAT_KEYS:
                kv[key] = float(value)
            elif key in _BOOL_KEYS:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"not a boolean: {value!r}")
                kv[key] = value.lower() in ("true", "1", "yes")
            else:
                kv[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    lib = kv.pop("sl_library", DEFAULT_SL_LIBRARY)
    learners = []
    for name in kv.pop("learners", ("rangerlogit",)):
        try:
            learners.append(LearnerKind.parse(name, lib))
        except ValueError as exc:
            raise ConfigError(f"key 'learners': {exc}") from exc
    try:
        dgp = DgpSpec(K=kv.pop("K", 2), l=kv.pop("l", 1),
                      categorical=kv.pop("categorical", False), ep=kv.pop("ep", 0.0))
    except ValueError as exc:
        raise ConfigError(f"DGP: {exc}") from exc
    if "target_psi" in kv:
        dgp = dgp.with_(ep=calibrate_ep(dgp, kv.pop("target_psi")))
    try:
        return BenchConfig(dgp=dgp, learners=tuple(learners), **kv)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
