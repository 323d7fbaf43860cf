"""Fold assignment and cross-fitted nuisance predictions.

Each row's q-probabilities come from a model trained on the other folds.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dataset import Dataset
from .learners import Hyper, LearnerKind, QTriple, child_seed, fit_nuisance, predict_q


class NuisanceFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    idfold: np.ndarray
    nfolds: int
    seed: int | None = None

    def __post_init__(self):
        idfold = np.asarray(self.idfold, dtype=int).copy()
        idfold.flags.writeable = False
        object.__setattr__(self, "idfold", idfold)

    @property
    def N(self) -> int:
        return self.idfold.size

    @classmethod
    def from_labels(cls, labels) -> "FoldAssignment":
        """Wrap externally supplied labels (e.g. read from an idfold file)."""
        labels = np.asarray(labels, dtype=int)
        if labels.size == 0 or labels.min() < 1:
            raise ValueError("fold labels must be positive integers")
        return cls(labels, int(labels.max()))

    def to_csv(self, path) -> None:
        pd.DataFrame({"idfold": self.idfold}).to_csv(path, index=False, lineterminator="\n")


def read_idfold(path) -> FoldAssignment:
    """Read a one-column fold file; a non-numeric first line is a header."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines and not lines[0].lstrip("-").isdigit():
        lines = lines[1:]
    try:
        labels = [int(x) for x in lines]
    except ValueError as exc:
        raise ValueError(f"{path}: fold labels must be integers ({exc})") from exc
    return FoldAssignment.from_labels(labels)


def assign_folds(N: int, nfolds: int = 5, seed: int = 0) -> FoldAssignment:
    """Balanced random partition of ``N`` rows into folds labelled 1..nfolds."""
    if nfolds < 2:
        raise ValueError(f"nfolds must be at least 2, got {nfolds}")
    if nfolds > N:
        raise ValueError(f"nfolds={nfolds} exceeds the number of rows N={N}")
    idfold = np.empty(N, dtype=int)
    idfold[np.random.default_rng(seed).permutation(N)] = np.arange(N) % nfolds + 1
    return FoldAssignment(idfold, nfolds, seed)


@dataclass(frozen=True)
class NuisanceEstimates:
    pair: tuple[int, int]
    q: dict[str, QTriple]
    idfold: FoldAssignment | None
    model_names: tuple[str, ...]

    @property
    def listpair(self) -> str:
        return f"{self.pair[0]},{self.pair[1]}"

    @property
    def N(self) -> int:
        return len(next(iter(self.q.values())).q1)

    def to_frame(self) -> pd.DataFrame:
        cols = {"listpair": [self.listpair] * self.N}
        for m in self.model_names:
            q = self.q[m]
            cols[f"{m}.q12"] = q.q12
            cols[f"{m}.q1"] = q.q1
            cols[f"{m}.q2"] = q.q2
        return pd.DataFrame(cols)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


def read_nuisances(path, idfold: FoldAssignment | None = None) -> NuisanceEstimates:
    """Read nuisance estimates written by :meth:`NuisanceEstimates.to_csv`."""
    frame = pd.read_csv(path, dtype={"listpair": str})
    if "listpair" in frame.columns:
        pairs = frame["listpair"].unique()
        if len(pairs) != 1:
            raise ValueError(f"{path}: nuisances must cover exactly one list pair")
        j, k = (int(v) for v in str(pairs[0]).split(","))
    else:
        j, k = 1, 2
    names = []
    for col in frame.columns:
        if col.endswith(".q12"):
            names.append(col[:-4])
    if not names:
        raise ValueError(f"{path}: no '<model>.q12' columns found")
    q = {}
    for m in names:
        try:
            q[m] = QTriple(*(frame[f"{m}.{s}"].to_numpy(dtype=float) for s in ("q1", "q2", "q12")))
        except KeyError as exc:
            raise ValueError(f"{path}: missing column {exc.args[0]}") from exc
    return NuisanceEstimates((j, k), q, idfold, tuple(names))


def fit_seed(seed: int, kind: LearnerKind, fold: int) -> int:
    """Seed for one (learner, fold) fit; independent of the other learners."""
    return child_seed(seed, zlib.crc32(kind.tag.encode()), fold)


def crossfit_nuisances(data: Dataset, pair, kinds, folds: FoldAssignment,
                       margin: float = 0.005, seed: int = 0,
                       hyper: Hyper | None = None, n_jobs: int = 1) -> NuisanceEstimates:
    """Out-of-fold (q1, q2, q12) for every row and learner kind."""
    kinds = [LearnerKind.parse(k) if isinstance(k, str) else k for k in kinds]
    if not kinds:
        raise ValueError("at least one learner kind is required")
    if folds.N != data.N:
        raise ValueError(f"fold assignment has {folds.N} rows, data has {data.N}")
    labels = np.unique(folds.idfold)
    tasks = [(kind, int(f)) for kind in kinds for f in labels]

    def run(task):
        kind, f = task
        test = folds.idfold == f
        try:
            model = fit_nuisance(kind, data.subset(~test), pair, hyper,
                                 fit_seed(seed, kind, f), train_folds=tuple(int(x) for x in labels if x != f))
            return predict_q(model, data.covariates.iloc[np.flatnonzero(test)], margin)
        except Exception as exc:
            raise NuisanceFitError(f"learner {kind.name}, fold {f}: {exc}") from exc

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    q = {}
    for kind in kinds:
        q[kind.name] = QTriple(np.empty(data.N), np.empty(data.N), np.empty(data.N))
    for (kind, f), pred in zip(tasks, results):
        rows = folds.idfold == f
        for dst, src in zip(q[kind.name], pred):
            dst[rows] = src
    return NuisanceEstimates(tuple(pair), q, folds, tuple(k.name for k in kinds))
