"""Capture-recapture tables: loading, validation and column reordering.

A table holds one row per observed individual. The first ``K`` columns are
0/1 list memberships (the capture history) and the remaining columns are
covariates. List and column indices in this module are 1-based, matching the
``"j,k"`` list-pair labels used throughout the package.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class DataFormatError(ValueError):
    """Raised when a table cannot be turned into a valid Dataset."""


@dataclass(frozen=True)
class Dataset:
    """Immutable capture-recapture data set.

    Attributes
    ----------
    captures : ndarray of int8, shape (N, K)
        ``captures[i, k]`` is 1 when individual ``i`` appears on list ``k+1``.
    covariates : DataFrame
        Covariate columns in their original order. Numeric columns are
        float64, categorical columns hold strings.
    list_names : tuple of str
        Names of the K list columns.
    """

    captures: np.ndarray
    covariates: pd.DataFrame
    list_names: tuple[str, ...]
    numeric_names: tuple[str, ...] = field(default=())
    categorical_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        caps = np.asarray(self.captures, dtype=np.int8)
        if caps.ndim != 2:
            raise DataFormatError("captures must be a 2-d matrix")
        if caps.shape[1] < 2:
            raise DataFormatError(f"need at least 2 lists, got K={caps.shape[1]}")
        if caps.shape[0] != len(self.covariates):
            raise DataFormatError("captures and covariates differ in row count")
        if not np.isin(caps, (0, 1)).all():
            raise DataFormatError("captures must be 0/1")
        zero = np.flatnonzero(caps.sum(axis=1) == 0)
        if zero.size:
            raise DataFormatError(
                f"row {zero[0] + 1} has an all-zero capture history"
            )
        caps = caps.copy()
        caps.flags.writeable = False
        object.__setattr__(self, "captures", caps)
        cov = self.covariates.reset_index(drop=True).copy()
        object.__setattr__(self, "covariates", cov)
        if not self.numeric_names and not self.categorical_names:
            num = tuple(c for c in cov.columns if pd.api.types.is_numeric_dtype(cov[c]))
            cat = tuple(c for c in cov.columns if c not in num)
            object.__setattr__(self, "numeric_names", num)
            object.__setattr__(self, "categorical_names", cat)
        object.__setattr__(self, "list_names", tuple(self.list_names))

    @property
    def N(self) -> int:
        return self.captures.shape[0]

    @property
    def K(self) -> int:
        return self.captures.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.list_names + tuple(self.covariates.columns)

    @property
    def covariates_num(self) -> np.ndarray:
        return self.covariates[list(self.numeric_names)].to_numpy(dtype=float)

    @property
    def covariates_cat(self) -> np.ndarray:
        return self.covariates[list(self.categorical_names)].to_numpy(dtype=object)

    def subset(self, rows) -> "Dataset":
        """Return the Dataset restricted to ``rows`` (indices or boolean mask)."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Dataset(
            self.captures[rows],
            self.covariates.iloc[rows],
            self.list_names,
            self.numeric_names,
            self.categorical_names,
        )

    def drop_covariate(self, name: str) -> "Dataset":
        return Dataset(
            self.captures,
            self.covariates.drop(columns=[name]),
            self.list_names,
            tuple(c for c in self.numeric_names if c != name),
            tuple(c for c in self.categorical_names if c != name),
        )

    def to_frame(self) -> pd.DataFrame:
        """List columns first, then covariates in their stored order."""
        caps = pd.DataFrame(self.captures.astype(int), columns=list(self.list_names))
        return pd.concat([caps, self.covariates], axis=1)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def equals(self, other: "Dataset", atol: float = 0.0) -> bool:
        if self.column_names != other.column_names:
            return False
        if not np.array_equal(self.captures, other.captures):
            return False
        if self.numeric_names != other.numeric_names:
            return False
        a, b = self.covariates_num, other.covariates_num
        if a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=atol):
            return False
        return np.array_equal(self.covariates_cat, other.covariates_cat)


@dataclass
class FormatReport:
    is_valid: bool
    list_columns_found: list[int]
    violations: list[tuple[str, str]]


def _is_decimal(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


def _is_binary(col: pd.Series) -> bool:
    return len(col) > 0 and col.isin(["0", "1"]).all()


def read_table(path) -> pd.DataFrame:
    """Parse a CSV into a frame of raw strings (no type inference)."""
    if not os.path.isfile(path):
        raise DataFormatError(f"cannot read {path}: no such file")
    try:
        table = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    return table.apply(lambda c: c.str.strip())


def check_format(table: pd.DataFrame, K: int) -> FormatReport:
    """Diagnose whether the first ``K`` columns of ``table`` are list columns.

    Never raises. ``list_columns_found`` holds the 1-based positions of every
    0/1 column in the table, so misplaced list columns can be located.
    """
    table = table.astype(str)
    violations: list[tuple[str, str]] = []
    found = [i + 1 for i, c in enumerate(table.columns) if _is_binary(table[c])]
    if K < 2:
        violations.append(("K", f"need at least 2 lists, got {K}"))
    if table.shape[1] < K:
        violations.append(("columns", f"table has {table.shape[1]} columns, K={K}"))
    else:
        for pos in range(K):
            name = table.columns[pos]
            if not _is_binary(table[name]):
                violations.append((f"column {pos + 1} ({name})",
                                   "non-binary value in list column (expected 0/1)"))
        if K >= 2 and all(_is_binary(table[table.columns[p]]) for p in range(K)):
            caps = table.iloc[:, :K].astype(int).to_numpy()
            for r in np.flatnonzero(caps.sum(axis=1) == 0):
                violations.append((f"row {r + 1}", "all-zero capture history"))
    for name in table.columns[K:]:
        empty = np.flatnonzero((table[name] == "").to_numpy())
        for r in empty:
            violations.append((f"row {r + 1}, column {name}", "missing value"))
    return FormatReport(not violations, found, violations)


def _build(table: pd.DataFrame, K: int) -> Dataset:
    report = check_format(table, K)
    if not report.is_valid:
        where, why = report.violations[0]
        raise DataFormatError(f"{where}: {why}")
    caps = table.iloc[:, :K].astype(int).to_numpy()
    cov = table.iloc[:, K:].copy()
    numeric, categorical = [], []
    for name in cov.columns:
        if cov[name].map(_is_decimal).all():
            cov[name] = cov[name].astype(float)
            numeric.append(name)
        else:
            categorical.append(name)
    return Dataset(caps, cov, tuple(table.columns[:K]), tuple(numeric), tuple(categorical))


def load_dataset(path, K: int = 2, list_columns: list[str] | None = None) -> Dataset:
    """Load a capture-recapture CSV.

    The first ``K`` columns are taken as lists unless ``list_columns`` names
    them, in which case they are moved to the front in the given order.
    A covariate column is numeric when every cell parses as a finite
    decimal, otherwise categorical. Missing cells are an error.
    """
    if K < 2:
        raise DataFormatError(f"need at least 2 lists, got K={K}")
    table = read_table(path)
    if list_columns is not None:
        if len(list_columns) != K:
            raise DataFormatError(f"{len(list_columns)} list columns named but K={K}")
        missing = [c for c in list_columns if c not in table.columns]
        if missing:
            raise DataFormatError(f"list column {missing[0]!r} not in {path}")
        rest = [c for c in table.columns if c not in list_columns]
        table = table[list(list_columns) + rest]
    return _build(table, K)


def reformat(table: pd.DataFrame, list_columns: list[int]) -> Dataset:
    """Move the 1-based ``list_columns`` to the front and build a Dataset."""
    table = table.astype(str) if not isinstance(table, Dataset) else table.to_frame().astype(str)
    ncol = table.shape[1]
    for pos in list_columns:
        if not 1 <= pos <= ncol:
            raise DataFormatError(f"column index {pos} out of range 1..{ncol}")
        name = table.columns[pos - 1]
        if not _is_binary(table[name]):
            raise DataFormatError(f"column {pos} ({name}) is not a 0/1 list column")
    front = [table.columns[p - 1] for p in list_columns]
    rest = [c for c in table.columns if c not in front]
    return _build(table[front + rest], len(list_columns))
