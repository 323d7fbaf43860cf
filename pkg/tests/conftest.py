import numpy as np
import pandas as pd
import pytest

from caprec import Dataset
from caprec.simulator import DgpSpec, simulate


def make_dataset(captures, covariates=None, cat=None):
    captures = np.asarray(captures, dtype=np.int8)
    K = captures.shape[1]
    cov = pd.DataFrame(covariates if covariates is not None else {"x1": np.zeros(len(captures))})
    numeric = tuple(c for c in cov.columns if c != cat)
    categorical = (cat,) if cat else ()
    return Dataset(captures, cov, tuple(f"y{k}" for k in range(1, K + 1)), numeric, categorical)


@pytest.fixture(scope="session")
def sim2():
    return simulate(DgpSpec(n_true=1500, l=2, ep=-1.0, seed=11))


@pytest.fixture(scope="session")
def sim_cat():
    return simulate(DgpSpec(n_true=3000, l=1, ep=-0.5, categorical=True, seed=5))


@pytest.fixture(scope="session")
def sim3():
    return simulate(DgpSpec(n_true=2000, K=3, l=2, ep=-1.0, seed=2))


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
