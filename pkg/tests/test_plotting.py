"""Golden-file checks: fixed inputs must render byte-identical SVG.

Set CAPREC_UPDATE_GOLDEN=1 to re-record the snapshots after an intended
visual change.
"""

import os
from pathlib import Path

import pandas as pd
import pytest

from caprec.bench import MetricsRow, metrics_frame
from caprec.plotting import plot_ci, plot_metrics

GOLDEN = Path(__file__).parent / "golden"


def k3_results():
    rows = []
    for pair, base in (("1,2", 4980), ("1,3", 5010), ("2,3", 4950)):
        for i, model in enumerate(("gam", "logit", "rangerlogit")):
            n = base + 15 * i
            rows.append([pair, model, "DR", 0.9, 0.45, n, 37.0, n - 72.5, n + 72.5])
    return pd.DataFrame(rows, columns=["listpair", "model", "method", "psi", "sigma", "n",
                                       "sigman", "cin.l", "cin.u"])


def single_result():
    return k3_results().iloc[:1]


def cond_results():
    df = k3_results().iloc[:3].copy()
    df["listpair"] = "1,2"
    df["condvar"] = ["a", "b", "c"]
    return df


def metrics():
    return metrics_frame([MetricsRow(a, "rangerlogit", m, b, abs(b) + 5, abs(b) + 40, c, 100)
                          for a, b0 in (("CorX", 12.0), ("MisX", 60.0))
                          for m, b, c in (("DR", b0, 0.94), ("PI", 2 * b0, 0.81))])


CASES = {
    "ci_k3.svg": lambda p: plot_ci(k3_results(), p, true_n=5000),
    "ci_single.svg": lambda p: plot_ci(single_result(), p),
    "ci_cond.svg": lambda p: plot_ci(cond_results(), p),
    "metrics.svg": lambda p: plot_metrics(metrics(), p),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_golden_svg(tmp_path, name):
    out = tmp_path / name
    CASES[name](out)
    golden = GOLDEN / name
    if os.environ.get("CAPREC_UPDATE_GOLDEN") == "1" or not golden.exists():
        GOLDEN.mkdir(exist_ok=True)
        golden.write_bytes(out.read_bytes())
        pytest.skip(f"recorded {name}")
    assert out.read_bytes() == golden.read_bytes()


def test_repeat_render_identical(tmp_path):
    plot_ci(k3_results(), tmp_path / "a.svg")
    plot_ci(k3_results(), tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_missing_columns(tmp_path):
    with pytest.raises(ValueError, match="missing"):
        plot_ci(k3_results().drop(columns=["cin.u"]), tmp_path / "x.svg")
