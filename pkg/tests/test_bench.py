import dataclasses
import random

import numpy as np
import pandas as pd
import pytest

import caprec.bench as bench
from caprec.bench import (
    METRIC_COLUMNS,
    BenchConfig,
    BenchmarkAborted,
    ConfigError,
    MetricsRow,
    aggregate,
    emit_report,
    parse_config,
    run_benchmark,
)
from caprec.learners import LearnerKind
from caprec.simulator import DgpSpec, calibrate_ep

SMALL = BenchConfig(n_true=600, reps=6, dgp=DgpSpec(ep=-1.0),
                    learners=(LearnerKind("logit"),), arms=("CorX", "MisX"), seed=5)


@pytest.fixture(scope="module")
def small_run():
    return run_benchmark(SMALL, return_reps=True)


def test_deterministic(small_run):
    assert run_benchmark(SMALL) == small_run[0]


def test_metric_identities(small_run):
    rows, reps = small_run
    assert len(rows) == 4
    for row in rows:
        n = np.array([r.n for r in reps if (r.arm, r.learner, r.method) ==
                      (row.arm, row.learner, row.method)])
        err = n - SMALL.n_true
        assert row.rmse**2 == pytest.approx(row.mean_bias**2 + n.var(), abs=1e-9)
        assert row.rmse >= abs(row.mean_bias) and 0 <= row.coverage <= 1
        assert row.mean_abs_bias == pytest.approx(np.abs(err).mean())
        assert row.reps_used == SMALL.reps


def test_order_independent(small_run):
    rows, reps = small_run
    shuffled = list(reps)
    random.Random(0).shuffle(shuffled)
    relabel = {r: SMALL.reps - 1 - r for r in range(SMALL.reps)}
    shuffled = [dataclasses.replace(r, rep=relabel[r.rep]) for r in shuffled]
    again = aggregate(shuffled, SMALL.n_true, SMALL.reps)
    for a, b in zip(sorted(rows, key=str), sorted(again, key=str)):
        assert a.coverage == b.coverage
        assert a.rmse == pytest.approx(b.rmse, rel=1e-12)


def test_more_reps_extend(small_run):
    _, reps = small_run
    _, longer = run_benchmark(dataclasses.replace(SMALL, reps=8), return_reps=True)
    assert [r for r in longer if r.rep < SMALL.reps] == reps


def test_processes_match_serial(small_run):
    rows = run_benchmark(dataclasses.replace(SMALL, threads=2))
    assert rows == small_run[0]


def test_failed_reps_counted(monkeypatch):
    real = bench.popsize

    def flaky(data, *a, **k):
        if k.get("seed") == bench.rep_seed(SMALL.seed, 0):
            raise ValueError("boom")
        return real(data, *a, **k)

    monkeypatch.setattr(bench, "popsize", flaky)
    rows = run_benchmark(SMALL)
    assert all(r.reps_used == SMALL.reps - 1 for r in rows)
    monkeypatch.setattr(bench, "popsize", lambda *a, **k: (_ for _ in ()).throw(ValueError("x")))
    with pytest.raises(BenchmarkAborted):
        run_benchmark(SMALL)


def test_oracle_arm_coverage():
    dgp = DgpSpec(l=1)
    dgp = dgp.with_(ep=calibrate_ep(dgp, 0.75))
    cfg = BenchConfig(n_true=2000, reps=200, dgp=dgp, arms=("Oracle",), seed=1)
    rows = run_benchmark(cfg)
    dr = next(r for r in rows if r.method == "DR")
    assert 0.90 <= dr.coverage <= 0.99
    assert dr.learner == "truth"


def test_emit_report(tmp_path):
    rows = [MetricsRow(a, "rangerlogit", m, 10.0, 20.0, 30.0, 0.9, 100)
            for a in ("CorX", "MisX") for m in ("DR", "PI")]
    csv_path, svg_path = emit_report(rows, tmp_path / "out")
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == METRIC_COLUMNS and len(frame) == 4
    svg = open(svg_path).read()
    assert sum(f'id="axes_{i}"' in svg for i in range(1, 5)) == 3


def test_emit_report_refuses_nan(tmp_path):
    rows = [MetricsRow("CorX", "logit", "DR", 1.0, 1.0, 1.0, float("nan"), 3)]
    with pytest.raises(ValueError, match="NaN"):
        emit_report(rows, tmp_path)
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_parse_config():
    cfg = parse_config("""
        # smoke run
        n_true = 800
        reps=3
        learners=logit,sl
        sl_library=logit,gam
        methods=DR,PI
        arms=CorX,MisX,Oracle
        K=3
        l=2
        ep=-1.5
        seed=4
    """)
    assert cfg.reps == 3 and cfg.dgp.K == 3 and cfg.dgp.ep == -1.5
    assert cfg.learners[1].sl_library == ("logit", "gam")
    assert cfg.arms == ("CorX", "MisX", "Oracle")


@pytest.mark.parametrize("text,needle", [
    ("reps=2\nlearners=logit,forest\n", "learners"),
    ("reps=2\nbogus=1\n", "line 2"),
    ("reps=two\n", "line 1"),
    ("reps\n", "line 1"),
    ("reps=0\n", "reps"),
    ("arms=Nope\n", "arm"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)
