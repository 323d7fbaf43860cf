import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit, log_expit, log_softmax

from caprec.learners import (
    Hyper,
    LearnerKind,
    QTriple,
    SchemaError,
    blend_weight,
    clamp_q,
    fit_binary,
    fit_forest,
    fit_nuisance,
    predict_q,
    predict_q_raw,
    stack_weights,
)
from caprec.learners.logistic import irls_logistic, multinomial_proba, newton_multinomial
from caprec.learners.spline import natural_spline_basis, quantile_knots

from conftest import make_dataset

FAST = Hyper(n_trees=40)


def logistic_data(n=500, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (rng.random(n) < expit(0.3 + 1.2 * x[:, 0] - 0.8 * x[:, 1])).astype(float)
    return x, y


# -- kinds ----------------------------------------------------------------------

def test_learner_kind_validation():
    assert LearnerKind("sl").sl_library == ("logit", "gam", "ranger")
    with pytest.raises(ValueError, match="unknown learner"):
        LearnerKind("boost")
    with pytest.raises(ValueError):
        LearnerKind("logit", ("gam",))
    with pytest.raises(ValueError):
        LearnerKind("sl", ("sl",))


# -- fitting routines against a generic optimizer -------------------------------

def test_irls_matches_generic_optimizer():
    x, y = logistic_data()
    X = np.column_stack([np.ones(len(y)), x])
    fit = irls_logistic(X, y)

    def nll(b):
        eta = X @ b
        return -(y * log_expit(eta) + (1 - y) * log_expit(-eta)).sum()

    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    assert fit.converged
    np.testing.assert_allclose(fit.coef, ref, atol=1e-5)


def test_multinomial_matches_generic_optimizer():
    rng = np.random.default_rng(3)
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    B = np.array([[0.5, -0.2], [1.0, -0.7]])
    P = np.exp(log_softmax(np.column_stack([X @ B, np.zeros(n)]), axis=1))
    labels = np.array([rng.choice(3, p=p) for p in P])
    fit = newton_multinomial(X, labels, 3)

    def nll(b):
        eta = np.column_stack([X @ b.reshape(2, 2), np.zeros(n)])
        return -log_softmax(eta, axis=1)[np.arange(n), labels].sum()

    ref = minimize(nll, np.zeros(4), method="BFGS", options={"gtol": 1e-10}).x.reshape(2, 2)
    np.testing.assert_allclose(fit.coef, ref, atol=1e-5)
    np.testing.assert_allclose(multinomial_proba(X, fit.coef).sum(axis=1), 1.0)


def test_separable_data_terminates():
    x = np.linspace(-1, 1, 40)
    y = (x > 0).astype(float)
    model, flags = fit_binary("logit", x[:, None], np.zeros((40, 0)), y, Hyper(), 0)
    p = model.predict(x[:, None], np.zeros((40, 0)))
    assert np.all((p >= 0) & (p <= 1)) and np.all(np.isfinite(p))


# -- spline basis ---------------------------------------------------------------

def test_quantile_knots_default():
    x = np.arange(1, 101, dtype=float)
    np.testing.assert_allclose(quantile_knots(x, 4), np.quantile(x, [0.2, 0.4, 0.6, 0.8]))


def test_natural_spline_linear_beyond_boundary():
    knots = np.array([1.0, 2.0, 3.0, 4.0])
    x = np.array([5.0, 6.0, 7.0])
    B = natural_spline_basis(x, knots)
    np.testing.assert_allclose(np.diff(B, 2, axis=0), 0.0, atol=1e-9)
    x = np.array([-2.0, -1.0, 0.0])
    np.testing.assert_allclose(np.diff(natural_spline_basis(x, knots), 2, axis=0), 0.0, atol=1e-9)


def test_gam_df1_equals_logit():
    x, y = logistic_data(300, 1)
    xc = np.zeros((300, 0))
    lg, _ = fit_binary("logit", x, xc, y, Hyper(), 0)
    gm, _ = fit_binary("gam", x, xc, y, Hyper(spline_df=1), 0)
    np.testing.assert_array_equal(lg.predict(x, xc), gm.predict(x, xc))


# -- forest ---------------------------------------------------------------------

def test_forest_mean_over_trees():
    x, y = logistic_data(300, 2)
    f = fit_forest(x, y, n_trees=25, seed=4)
    per_tree = np.mean([f.predict_tree(x, t) for t in range(f.n_trees)], axis=0)
    np.testing.assert_allclose(f.predict(x), per_tree, rtol=0, atol=1e-12)


def test_forest_pure_leaf_and_limits():
    x = np.r_[np.zeros(20), np.ones(20)][:, None]
    y = np.r_[np.zeros(20), np.ones(20)]
    f = fit_forest(x, y, n_trees=30, seed=1)
    np.testing.assert_allclose(f.predict(np.array([[0.0], [1.0]])), [0.0, 1.0])
    assert np.all((f.oob >= 0) & (f.oob <= 1))


def test_forest_deterministic():
    x, y = logistic_data(200, 5)
    a = fit_forest(x, y, n_trees=10, seed=9).predict(x)
    b = fit_forest(x, y, n_trees=10, seed=9).predict(x)
    c = fit_forest(x, y, n_trees=10, seed=10).predict(x)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# -- ensembles -------------------------------------------------------------------

def test_blend_weight_ties_to_logit():
    y = np.array([1.0, 0.0])
    p = np.array([0.7, 0.3])
    assert blend_weight(y, p, p, np.linspace(0, 1, 11)) == 0.0


def test_rangerlogit_between_members():
    x, y = logistic_data(400, 6)
    xc = np.zeros((400, 0))
    model, _ = fit_binary("rangerlogit", x, xc, y, FAST, 3)
    rf, lg = model.members
    p, a, b = model.predict(x, xc), rf.predict(x, xc), lg.predict(x, xc)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all((p >= lo - 1e-12) & (p <= hi + 1e-12))
    assert model.weights.sum() == pytest.approx(1.0)


def test_sl_prefers_logit_on_logistic_data():
    x, y = logistic_data(500, 7)
    xc = np.zeros((500, 0))
    model, _ = fit_binary("sl", x, xc, y, FAST, 1, library=("logit", "ranger"))
    w = model.weights
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    assert w[0] >= 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_stack_weights_convex(seed, m):
    rng = np.random.default_rng(seed)
    Z = rng.uniform(0.01, 0.99, size=(60, m))
    y = (rng.random(60) < 0.5).astype(float)
    w = stack_weights(y, Z, iters=50)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)


# -- nuisance models -------------------------------------------------------------

def test_constant_target_fallback():
    rng = np.random.default_rng(0)
    caps = np.column_stack([np.ones(30), rng.integers(0, 2, 30)])
    d = make_dataset(caps, {"x1": rng.normal(size=30)})
    m = fit_nuisance("logit", d)
    q = predict_q_raw(m, d.covariates)
    np.testing.assert_array_equal(q.q1, 1.0)
    assert any("constant" in f for f in m.flags)


def test_mlogit_intercept_only_matches_frequencies():
    rng = np.random.default_rng(1)
    prof = rng.choice(3, size=100, p=[0.3, 0.5, 0.2])
    caps = np.array([(1, 1), (1, 0), (0, 1)])[prof]
    d = make_dataset(caps, pd.DataFrame(index=range(100)))
    q = predict_q_raw(fit_nuisance("mlogit", d), d.covariates)
    f11, f10, f01 = (np.mean(prof == c) for c in range(3))
    np.testing.assert_allclose(q.q12, f11, atol=1e-8)
    np.testing.assert_allclose(q.q1, f11 + f10, atol=1e-8)
    np.testing.assert_allclose(q.q2, f11 + f01, atol=1e-8)


def test_mlogit_q12_below_min(sim3):
    m = fit_nuisance("mlogit", sim3.data, pair=(1, 3))
    rng = np.random.default_rng(2)
    cov = pd.DataFrame(rng.uniform(0, 6, size=(1000, 2)), columns=["x1", "x2"])
    q = predict_q_raw(m, cov)
    assert np.all(q.q12 <= np.minimum(q.q1, q.q2) + 1e-15)
    assert np.all((q.q12 >= 0) & (q.q1 <= 1 + 1e-12))


def test_clamp_examples():
    q = clamp_q(QTriple(np.array([0.001]), np.array([0.7]), np.array([0.0001])), 0.005)
    assert (q.q1[0], q.q2[0], q.q12[0]) == (0.005, 0.7, 0.005)
    q = clamp_q(QTriple(np.array([0.8]), np.array([0.5]), np.array([0.2])), 0.005)
    assert (q.q1[0], q.q2[0], q.q12[0]) == (0.8, 0.5, 0.2)


@pytest.mark.parametrize("tag", ["logit", "mlogit", "gam", "ranger", "rangerlogit", "sl"])
def test_every_kind_predicts_in_range(sim_cat, tag):
    d = sim_cat.data.subset(np.arange(400))
    m = fit_nuisance(LearnerKind(tag), d, hyper=FAST, seed=2)
    q = predict_q(m, d.covariates, 0.005)
    for v in q:
        assert v.shape == (400,) and np.all((v >= 0.005) & (v <= 1))
    again = predict_q(fit_nuisance(LearnerKind(tag), d, hyper=FAST, seed=2), d.covariates)
    for a, b in zip(q, again):
        assert np.array_equal(a, b)


def test_margin_bounds(sim2):
    m = fit_nuisance("logit", sim2.data)
    with pytest.raises(ValueError):
        predict_q(m, sim2.data.covariates, 0.5)


def test_schema_mismatch(sim2):
    m = fit_nuisance("logit", sim2.data)
    with pytest.raises(SchemaError):
        predict_q(m, sim2.data.covariates.drop(columns=["x2"]))


def test_unseen_level_warns(sim_cat):
    m = fit_nuisance("logit", sim_cat.data)
    cov = sim_cat.data.covariates.iloc[:3].copy()
    cov["catcov"] = ["z", "a", "b"]
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        q = predict_q(m, cov)
    assert any("unseen" in str(w.message) for w in rec)
    ref = predict_q(m, cov.assign(catcov=["a", "a", "b"]))
    assert q.q1[0] == ref.q1[0]
