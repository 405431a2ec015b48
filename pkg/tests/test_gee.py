import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sandwich
from pairgee.gee import (GEEError, ModelSpec, design_matrix, estimating_function, fit_weighted_gee,
                         nearest_correlation, oracle_weight_check, parse_term)


def panel(n=120, windows=3, seed=0, drop=0.2):
    rng = np.random.default_rng(seed)
    f = pd.DataFrame({"subject_id": np.repeat([f"s{i:03d}" for i in range(n)], windows),
                      "t": np.tile(np.arange(windows, dtype=float), n),
                      "z": np.repeat(rng.integers(0, 2, n), windows).astype(float),
                      "x": rng.normal(size=n * windows)})
    u = np.repeat(rng.normal(size=n), windows)
    f["po"] = 0.7 + 0.1 * f.z - 0.05 * f.x + 0.2 * u + rng.normal(0, 0.3, len(f))
    f["weight"] = rng.uniform(1, 5, len(f))
    return f.sample(frac=1 - drop, random_state=seed).sort_index()


def test_weighted_intercept():
    f = pd.DataFrame({"subject_id": ["a", "b", "c"], "t": 0.0, "po": [2.0, 4, 5], "weight": [1.0, 1, 2]})
    assert fit_weighted_gee(f, ModelSpec(())).estimates[0] == pytest.approx(4.0, abs=1e-14)


def test_equal_weights_is_least_squares():
    f = panel()
    fit = fit_weighted_gee(f.assign(weight=3.0), ModelSpec(("z", "x")))
    X = np.column_stack([np.ones(len(f)), f.z, f.x])
    ols = np.linalg.lstsq(X, f.po.to_numpy(), rcond=None)[0]
    np.testing.assert_allclose(fit.estimates, ols, atol=1e-12)


def test_sandwich_matches_reference():
    f = panel(seed=1)
    fit = fit_weighted_gee(f, ModelSpec(("z", "x")))
    X = np.column_stack([np.ones(len(f)), f.z, f.x])
    beta, cov = sandwich(X, f.po, f.weight, list(f.subject_id))
    np.testing.assert_allclose(fit.estimates, beta, atol=1e-12)
    np.testing.assert_allclose(fit.cov, cov, atol=1e-13)


def test_single_row_clusters_give_robust_covariance():
    rng = np.random.default_rng(2)
    n = 200
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    w = rng.uniform(0.5, 2, n)
    y = X @ [1.0, 2.0] + rng.normal(size=n) * (1 + np.abs(X[:, 1]))
    f = pd.DataFrame({"subject_id": np.arange(n), "t": 0.0, "x": X[:, 1], "po": y, "weight": w})
    fit = fit_weighted_gee(f, ModelSpec(("x",)))
    A = X.T @ (X * w[:, None])
    r = y - X @ fit.estimates
    meat = X.T @ (X * ((w * r) ** 2)[:, None])
    hc0 = np.linalg.solve(A, np.linalg.solve(A, meat).T)
    np.testing.assert_allclose(fit.cov, hc0, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("working", ["independence", "unstructured"])
def test_estimating_function_vanishes(working):
    f = panel(seed=3)
    spec = ModelSpec(("z", "x"), working=working)
    fit = fit_weighted_gee(f, spec)
    assert fit.converged
    if working == "independence":
        u = estimating_function(f, spec, fit.estimates)
        assert np.linalg.norm(u) < 1e-8


@pytest.mark.parametrize("working", ["independence", "unstructured"])
def test_weight_scale_invariance(working):
    f = panel(seed=4)
    spec = ModelSpec(("z", "x"), working=working)
    a = fit_weighted_gee(f, spec)
    b = fit_weighted_gee(f.assign(weight=f.weight * 4.0), spec)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    c = fit_weighted_gee(f.assign(weight=f.weight * 3.7), spec)
    np.testing.assert_allclose(a.estimates, c.estimates, rtol=0, atol=1e-13)
    np.testing.assert_allclose(a.cov, c.cov, rtol=1e-10)


def test_unstructured_single_window_equals_independence():
    f = panel(windows=1, seed=5, drop=0)
    ind = fit_weighted_gee(f, ModelSpec(("z", "x")))
    uns = fit_weighted_gee(f, ModelSpec(("z", "x"), working="unstructured"))
    np.testing.assert_allclose(uns.estimates, ind.estimates, atol=1e-12)
    np.testing.assert_allclose(uns.cov, ind.cov, rtol=1e-9)


def test_unstructured_is_more_efficient_with_correlated_rows():
    ses = {w: [] for w in ("independence", "unstructured")}
    for seed in range(5):
        f = panel(n=300, windows=4, seed=seed, drop=0)
        # a within-subject covariate benefits from modelling the correlation
        for w in ses:
            ses[w].append(fit_weighted_gee(f, ModelSpec(("x",), working=w)).se[1])
    assert np.mean(ses["unstructured"]) < np.mean(ses["independence"])


def test_zero_weight_rows_dropped():
    f = panel(seed=6)
    g = pd.concat([f, f.head(5).assign(weight=0.0, po=99.0)])
    a = fit_weighted_gee(f, ModelSpec(("z",)))
    b = fit_weighted_gee(g, ModelSpec(("z",)))
    np.testing.assert_allclose(a.estimates, b.estimates, atol=1e-13)
    assert b.n_rows == len(f)


def test_unweighted_fit():
    f = panel(seed=7)
    a = fit_weighted_gee(f, ModelSpec(("z",)), weight=None)
    b = fit_weighted_gee(f.assign(weight=1.0), ModelSpec(("z",)))
    np.testing.assert_array_equal(a.estimates, b.estimates)


def test_errors():
    f = panel(seed=8)
    with pytest.raises(GEEError, match="missing covariate column\\(s\\): age"):
        fit_weighted_gee(f, ModelSpec(("age",)))
    with pytest.raises(GEEError, match="positive"):
        fit_weighted_gee(f.assign(weight=-1.0), ModelSpec(("z",)))
    with pytest.raises(GEEError, match="subjects"):
        fit_weighted_gee(f[f.subject_id == "s000"], ModelSpec(("z",)))
    with pytest.raises(ValueError):
        ModelSpec(("z + x",))


def test_term_parsing_and_design():
    assert parse_term("I(t>=6):z") == [("ind", "t", ">=", 6.0), ("col", "z")]
    f = pd.DataFrame({"t": [5.0, 6.0, 7.0], "z": [1.0, 1.0, 0.0]})
    X = design_matrix(f, ModelSpec(("z:I(t<6)", "z:I(t>=6)"), intercept=False))
    np.testing.assert_array_equal(X, [[1, 0], [0, 1], [0, 0]])


def test_table_columns():
    fit = fit_weighted_gee(panel(seed=9), ModelSpec(("z",)))
    tab = fit.table()
    assert list(tab.columns) == ["term", "estimate", "se", "ci_lo", "ci_hi", "p_value"]
    assert tab.term.tolist() == ["(Intercept)", "z"]
    assert np.all(tab.ci_lo < tab.estimate) and np.all(tab.estimate < tab.ci_hi)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.99, 0.99), min_size=3, max_size=3))
def test_nearest_correlation_is_valid(r):
    C = np.array([[1, r[0], r[1]], [r[0], 1, r[2]], [r[1], r[2], 1]])
    P = nearest_correlation(C)
    np.testing.assert_allclose(np.diag(P), 1, atol=1e-12)
    np.testing.assert_allclose(P, P.T, atol=1e-14)
    assert np.linalg.eigvalsh(P).min() > 0


def test_oracle_check_with_known_probabilities():
    rng = np.random.default_rng(10)
    n = 4000
    f = pd.DataFrame({"subject_id": np.arange(n), "stratum": rng.integers(0, 2, n)})
    f["pi"] = np.where(f.stratum == 1, 0.4, 0.8)
    f["at_risk"] = (rng.random(n) < f.pi).astype(int)
    f["po"] = np.where(f.at_risk == 1, rng.normal(1 + f.stratum, 1), np.nan)
    rep = oracle_weight_check(f, {0: (1.0, 0.0), 1: (2.0, 0.0)})
    assert rep.max_abs_z < 3
    assert list(rep.to_frame().columns) == ["stratum", "estimate", "se", "truth", "truth_se", "z"]
    shifted = oracle_weight_check(f.assign(pi=0.5), {0: (1.0, 0.0), 1: (2.0, 0.0)})
    assert shifted.max_abs_z > 3
