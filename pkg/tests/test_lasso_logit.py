import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lasso_logit_oracle, logit_mle_oracle, logit_nll
from uqpe.data import Dataset, build_basis
from uqpe.errors import DegenerateOutcomeError, ExtrapolationError
from uqpe.lasso_logit import (
    LogitLassoFit, QGridFits, default_forced_set, default_grid_taus, fit_logit_lasso, fit_q_grid,
    lambda_logit, logistic_mle, nearest_grid_index, penalized_objective, post_lasso_refit,
    predict_m0, predict_m1,
)


def _instance(seed, n=None, m=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(60, 201))
    m = m or int(rng.integers(2, 21))
    B = np.column_stack([np.ones(n), rng.standard_normal((n, m - 1))])
    beta = np.zeros(m)
    beta[1 : min(m, 4)] = rng.normal(0, 1.0, min(m, 4) - 1)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-B @ beta))).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    return B, y


def _score(B, y, beta):
    return B.T @ (y - 1 / (1 + np.exp(-B @ beta))) / B.shape[0]


# -- penalty level ---------------------------------------------------------------

def test_lambda_logit_value():
    # 30-digit evaluation of 1.1 * sqrt(2) * erfinv(1 - 2 a) * sqrt(500), a = 0.1/log(500)/500
    assert lambda_logit(500, 301) == pytest.approx(98.29378433693392, rel=1e-12)


def test_lambda_logit_structure():
    assert lambda_logit(500, 1000) > lambda_logit(500, 301)
    assert lambda_logit(1000, 301) > np.sqrt(2) * lambda_logit(500, 301) * 0.99
    assert lambda_logit(1000, 301) != pytest.approx(np.sqrt(2) * lambda_logit(500, 301), rel=1e-6)


# -- solver ----------------------------------------------------------------------

def test_zero_penalty_matches_newton():
    B, y = _instance(0, n=150, m=2)
    fit = fit_logit_lasso(B, y, 0.0, K=0)
    np.testing.assert_allclose(fit.beta, logit_mle_oracle(B, y), atol=1e-6)


def test_huge_penalty_gives_intercept_only():
    B, y = _instance(1)
    fit = fit_logit_lasso(B, y, 1e8)
    assert np.all(fit.beta[1:] == 0)
    assert fit.beta[0] == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-7)


def test_degenerate_indicator():
    B, _ = _instance(2)
    with pytest.raises(DegenerateOutcomeError):
        fit_logit_lasso(B, np.ones(B.shape[0]), 1.0)


@pytest.mark.parametrize("seed", range(50))
def test_objective_matches_proximal_oracle(seed):
    B, y = _instance(100 + seed)
    n = B.shape[0]
    lam = float(np.random.default_rng(seed).uniform(0.3, 1.5)) * lambda_logit(n, B.shape[1])
    fit = fit_logit_lasso(B, y, lam, K=2)
    pen = lam / n * fit.loadings
    ref = lasso_logit_oracle(B, y, pen)
    ours = penalized_objective(B, y, fit.beta, lam, fit.loadings)
    theirs = logit_nll(B, y, ref) + float(np.sum(pen * np.abs(ref)))
    assert ours <= theirs + 1e-8
    assert abs(ours - theirs) <= 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_kkt(seed):
    B, y = _instance(300 + seed)
    n = B.shape[0]
    lam = lambda_logit(n, B.shape[1]) * 0.5
    fit = fit_logit_lasso(B, y, lam)
    s = _score(B, y, fit.beta)
    bound = lam * fit.loadings / n
    zero = fit.beta == 0
    assert np.all(np.abs(s[zero]) <= bound[zero] + 1e-6)
    nz = ~zero
    np.testing.assert_allclose(s[nz], bound[nz] * np.sign(fit.beta[nz]), atol=1e-6)


def test_initial_loadings_formula():
    B, y = _instance(5)
    fit = fit_logit_lasso(B, y, 50.0, K=0)
    expect = np.sqrt(np.mean(y[:, None] * B**2, axis=0))
    expect[0] = 0.0
    np.testing.assert_allclose(fit.loadings, expect, rtol=1e-14)
    fit2 = fit_logit_lasso(B, y, 50.0, K=2)
    assert np.all(np.isfinite(fit2.loadings)) and np.all(fit2.loadings >= 0)
    assert fit2.loadings[0] == 0.0


def test_sparse_on_simulation_design(dgp1_full):
    ds = dgp1_full
    basis = build_basis(ds)
    B = basis.matrix(ds.covariates)
    y = (ds.outcome <= np.median(ds.outcome)).astype(float)
    lam = lambda_logit(ds.n, basis.dimension)
    fit = fit_logit_lasso(B, y, lam)
    assert fit.converged
    assert 1 <= fit.support.size < 20
    pen = lam / ds.n * fit.loadings
    ref = lasso_logit_oracle(B, y, pen, iters=20000)
    ours = penalized_objective(B, y, fit.beta, lam, fit.loadings)
    assert ours <= logit_nll(B, y, ref) + float(np.sum(pen * np.abs(ref))) + 1e-8


# -- post-lasso ------------------------------------------------------------------

def test_post_lasso_intercept_only():
    B, y = _instance(6)
    fit = fit_logit_lasso(B, y, 1e8)
    refit = post_lasso_refit(fit, B, y, S1=())
    assert refit.post_lasso
    assert refit.beta[0] == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-9)
    assert np.all(refit.beta[1:] == 0)


def test_post_lasso_forced_terms_enter():
    B, y = _instance(7, n=200, m=6)
    fit = fit_logit_lasso(B, y, 1e8)
    refit = post_lasso_refit(fit, B, y, S1=(0, 4))
    assert set(refit.support.tolist()) == {0, 4}
    np.testing.assert_allclose(refit.beta[[0, 4]], logit_mle_oracle(B[:, [0, 4]], y), atol=1e-7)


def test_post_lasso_support_union():
    B, y = _instance(8, n=200, m=10)
    fit = fit_logit_lasso(B, y, 5.0)
    refit = post_lasso_refit(fit, B, y, S1=(0, 9))
    assert set(refit.support.tolist()) <= set(fit.support.tolist()) | {0, 9}
    assert {0, 9} <= set(refit.support.tolist())


def test_separation_triggers_ridge_fallback():
    x = np.linspace(-1, 1, 40)
    B = np.column_stack([np.ones(40), x])
    y = (x > 0).astype(float)
    fit = fit_logit_lasso(B, y, 1e8)
    refit = post_lasso_refit(fit, B, y, S1=(0, 1))
    assert refit.ridge_fallback
    assert np.all(np.isfinite(refit.beta))
    _, ok = logistic_mle(B, y)
    assert not ok


# -- grid and predictions --------------------------------------------------------

def test_grid_count_and_forced_set(dgp1_small):
    basis = build_basis(dgp1_small)
    fits = fit_q_grid(dgp1_small, basis)
    assert fits.q_grid.size == 41
    np.testing.assert_allclose(fits.tau_grid, default_grid_taus())
    S1 = default_forced_set(basis)
    assert S1 == (0, 1, 11, 21)
    for f in fits.fits:
        assert set(S1) <= set(f.support.tolist())
        assert f.post_lasso
    restored = QGridFits.from_dict(json.loads(json.dumps(fits.to_dict())))
    np.testing.assert_array_equal(restored.coef_matrix, fits.coef_matrix)


def test_constant_outcome_grid_error():
    X = np.random.default_rng(0).standard_normal((30, 2))
    ds = Dataset(np.ones(30), X)
    with pytest.warns(UserWarning), pytest.raises(DegenerateOutcomeError):
        fit_q_grid(ds, build_basis(ds))


def test_grid_threads_identical(dgp1_small):
    basis = build_basis(dgp1_small)
    a = fit_q_grid(dgp1_small, basis, threads=1)
    b = fit_q_grid(dgp1_small, basis, threads=3)
    np.testing.assert_array_equal(a.coef_matrix, b.coef_matrix)


def _single_fit_grid(beta, qs=(0.0,)):
    fits = tuple(LogitLassoFit(q=q, beta=np.asarray(b, float), lam=0.0, loadings=np.zeros(len(b)))
                 for q, b in zip(qs, beta))
    return QGridFits(np.asarray(qs), np.linspace(0.3, 0.7, len(qs)), fits)


def _raw_basis(p=1):
    from uqpe.data import BasisExpansion
    return BasisExpansion(np.array([-1, 0]), np.array([0, 1]), np.ones(2), p)


def test_prediction_examples():
    basis = _raw_basis()
    assert predict_m0(_single_fit_grid([[0.0, 0.0]]), basis, [1.3], 0.0) == 0.5
    icpt = np.log(0.3 / 0.7)
    assert predict_m0(_single_fit_grid([[icpt, 0.0]]), basis, [2.0], 0.0) == pytest.approx(0.3)
    assert predict_m1(_single_fit_grid([[0.0, 1.0]]), basis, [0.0], 0.0) == 0.25
    assert predict_m1(_single_fit_grid([[0.4, 0.0]]), basis, [0.7], 0.0) == 0.0


def test_nearest_grid_ties_to_lower():
    grid = _single_fit_grid([[0.0, 0.0], [1.0, 0.0]], qs=(0.0, 1.0))
    assert grid.index(0.5) == 0
    assert grid.index(0.5000001) == 1
    assert nearest_grid_index([0.0, 1.0, 2.0], 1.5) == 1
    with pytest.raises(ExtrapolationError):
        grid.index(2.5)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1))
def test_m1_is_derivative_of_m0(x1, b0, b1, b2):
    from uqpe.data import BasisExpansion
    basis = BasisExpansion(np.array([-1, 0, 1, 0]), np.array([0, 1, 1, 2]),
                           np.array([1.0, 1.5, 1.0, 2.0]), 2)
    grid = _single_fit_grid([[b0, b1, 0.3, b2]])
    x = np.array([x1, 0.4])
    h = 1e-5
    fd = (predict_m0(grid, basis, x + [h, 0], 0.0) - predict_m0(grid, basis, x - [h, 0], 0.0)) / (2 * h)
    m1 = predict_m1(grid, basis, x, 0.0)
    assert fd == pytest.approx(m1, rel=1e-6, abs=1e-9)
