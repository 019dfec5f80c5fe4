import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uqpe.density import (
    EPANECHNIKOV, bandwidth_rot, bootstrap_quantile, bootstrap_rank, empirical_quantile, kde,
    type1_quantile, weighted_kde,
)
from uqpe.errors import DegenerateWeightsError, ZeroBandwidthError

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_empirical_quantile_examples():
    Y = [5.0, 3.0, 1.0, 4.0, 2.0]
    assert empirical_quantile(Y, 0.5) == 3.0
    assert empirical_quantile(Y, 0.2) == 1.0
    assert empirical_quantile(Y, 0.999) == 5.0
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)


def test_type1_quantile_knife_edge():
    # N*tau = 100 exactly (in exact arithmetic) -> 100th order statistic
    Y = np.arange(1.0, 501.0)
    assert empirical_quantile(Y, 0.2) == 100.0
    assert type1_quantile(Y, 0.2) == 100.0


@given(arrays(float, st.integers(1, 60), elements=finite),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_empirical_quantile_monotone(Y, t1, t2):
    lo, hi = sorted((t1, t2))
    assert empirical_quantile(Y, lo) <= empirical_quantile(Y, hi)


def test_bandwidth():
    # 1.06 * 1024**(-0.21) = 1.06 * 2**(-2.1)
    Y = np.random.default_rng(0).standard_normal(1024)
    Y = (Y - Y.mean()) / Y.std(ddof=1)
    assert bandwidth_rot(Y) == pytest.approx(0.24725374275725397, rel=1e-12)
    assert bandwidth_rot(3.0 * Y) == pytest.approx(3.0 * bandwidth_rot(Y), rel=1e-12)
    with pytest.raises(ZeroBandwidthError):
        bandwidth_rot(np.ones(10))


def test_kde_examples():
    assert kde([0.0], 0.0, 1.0) == 0.75
    assert kde([0.0, 1.0, 2.0], 10.0, 0.5) == 0.0
    Y = np.random.default_rng(1).standard_normal(200)
    grid = np.linspace(Y.min() - 1.0, Y.max() + 1.0, 20001)
    assert np.trapezoid(kde(Y, grid, 0.3), grid) == pytest.approx(1.0, abs=1e-3)


def test_kernel_integrates_to_one():
    u = np.linspace(-1.0, 1.0, 200001)
    assert np.trapezoid(EPANECHNIKOV(u), u) == pytest.approx(1.0, abs=1e-9)


@given(arrays(float, st.integers(1, 30), elements=finite), finite, finite,
       st.floats(0.05, 10.0))
def test_kde_nonnegative_and_translation(Y, y, c, h):
    assert kde(Y, y, h) >= 0.0
    assert kde(Y + c, y + c, h) == pytest.approx(kde(Y, y, h), abs=1e-9)


def test_weighted_kde_examples():
    Y = np.random.default_rng(2).standard_normal(50)
    assert weighted_kde(Y, np.ones(50), 0.1, 0.4) == pytest.approx(kde(Y, 0.1, 0.4), rel=1e-12)
    assert weighted_kde(Y, np.full(50, 2.0), 0.1, 0.4) == pytest.approx(kde(Y, 0.1, 0.4), rel=1e-12)
    assert weighted_kde([0.0], [-0.5], 0.0, 1.0) == pytest.approx(0.75)
    with pytest.raises(DegenerateWeightsError):
        weighted_kde(Y, np.zeros(50), 0.0, 1.0)


def test_bootstrap_quantile_examples():
    Y = np.array([4.0, 2.0, 5.0, 1.0, 3.0])
    assert bootstrap_quantile(Y, 0.5, 3.0, np.zeros(5)) == 3.0
    # a shift below -N*tau clamps at the first order statistic, above N(1-tau) at the last
    r, clamped = bootstrap_rank(Y, 0.5, 3.0, np.where(Y <= 3.0, 10.0, -10.0))
    assert (r, clamped) == (1, True)
    r, clamped = bootstrap_rank(Y, 0.5, 3.0, np.where(Y <= 3.0, -10.0, 10.0))
    assert (r, clamped) == (5, True)


@given(arrays(float, st.integers(1, 60), elements=finite), st.floats(0.01, 0.99))
def test_zero_multipliers_reproduce_sample_quantile(Y, tau):
    q = empirical_quantile(Y, tau)
    assert bootstrap_quantile(Y, tau, q, np.zeros(Y.size)) == q


def _brute_force(Y, tau, q_hat, eta):
    """Smallest order statistic minimizing the perturbed check loss."""
    s = math.fsum(eta * (tau - (Y <= q_hat)))
    Ys = np.sort(Y)
    best, best_val = None, math.inf
    scale = 1.0 + np.abs(Ys).max() * (Y.size + np.abs(eta).sum())
    for q in Ys:
        u = Y - q
        val = math.fsum(u * (tau - (u < 0))) - q * s
        if val < best_val - 1e-11 * scale:
            best, best_val = q, val
    return best


def test_bootstrap_quantile_matches_check_loss_oracle():
    rng = np.random.default_rng(20240607)
    for k in range(1000):
        n = int(rng.integers(1, 51))
        tau = float(rng.choice([0.2, 0.25, 0.5, 0.8])) if k % 4 == 0 else float(rng.uniform(0.02, 0.98))
        if k % 5 == 0:
            Y = rng.integers(0, 6, n).astype(float)  # ties in Y
        else:
            Y = rng.standard_normal(n)
        eta = np.zeros(n) if k % 10 == 0 else rng.standard_normal(n) * rng.choice([0.1, 1.0, 5.0])
        q_hat = empirical_quantile(Y, tau)
        assert bootstrap_quantile(Y, tau, q_hat, eta) == _brute_force(Y, tau, q_hat, eta), k
