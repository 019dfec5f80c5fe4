"""Multiplier bootstrap for theta(tau) and the UQPE.

Each replication draws ``eta_i ~ N(0, 1)`` from its own Philox stream keyed
by ``(seed, replication, attempt)``, perturbs the sample quantile through the
gradient-bootstrap rank, and reweights the score and the kernel density by
``1 + eta_i``. Nuisance fits are reused; only the grid row changes with the
perturbed quantile.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import ndtri

from .core import Nuisances, grid_lookup, nuisances_from_fits, weighted_density, weighted_score
from .density import RANK_TOL, type1_quantile
from .errors import DegenerateDrawsError, DegenerateWeightsError, DensityFloorError

NORMAL_IQR = float(ndtri(0.75) - ndtri(0.25))
MAX_REDRAWS = 5

OK, BAD_WEIGHTS, BAD_DENSITY = 0, 1, 2


def _seed_sequence(stream_seed):
    if isinstance(stream_seed, np.random.SeedSequence):
        return stream_seed
    if isinstance(stream_seed, (tuple, list)):
        head, *rest = stream_seed
        return np.random.SeedSequence(int(head), spawn_key=tuple(int(r) for r in rest))
    return np.random.SeedSequence(int(stream_seed))


def draw_multipliers(n: int, stream_seed) -> np.ndarray:
    """``n`` standard normal multipliers from a Philox stream.

    ``stream_seed`` is an int, a ``SeedSequence`` or a tuple
    ``(master_seed, *spawn_key)``.
    """
    if n < 1:
        raise ValueError("need at least one multiplier")
    gen = np.random.Generator(np.random.Philox(_seed_sequence(stream_seed)))
    return gen.standard_normal(n)


@numba.njit(cache=True, nogil=True)
def _replicate(Y, Y_sorted, eta, taus, q_hat, m0, m1, omega, q_grid, h1, f_floor,
               grid_tol, rows, theta_out, f_out, q_out):
    n = Y.shape[0]
    w = np.empty(n)
    total = 0.0
    for i in range(n):
        w[i] = 1.0 + eta[i]
        total += w[i]
    if not abs(total) > n * 1e-9:
        return BAD_WEIGHTS, 0, 0
    clamps = 0
    outside = 0
    for t in range(taus.shape[0]):
        tau = taus[t]
        shift = 0.0
        for i in range(n):
            ind = 1.0 if Y[i] <= q_hat[t] else 0.0
            shift += eta[i] * (tau - ind)
        r = math.ceil(n * tau + shift - RANK_TOL)
        if r < 1:
            r = 1
            clamps += 1
        elif r > n:
            r = n
            clamps += 1
        q = Y_sorted[r - 1]
        if rows[t] < 0 and (q < q_grid[0] - grid_tol or q > q_grid[q_grid.shape[0] - 1] + grid_tol):
            outside += 1
        g = rows[t] if rows[t] >= 0 else grid_lookup(q_grid, q)
        f = weighted_density(Y, w, q, h1)
        if not f > f_floor:
            return BAD_DENSITY, clamps, outside
        theta_out[t] = weighted_score(Y, w, m0, m1, omega, g, q)
        f_out[t] = f
        q_out[t] = q
    return OK, clamps, outside


@dataclass(frozen=True)
class BootstrapDraws:
    theta_star: np.ndarray  # B x T
    uqpe_star: np.ndarray
    q_star: np.ndarray
    f_star: np.ndarray
    redraws: int = 0
    clamps: int = 0
    grid_exits: int = 0


def _fixed_rows(nuis, q_hat) -> np.ndarray:
    """Grid rows held fixed per tau, or -1 where the row follows the bootstrap quantile."""
    if nuis.fixed_rows:
        return np.array([grid_lookup(nuis.q_grid, q) for q in q_hat], dtype=np.int64)
    return np.full(len(q_hat), -1, dtype=np.int64)


def _run_one(nuis, Y_sorted, taus, q_hat, seed, b, grid_tol, rows):
    T = taus.size
    theta, f, q = np.empty(T), np.empty(T), np.empty(T)
    for attempt in range(MAX_REDRAWS + 1):
        eta = draw_multipliers(nuis.Y.size, (seed, b, attempt))
        status, clamps, exits = _replicate(
            nuis.Y, Y_sorted, eta, taus, q_hat, nuis.m0, nuis.m1, nuis.omega, nuis.q_grid,
            nuis.h1, nuis.f_floor, grid_tol, rows, theta, f, q,
        )
        if status == OK:
            return theta, f, q, attempt, clamps, exits
    if status == BAD_WEIGHTS:
        raise DegenerateWeightsError(f"replication {b}: weight sum degenerate after {MAX_REDRAWS} redraws")
    raise DensityFloorError(f"replication {b}: bootstrap density below floor after {MAX_REDRAWS} redraws",
                            stage="bootstrap")


def run_bootstrap(nuis: Nuisances, taus, q_hat, B: int, seed: int, threads: int = 1) -> BootstrapDraws:
    """All ``B`` replications; the result does not depend on ``threads``."""
    taus = np.ascontiguousarray(taus, dtype=float)
    q_hat = np.ascontiguousarray(q_hat, dtype=float)
    Y_sorted = np.sort(nuis.Y)
    grid_tol = nuis.qfits.tolerance
    rows = _fixed_rows(nuis, q_hat)

    def work(b):
        return _run_one(nuis, Y_sorted, taus, q_hat, seed, b, grid_tol, rows)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(B)))
    else:
        results = [work(b) for b in range(B)]
    theta = np.array([r[0] for r in results])
    f = np.array([r[1] for r in results])
    q = np.array([r[2] for r in results])
    return BootstrapDraws(
        theta_star=theta, uqpe_star=-theta / f, q_star=q, f_star=f,
        redraws=int(sum(r[3] for r in results)), clamps=int(sum(r[4] for r in results)),
        grid_exits=int(sum(r[5] for r in results)),
    )


def bootstrap_replicate(dataset, qfits, riesz, bases, tau_set, eta, h1):
    """One replication for a given multiplier vector.

    Returns ``(theta_star, uqpe_star, q_star)`` arrays over ``tau_set``.
    """
    nuis = nuisances_from_fits(dataset, qfits, riesz, bases, h1)
    from .density import empirical_quantile

    taus = np.ascontiguousarray(tau_set, dtype=float)
    q_hat = np.array([empirical_quantile(nuis.Y, t) for t in taus])
    T = taus.size
    theta, f, q = np.empty(T), np.empty(T), np.empty(T)
    status, _, _ = _replicate(
        nuis.Y, np.sort(nuis.Y), np.ascontiguousarray(eta, dtype=float), taus, q_hat, nuis.m0,
        nuis.m1, nuis.omega, nuis.q_grid, nuis.h1, nuis.f_floor, nuis.qfits.tolerance,
        _fixed_rows(nuis, q_hat), theta, f, q,
    )
    if status == BAD_WEIGHTS:
        raise DegenerateWeightsError("multiplier weight sum is numerically zero")
    if status == BAD_DENSITY:
        raise DensityFloorError("bootstrap density below floor", stage="bootstrap")
    return theta, -theta / f, q


def se_iqr(draws) -> float:
    """Interquartile range of the draws rescaled to a normal standard deviation."""
    draws = np.asarray(draws, dtype=float).reshape(-1)
    if draws.size < 4:
        raise ValueError("se_iqr needs at least 4 draws")
    iqr = type1_quantile(draws, 0.75) - type1_quantile(draws, 0.25)
    if not iqr > 0.0:
        raise DegenerateDrawsError("bootstrap draws have zero interquartile range")
    return iqr / NORMAL_IQR


def _standardized(draws_star, point, sigma):
    draws_star = np.asarray(draws_star, dtype=float)
    if draws_star.ndim == 1:
        draws_star = draws_star.reshape(-1, 1)
    point = np.asarray(point, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = np.abs((draws_star - point) / sigma)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite standardized bootstrap draws")
    return z


def uniform_critical_value(draws_star, point, sigma, alpha: float) -> float:
    """(1 - alpha) quantile of ``max_tau |draw - point| / sigma``."""
    z = _standardized(draws_star, point, sigma)
    return type1_quantile(z.max(axis=1), 1.0 - alpha)


def pointwise_critical_values(draws_star, point, sigma, alpha: float) -> np.ndarray:
    z = _standardized(draws_star, point, sigma)
    return np.array([type1_quantile(z[:, t], 1.0 - alpha) for t in range(z.shape[1])])


def build_bands(point, sigma, c_uniform: float, c_pointwise) -> dict:
    """Symmetric bands ``point -/+ sigma * c`` (rows are taus, columns lo/hi)."""
    point = np.asarray(point, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    c_pw = np.broadcast_to(np.asarray(c_pointwise, dtype=float), point.shape)
    if c_uniform < 0 or np.any(c_pw < 0):
        raise ValueError("critical values must be nonnegative")
    uni = np.column_stack([point - sigma * c_uniform, point + sigma * c_uniform])
    pw = np.column_stack([point - sigma * c_pw, point + sigma * c_pw])
    return {"uniform": uni, "pointwise": pw}


def test_zero_uqpe(theta_band) -> str:
    """Reject ``UQPE = 0 on Upsilon`` when some theta band excludes zero."""
    band = np.asarray(theta_band, dtype=float).reshape(-1, 2)
    excluded = (band[:, 0] > 0.0) | (band[:, 1] < 0.0)
    return "reject" if bool(np.any(excluded)) else "fail_to_reject"


test_zero_uqpe.__test__ = False


def infer(nuis: Nuisances, taus, point: dict, config) -> dict:
    """Standard errors, critical values, bands and the zero test."""
    draws = run_bootstrap(nuis, taus, point["q_hat"], config.bootstrap_B, config.seed, config.threads)
    se_theta = np.array([se_iqr(draws.theta_star[:, t]) for t in range(len(taus))])
    se_uqpe = np.array([se_iqr(draws.uqpe_star[:, t]) for t in range(len(taus))])
    a = config.alpha
    c_theta = uniform_critical_value(draws.theta_star, point["theta"], se_theta, a)
    c_uqpe = uniform_critical_value(draws.uqpe_star, point["uqpe"], se_uqpe, a)
    c_theta_pw = pointwise_critical_values(draws.theta_star, point["theta"], se_theta, a)
    c_uqpe_pw = pointwise_critical_values(draws.uqpe_star, point["uqpe"], se_uqpe, a)
    theta_bands = build_bands(point["theta"], se_theta, c_theta, c_theta_pw)
    uqpe_bands = build_bands(point["uqpe"], se_uqpe, c_uqpe, c_uqpe_pw)
    return {
        "se_theta": se_theta,
        "se_uqpe": se_uqpe,
        "theta_pointwise": theta_bands["pointwise"],
        "theta_uniform": theta_bands["uniform"],
        "uqpe_pointwise": uqpe_bands["pointwise"],
        "uqpe_uniform": uqpe_bands["uniform"],
        "c_theta_uniform": c_theta,
        "c_uqpe_uniform": c_uqpe,
        "c_theta_pointwise": c_theta_pw,
        "c_uqpe_pointwise": c_uqpe_pw,
        "zero_test": test_zero_uqpe(theta_bands["uniform"]),
        "diagnostics": {
            "bootstrap_redraws": draws.redraws,
            "bootstrap_rank_clamps": draws.clamps,
            "bootstrap_grid_exits": draws.grid_exits,
        },
    }
