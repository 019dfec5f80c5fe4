"""Weighted-l1 logistic regression for the conditional distribution function.

For a threshold ``q`` the model ``P(Y <= q | X = x) = Lambda(b(x)'beta_q)``
is fitted by minimizing

    -(1/N) sum_i loglik_i(beta) + (lambda/N) sum_j psi_j |beta_j|

with data-driven penalty loadings ``psi`` refined over ``K`` rounds, then
refitted without penalty on the selected support plus a forced set ``S1``.
Repeating this over a grid of thresholds gives ``m0(x, q)`` and its
derivative ``m1(x, q)`` with respect to the treatment coordinate.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit, ndtri

from .data import BasisExpansion, Dataset
from .density import empirical_quantile
from .errors import DegenerateOutcomeError, ExtrapolationError

log = logging.getLogger(__name__)

SAT_EPS = 1e-12
CD_TOL = 1e-7
CD_MAX_SWEEPS = 1000
MIN_SIDE_COUNT = 5


def lambda_logit(n: int, p_b: int) -> float:
    """Penalty level ``1.1 * Phi^-1(1 - (0.1/log N)/max(p_b, N)) * sqrt(N)``."""
    if n < 3 or p_b < 1:
        raise ValueError("lambda_logit needs N >= 3 and p_b >= 1")
    gamma = (0.1 / math.log(n)) / max(p_b, n)
    return 1.1 * float(ndtri(1.0 - gamma)) * math.sqrt(n)


def logistic_loss(B, y, beta) -> float:
    """Mean negative log-likelihood with saturation guard."""
    p = np.clip(expit(B @ beta), SAT_EPS, 1.0 - SAT_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def penalized_objective(B, y, beta, lam, loadings) -> float:
    n = B.shape[0]
    return logistic_loss(B, y, beta) + lam / n * float(np.sum(loadings * np.abs(beta)))


@numba.njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _sweep(B, y, beta, z, prob, pen, curv, active_only):
    n, m = B.shape
    max_delta = 0.0
    for j in range(m):
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        g = 0.0
        for i in range(n):
            g -= B[i, j] * (y[i] - prob[i])
        g /= n
        u = curv[j] * bj - g
        if u > pen[j]:
            new = (u - pen[j]) / curv[j]
        elif u < -pen[j]:
            new = (u + pen[j]) / curv[j]
        else:
            new = 0.0
        d = new - bj
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                z[i] += d * B[i, j]
                prob[i] = _sigmoid(z[i])
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@numba.njit(cache=True, nogil=True)
def _cd_logit(B, y, beta, pen, tol, max_sweeps):
    """Cyclic coordinate descent with the 1/4 curvature majorizer.

    Full sweeps alternate with sweeps over the current support; only full
    sweeps count toward ``max_sweeps`` and convergence is declared when a
    full sweep moves no coordinate by ``tol`` or more.
    """
    n, m = B.shape
    curv = np.empty(m)
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += B[i, j] * B[i, j]
        curv[j] = max(s / (4.0 * n), 1e-300)
    z = np.zeros(n)
    for j in range(m):
        if beta[j] != 0.0:
            for i in range(n):
                z[i] += beta[j] * B[i, j]
    prob = np.empty(n)
    for i in range(n):
        prob[i] = _sigmoid(z[i])
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(B, y, beta, z, prob, pen, curv, False)
        sweeps += 1
        if delta < tol:
            return sweeps, True
        for _ in range(10 * max_sweeps):
            if _sweep(B, y, beta, z, prob, pen, curv, True) < tol:
                break
    return sweeps, False


def _loadings(B, y, resid_sq, intercept):
    psi = np.sqrt(np.mean(resid_sq[:, None] * B * B, axis=0))
    psi[intercept] = 0.0
    return psi


@dataclass(frozen=True)
class LogitLassoFit:
    q: float
    beta: np.ndarray
    lam: float
    loadings: np.ndarray
    post_lasso: bool = False
    iterations_used: int = 0
    converged: bool = True
    lasso_support: tuple[int, ...] = ()
    ridge_fallback: bool = False
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "support", np.flatnonzero(beta))

    def to_dict(self) -> dict:
        nz = self.support
        return {
            "q": self.q,
            "lambda": self.lam,
            "dimension": int(self.beta.size),
            "coef_index": nz.tolist(),
            "coef_value": self.beta[nz].tolist(),
            "loadings": np.asarray(self.loadings).tolist(),
            "post_lasso": self.post_lasso,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "lasso_support": list(self.lasso_support),
            "ridge_fallback": self.ridge_fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LogitLassoFit:
        beta = np.zeros(int(d["dimension"]))
        beta[np.asarray(d["coef_index"], dtype=np.int64)] = d["coef_value"]
        return cls(
            q=float(d["q"]),
            beta=beta,
            lam=float(d["lambda"]),
            loadings=np.asarray(d["loadings"], dtype=float),
            post_lasso=bool(d["post_lasso"]),
            iterations_used=int(d["iterations_used"]),
            converged=bool(d["converged"]),
            lasso_support=tuple(d.get("lasso_support", ())),
            ridge_fallback=bool(d.get("ridge_fallback", False)),
        )


def _check_indicator(y):
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    if y.min() == y.max():
        raise DegenerateOutcomeError("indicator is constant; logistic fit is undefined")
    return y


def fit_logit_lasso(
    B, y_ind, lam: float, K: int = 2, *, q: float = math.nan, intercept: int = 0,
    tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS, beta_init=None,
) -> LogitLassoFit:
    """Lasso logit with iterated penalty loadings.

    Loadings start at ``sqrt(mean(y * b_j^2))``; each of the ``K`` rounds
    solves the penalized problem and recomputes the loadings from the
    squared residuals. The returned fit solves the problem under the final
    loadings. Column ``intercept`` is left unpenalized (pass ``None`` to
    penalize every column). Non-convergence is reported through
    ``converged`` rather than raised.
    """
    B = np.asfortranarray(B, dtype=float)
    y = _check_indicator(y_ind)
    m = B.shape[1]
    icpt = [] if intercept is None else [intercept]
    beta = np.zeros(m) if beta_init is None else np.array(beta_init, dtype=float)
    if beta_init is None and intercept is not None:
        ybar = y.mean()
        beta[intercept] = math.log(ybar / (1.0 - ybar))
    psi = _loadings(B, y, y, icpt)
    converged = True
    total = 0
    for k in range(K + 1):
        pen = lam / B.shape[0] * psi
        sweeps, ok = _cd_logit(B, y, beta, pen, tol, max_sweeps)
        total += sweeps
        converged = converged and ok
        if k == K:
            break
        resid = y - expit(B @ beta)
        psi = _loadings(B, y, resid * resid, icpt)
    if not converged:
        log.warning("logit lasso at q=%s did not converge within %d sweeps", q, max_sweeps)
    return LogitLassoFit(
        q=float(q), beta=beta, lam=float(lam), loadings=psi, iterations_used=total,
        converged=converged, lasso_support=tuple(np.flatnonzero(beta).tolist()),
    )


def logistic_mle(B, y, ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-10):
    """Newton-Raphson for the (optionally ridge-stabilized) logit MLE.

    Returns ``(beta, converged)``. Under (quasi-)separation Newton keeps
    taking steps of non-vanishing size while the coefficients grow, so a fit
    counts as converged only if the step falls below ``tol`` with all
    coefficients finite and below ``1e4`` in magnitude.
    """
    B = np.asarray(B, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = B.shape
    beta = np.zeros(m)

    def objective(b):
        # trial points of a diverging fit may overflow; treat them as rejected
        with np.errstate(over="ignore", invalid="ignore"):
            val = logistic_loss(B, y, b) + 0.5 * ridge * float(b @ b)
        return val if math.isfinite(val) else math.inf

    f = objective(beta)
    for _ in range(max_iter):
        prob = expit(B @ beta)
        grad = B.T @ (y - prob) / n - ridge * beta
        hess = (B * (prob * (1.0 - prob))[:, None]).T @ B / n + ridge * np.eye(m)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            f_new = objective(cand)
            if f_new <= f + 1e-14 * max(1.0, abs(f)) or t < 1e-10:
                break
            t *= 0.5
        beta, f = cand, f_new
        if not np.all(np.isfinite(beta)):
            return beta, False
        if np.max(np.abs(t * step)) < tol:
            return beta, bool(np.max(np.abs(beta)) < 1e4)
    return beta, False


def post_lasso_refit(fit: LogitLassoFit, B, y_ind, S1=()) -> LogitLassoFit:
    """Unpenalized logit MLE on ``support(fit) | S1``.

    Divergent refits (separation) are redone with a ``1e-6`` ridge term and
    flagged through ``ridge_fallback``.
    """
    B = np.asarray(B, dtype=float)
    y = _check_indicator(y_ind)
    keep = sorted(set(fit.support.tolist()) | {int(j) for j in S1})
    beta = np.zeros(B.shape[1])
    fallback = False
    if keep:
        sub, ok = logistic_mle(B[:, keep], y)
        if not ok:
            sub, _ = logistic_mle(B[:, keep], y, ridge=1e-6)
            fallback = True
        beta[keep] = sub
    return LogitLassoFit(
        q=fit.q, beta=beta, lam=fit.lam, loadings=fit.loadings, post_lasso=True,
        iterations_used=fit.iterations_used, converged=fit.converged,
        lasso_support=fit.lasso_support, ridge_fallback=fallback,
    )


def default_forced_set(basis: BasisExpansion) -> tuple[int, ...]:
    """Intercept plus every power of the treatment."""
    icpt = np.flatnonzero(basis.variables < 0).tolist()
    return tuple(icpt + basis.treatment_terms.tolist())


def default_grid_taus(n_points: int = 41, lo: float = 0.15, hi: float = 0.85) -> np.ndarray:
    return np.linspace(lo, hi, n_points)


def nearest_grid_index(q_grid, q):
    """Index of the nearest grid point; exact midpoints go to the lower one."""
    q_grid = np.asarray(q_grid)
    q_arr = np.asarray(q, dtype=float)
    hi = np.clip(np.searchsorted(q_grid, q_arr, side="left"), 1, q_grid.size - 1)
    lo = hi - 1
    if q_grid.size == 1:
        return np.zeros_like(hi) if q_arr.ndim else 0
    pick = np.where(q_arr - q_grid[lo] <= q_grid[hi] - q_arr, lo, hi)
    return int(pick) if q_arr.ndim == 0 else pick


@dataclass(frozen=True)
class QGridFits:
    """Post-lasso fits over an increasing grid of thresholds."""

    q_grid: np.ndarray
    tau_grid: np.ndarray
    fits: tuple[LogitLassoFit, ...]
    dropped_taus: tuple[float, ...] = ()

    def __post_init__(self):
        q = np.asarray(self.q_grid, dtype=float)
        if q.size == 0 or np.any(np.diff(q) <= 0):
            raise ValueError("q_grid must be non-empty and strictly increasing")
        if len(self.fits) != q.size:
            raise ValueError("one fit per grid point is required")
        object.__setattr__(self, "q_grid", q)
        object.__setattr__(self, "tau_grid", np.asarray(self.tau_grid, dtype=float))

    @property
    def coef_matrix(self) -> np.ndarray:
        """Coefficients as a p_b x G matrix."""
        return np.column_stack([f.beta for f in self.fits])

    @property
    def tolerance(self) -> float:
        return float(np.max(np.diff(self.q_grid))) if self.q_grid.size > 1 else 0.0

    def index(self, q, *, clamp: bool = False):
        q_arr = np.asarray(q, dtype=float)
        tol = self.tolerance
        if not clamp and (
            np.any(q_arr < self.q_grid[0] - tol) or np.any(q_arr > self.q_grid[-1] + tol)
        ):
            raise ExtrapolationError(
                f"q outside fitted grid [{self.q_grid[0]:.6g}, {self.q_grid[-1]:.6g}]"
            )
        return nearest_grid_index(self.q_grid, q_arr)

    def to_dict(self) -> dict:
        return {
            "q_grid": self.q_grid.tolist(),
            "tau_grid": self.tau_grid.tolist(),
            "dropped_taus": list(self.dropped_taus),
            "fits": [f.to_dict() for f in self.fits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> QGridFits:
        return cls(
            q_grid=np.asarray(d["q_grid"]),
            tau_grid=np.asarray(d["tau_grid"]),
            fits=tuple(LogitLassoFit.from_dict(f) for f in d["fits"]),
            dropped_taus=tuple(d.get("dropped_taus", ())),
        )


def fit_q_grid(
    dataset: Dataset, basis: BasisExpansion, tau_grid=None, K: int = 2, S1=None, *,
    B=None, threads: int = 1, penalized: bool = True,
) -> QGridFits:
    """Fit ``m0(., q)`` at the empirical quantiles of ``Y`` over ``tau_grid``.

    Thresholds with fewer than five observations on either side, and
    repeated thresholds (ties in ``Y``), are dropped with a warning. With
    ``penalized=False`` each grid point is a plain logit MLE on the whole
    dictionary (used by the RIF-Logit baseline).
    """
    tau_grid = default_grid_taus() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0) or np.any(tau_grid >= 1) or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau_grid must be strictly increasing inside (0, 1)")
    Y = dataset.outcome
    if B is None:
        B = basis.matrix(dataset.covariates)
    B = np.asfortranarray(B)
    S1 = default_forced_set(basis) if S1 is None else tuple(S1)
    lam = lambda_logit(dataset.n, B.shape[1])

    kept_tau, kept_q, dropped = [], [], []
    for tau in tau_grid:
        q = empirical_quantile(Y, tau)
        below = int(np.sum(Y <= q))
        if (kept_q and q <= kept_q[-1]) or below < MIN_SIDE_COUNT or Y.size - below < MIN_SIDE_COUNT:
            dropped.append(float(tau))
            continue
        kept_tau.append(float(tau))
        kept_q.append(q)
    if dropped:
        warnings.warn(f"dropped {len(dropped)} degenerate or duplicate grid points", stacklevel=2)
    if not kept_q:
        raise DegenerateOutcomeError("every grid point has a degenerate indicator")

    def one(q):
        y = (Y <= q).astype(float)
        if not penalized:
            beta, ok = logistic_mle(B, y, max_iter=50)
            m = B.shape[1]
            return LogitLassoFit(q=q, beta=beta, lam=0.0, loadings=np.zeros(m),
                                 post_lasso=True, converged=ok)
        fit = fit_logit_lasso(B, y, lam, K, q=q)
        return post_lasso_refit(fit, B, y, S1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = tuple(pool.map(one, kept_q))
    else:
        fits = tuple(one(q) for q in kept_q)
    return QGridFits(np.asarray(kept_q), np.asarray(kept_tau), fits, tuple(dropped))


def _rows(x, basis):
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1) if x.ndim == 1 else x


def logistic_density(z):
    """``Lambda(z)(1 - Lambda(z))`` without the cancellation in ``1 - Lambda`` for large ``z``."""
    return expit(z) * expit(-z)


def predict_m0(fits: QGridFits, basis: BasisExpansion, x, q):
    """``Lambda(b(x)'beta_q)`` with ``beta_q`` from the nearest grid point."""
    beta = fits.fits[fits.index(q)].beta
    out = expit(basis.matrix(_rows(x, basis)) @ beta)
    return float(out[0]) if np.ndim(x) == 1 else out


def predict_m1(fits: QGridFits, basis: BasisExpansion, x, q):
    """Derivative of ``predict_m0`` with respect to the treatment coordinate."""
    beta = fits.fits[fits.index(q)].beta
    X = _rows(x, basis)
    out = logistic_density(basis.matrix(X) @ beta) * (basis.derivative_matrix(X) @ beta)
    return float(out[0]) if np.ndim(x) == 1 else out


def grid_predictions(fits: QGridFits, B, dB) -> tuple[np.ndarray, np.ndarray]:
    """``m0`` and ``m1`` for every row of the design at every grid point (N x G)."""
    coef = fits.coef_matrix
    z = B @ coef
    return expit(z), logistic_density(z) * (dB @ coef)
