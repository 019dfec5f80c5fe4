"""Point estimation of theta(tau) and the UQPE, plus the two baselines.

``theta(tau)`` is estimated by the sample mean of the doubly robust score

    m1(X, q) - omega(X) * (1{Y <= q} - m0(X, q)),    q = q_hat_tau,

and ``UQPE(tau) = -theta(tau) / f_Y(q_tau)``. Setting ``omega = 0`` gives
the plug-in estimator without the correction term.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .data import BasisExpansion, Dataset, build_basis
from .density import bandwidth_rot, empirical_quantile, kde
from .errors import (
    BaselineInfeasibleError,
    ConfigError,
    DensityFloorError,
    ExtrapolationError,
)
from .lasso_logit import (
    QGridFits,
    default_forced_set,
    fit_q_grid,
    grid_predictions,
    lambda_logit,
    predict_m0,
    predict_m1,
)
from .riesz import RieszFit, compute_moments, fit_riesz, lambda_riesz, predict_omega

ESTIMATORS = ("debiased", "plugin_only", "rif_logit")


@dataclass(frozen=True)
class UqpeConfig:
    """Run configuration.

    ``tau_set`` holds the quantile levels that are estimated, reported, and
    over which the uniform band's sup and the zero test are taken. Setting
    ``upsilon_step`` adds the points of ``upsilon`` spaced that far apart to
    the evaluation grid (a finer sup weakly widens the uniform band).
    """

    tau_set: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    upsilon: tuple[float, float] = (0.2, 0.8)
    upsilon_step: float | None = None
    grid_taus: tuple[float, ...] | None = None
    grid_size: int = 41
    alpha: float = 0.05
    bootstrap_B: int = 1000
    seed: int = 0
    K_loadings: int = 2
    estimator: str = "debiased"
    degree: int = 3
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tau_set", tuple(float(t) for t in self.tau_set))
        object.__setattr__(self, "upsilon", tuple(float(u) for u in self.upsilon))
        if self.grid_taus is not None:
            object.__setattr__(self, "grid_taus", tuple(float(t) for t in self.grid_taus))
        lo, hi = self.upsilon
        if not 0.0 < lo <= hi < 1.0:
            raise ConfigError(f"upsilon must be a closed interval inside (0, 1), got {self.upsilon}")
        if not self.tau_set or any(not lo - 1e-12 <= t <= hi + 1e-12 for t in self.tau_set):
            raise ConfigError("every tau in tau_set must lie in upsilon")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.bootstrap_B < 2:
            raise ConfigError("bootstrap_B must be at least 2")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.K_loadings < 0 or self.grid_size < 1 or (
                self.upsilon_step is not None and self.upsilon_step <= 0):
            raise ConfigError("K_loadings >= 0, grid_size >= 1 and upsilon_step > 0 are required")

    @property
    def debias(self) -> bool:
        return self.estimator == "debiased"

    @property
    def evaluation_taus(self) -> np.ndarray:
        if self.upsilon_step is None:
            return np.unique(np.round(self.tau_set, 10))
        lo, hi = self.upsilon
        n = int(round((hi - lo) / self.upsilon_step))
        grid = np.round(lo + self.upsilon_step * np.arange(n + 1), 10)
        grid = grid[grid <= hi + 1e-12]
        return np.unique(np.round(np.concatenate([grid, self.tau_set]), 10))

    @property
    def q_grid_taus(self) -> np.ndarray:
        if self.grid_taus is not None:
            return np.asarray(self.grid_taus)
        lo, hi = self.upsilon
        return np.linspace(max(lo - 0.05, 0.01), min(hi + 0.05, 0.99), self.grid_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau_set"] = list(self.tau_set)
        d["upsilon"] = list(self.upsilon)
        d["grid_taus"] = None if self.grid_taus is None else list(self.grid_taus)
        return d


@dataclass(frozen=True)
class Nuisances:
    """Everything the score needs, evaluated once on the estimation sample."""

    Y: np.ndarray
    q_grid: np.ndarray
    m0: np.ndarray  # G x N
    m1: np.ndarray  # G x N
    omega: np.ndarray  # N
    h1: float
    f_floor: float
    qfits: QGridFits
    riesz: RieszFit | None
    basis_b: BasisExpansion
    basis_h: BasisExpansion | None
    diagnostics: dict = field(default_factory=dict)
    # fits sit exactly at the sample quantiles and stay there in the bootstrap
    fixed_rows: bool = False


def density_floor(Y) -> float:
    Y = np.asarray(Y)
    spread = float(Y.max() - Y.min())
    return 1e-4 / spread if spread > 0 else math.inf


def fit_nuisances(dataset: Dataset, config: UqpeConfig, *, debias: bool | None = None) -> Nuisances:
    """Fit the q-grid logits (and the Riesz representer when debiasing)."""
    debias = config.debias if debias is None else debias
    X, Y = dataset.covariates, dataset.outcome
    h1 = bandwidth_rot(Y)
    diag = {"h1": h1}
    if config.estimator == "rif_logit":
        # logits at the sample quantiles themselves, on the same dictionary, unpenalized
        basis_b = build_basis(dataset, config.degree)
        if basis_b.dimension >= dataset.n:
            raise BaselineInfeasibleError(
                f"RIF-Logit needs fewer regressors than observations, got {basis_b.dimension} "
                f"for N={dataset.n}")
        B = basis_b.matrix(X)
        qfits = fit_q_grid(dataset, basis_b, config.evaluation_taus, B=B, threads=config.threads,
                           penalized=False)
        diag["lambda_logit"] = 0.0
    else:
        basis_b = build_basis(dataset, config.degree)
        B = basis_b.matrix(X)
        qfits = fit_q_grid(dataset, basis_b, config.q_grid_taus, config.K_loadings,
                           default_forced_set(basis_b), B=B, threads=config.threads)
        diag["lambda_logit"] = lambda_logit(dataset.n, basis_b.dimension)
    diag["grid_points"] = int(qfits.q_grid.size)
    diag["grid_dropped"] = len(qfits.dropped_taus)
    diag["logit_converged"] = bool(all(f.converged for f in qfits.fits))
    diag["ridge_fallbacks"] = int(sum(f.ridge_fallback for f in qfits.fits))
    diag["lasso_support_sizes"] = [len(f.lasso_support) for f in qfits.fits]

    riesz, basis_h = None, None
    if debias:
        basis_h = build_basis(dataset, config.degree)
        X_h = basis_h.matrix(X)
        G, M = compute_moments(X_h, basis_h.derivative_matrix(X))
        lam_r = lambda_riesz(dataset.n, basis_h.dimension)
        riesz = fit_riesz(G, M, lam_r)
        diag["lambda_riesz"] = lam_r
        diag["riesz_converged"] = riesz.converged
        diag["riesz_support_size"] = int(riesz.support.size)
    return nuisances_from_fits(dataset, qfits, riesz, (basis_b, basis_h), h1, B=B, diagnostics=diag,
                               fixed_rows=config.estimator == "rif_logit")


def nuisances_from_fits(dataset: Dataset, qfits: QGridFits, riesz: RieszFit | None, bases,
                        h1: float | None = None, *, B=None, diagnostics=None,
                        fixed_rows: bool = False) -> Nuisances:
    """Evaluate fitted nuisances on the sample (``riesz=None`` means omega = 0)."""
    basis_b, basis_h = bases
    X, Y = dataset.covariates, dataset.outcome
    B = basis_b.matrix(X) if B is None else B
    m0, m1 = grid_predictions(qfits, B, basis_b.derivative_matrix(X))
    omega = np.zeros(dataset.n) if riesz is None else basis_h.matrix(X) @ riesz.rho
    return Nuisances(
        Y=Y, q_grid=qfits.q_grid, m0=np.ascontiguousarray(m0.T), m1=np.ascontiguousarray(m1.T),
        omega=np.ascontiguousarray(omega), h1=bandwidth_rot(Y) if h1 is None else float(h1),
        f_floor=density_floor(Y), qfits=qfits, riesz=riesz, basis_b=basis_b, basis_h=basis_h,
        diagnostics={} if diagnostics is None else diagnostics, fixed_rows=fixed_rows,
    )


@numba.njit(cache=True, nogil=True)
def grid_lookup(q_grid, q):
    """Nearest grid index with ties to the lower point (clamped at the ends)."""
    n = q_grid.shape[0]
    if q <= q_grid[0]:
        return 0
    if q >= q_grid[n - 1]:
        return n - 1
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if q_grid[mid] < q:
            lo = mid
        else:
            hi = mid
    if q - q_grid[lo] <= q_grid[hi] - q:
        return lo
    return hi


@numba.njit(cache=True, nogil=True)
def weighted_score(Y, w, m0, m1, omega, g, q):
    """Weighted mean of the doubly robust score at threshold ``q`` and grid row ``g``."""
    num = 0.0
    den = 0.0
    for i in range(Y.shape[0]):
        ind = 1.0 if Y[i] <= q else 0.0
        num += w[i] * (m1[g, i] - omega[i] * (ind - m0[g, i]))
        den += w[i]
    return num / den


@numba.njit(cache=True, nogil=True)
def weighted_density(Y, w, y, h1):
    num = 0.0
    den = 0.0
    for i in range(Y.shape[0]):
        u = (Y[i] - y) / h1
        if -1.0 <= u <= 1.0:
            num += w[i] * 0.75 * (1.0 - u * u)
        den += w[i]
    return num / (h1 * den)


def point_estimates(nuis: Nuisances, taus) -> dict:
    """theta, f and UQPE at the sample quantiles for every tau in ``taus``."""
    Y = nuis.Y
    w = np.ones(Y.size)
    q_hat = np.array([empirical_quantile(Y, t) for t in taus])
    tol = nuis.qfits.tolerance
    if np.any(q_hat < nuis.q_grid[0] - tol) or np.any(q_hat > nuis.q_grid[-1] + tol):
        raise ExtrapolationError("a sample quantile in tau_set lies outside the fitted q-grid")
    theta = np.array([
        weighted_score(Y, w, nuis.m0, nuis.m1, nuis.omega, grid_lookup(nuis.q_grid, q), q)
        for q in q_hat
    ])
    f_hat = np.array([weighted_density(Y, w, q, nuis.h1) for q in q_hat])
    if np.any(f_hat <= nuis.f_floor):
        bad = [float(t) for t, f in zip(taus, f_hat) if f <= nuis.f_floor]
        raise DensityFloorError(f"density estimate below floor at tau={bad}")
    return {"q_hat": q_hat, "theta": theta, "f_hat": f_hat, "uqpe": -theta / f_hat}


def estimate_theta(dataset: Dataset, qfits: QGridFits, riesz: RieszFit | None,
                   basis_b: BasisExpansion, basis_h: BasisExpansion | None, q: float) -> float:
    """Sample mean of the doubly robust score at threshold ``q``."""
    X, Y = dataset.covariates, dataset.outcome
    m0 = predict_m0(qfits, basis_b, X, q)
    m1 = predict_m1(qfits, basis_b, X, q)
    omega = np.zeros(dataset.n) if riesz is None else predict_omega(riesz, basis_h, X)
    return float(np.mean(m1 - omega * ((Y <= q) - m0)))


def estimate_theta_plugin_only(dataset: Dataset, qfits: QGridFits, basis_b: BasisExpansion,
                               q: float) -> float:
    """Mean of ``m1(X_i, q)``: theta without the correction term."""
    return float(np.mean(predict_m1(qfits, basis_b, dataset.covariates, q)))


def estimate_uqpe(theta_hat: float, f_hat: float, f_floor: float = 0.0) -> float:
    """``-theta / f`` with a density floor."""
    if not f_hat > f_floor or not f_hat > 0.0:
        raise DensityFloorError(f"density {f_hat!r} is not above the floor {f_floor!r}")
    return -theta_hat / f_hat


def rif_logit_baseline(dataset: Dataset, tau: float, h1: float | None = None,
                       degree: int = 3) -> float:
    """RIF-Logit UQPE: unpenalized logit of ``1{Y <= q_tau}`` on the dictionary ``b(x)``.

    The average of ``d/dx_1 Lambda(b(x)'beta)`` gives theta; the same KDE as
    the main estimator gives the density. Near-separated fits are not an
    error: the Newton iterations are capped and the (degenerate) estimate
    is returned, which is what makes the baseline break down as p grows.
    """
    from .lasso_logit import logistic_density, logistic_mle

    basis = build_basis(dataset, degree)
    if basis.dimension >= dataset.n:
        raise BaselineInfeasibleError(
            f"RIF-Logit needs fewer regressors than observations, got {basis.dimension} "
            f"for N={dataset.n}")
    Y, X = dataset.outcome, dataset.covariates
    q = empirical_quantile(Y, tau)
    B = basis.matrix(X)
    beta, _ = logistic_mle(B, (Y <= q).astype(float), max_iter=50)
    theta = float(np.mean(logistic_density(B @ beta) * (basis.derivative_matrix(X) @ beta)))
    h1 = bandwidth_rot(Y) if h1 is None else h1
    return estimate_uqpe(theta, kde(Y, q, h1), density_floor(Y))


@dataclass(frozen=True)
class UqpeEstimate:
    """Per-tau estimates and inference over the evaluation grid."""

    taus: np.ndarray
    reported: np.ndarray
    q_tau: np.ndarray
    theta_hat: np.ndarray
    f_hat: np.ndarray
    uqpe_hat: np.ndarray
    se_theta: np.ndarray
    se_uqpe: np.ndarray
    theta_pointwise: np.ndarray  # T x 2
    theta_uniform: np.ndarray
    uqpe_pointwise: np.ndarray
    uqpe_uniform: np.ndarray
    c_theta_uniform: float
    c_uqpe_uniform: float
    c_theta_pointwise: np.ndarray
    c_uqpe_pointwise: np.ndarray
    zero_test: str
    estimator: str
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for k, tau in enumerate(self.taus):
            out.append({
                "tau": float(tau),
                "reported": bool(self.reported[k]),
                "q_tau": float(self.q_tau[k]),
                "theta_hat": float(self.theta_hat[k]),
                "f_hat": float(self.f_hat[k]),
                "uqpe_hat": float(self.uqpe_hat[k]),
                "se_theta": float(self.se_theta[k]),
                "se_uqpe": float(self.se_uqpe[k]),
                "theta_pointwise": [float(v) for v in self.theta_pointwise[k]],
                "theta_uniform": [float(v) for v in self.theta_uniform[k]],
                "uqpe_pointwise": [float(v) for v in self.uqpe_pointwise[k]],
                "uqpe_uniform": [float(v) for v in self.uqpe_uniform[k]],
                "c_theta_pointwise": float(self.c_theta_pointwise[k]),
                "c_uqpe_pointwise": float(self.c_uqpe_pointwise[k]),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "alpha": self.alpha,
            "c_theta_uniform": float(self.c_theta_uniform),
            "c_uqpe_uniform": float(self.c_uqpe_uniform),
            "zero_test": self.zero_test,
            "taus": self.rows(),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def estimate_all(dataset: Dataset, config: UqpeConfig, *, nuisances: Nuisances | None = None
                 ) -> UqpeEstimate:
    """Fit nuisances, estimate on the evaluation grid and run the bootstrap."""
    from .bootstrap import infer

    nuis = fit_nuisances(dataset, config) if nuisances is None else nuisances
    taus = config.evaluation_taus
    point = point_estimates(nuis, taus)
    est = infer(nuis, taus, point, config)
    reported = np.isin(np.round(taus, 10), np.round(config.tau_set, 10))
    diag = dict(nuis.diagnostics)
    diag.update(est.pop("diagnostics"))
    return UqpeEstimate(
        taus=taus, reported=reported, q_tau=point["q_hat"], theta_hat=point["theta"],
        f_hat=point["f_hat"], uqpe_hat=point["uqpe"], estimator=config.estimator,
        alpha=config.alpha, diagnostics=diag, **est,
    )
