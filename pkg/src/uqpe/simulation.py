"""Partial-linear Gaussian designs and Monte Carlo coverage studies.

Design: ``X_-1 ~ N(0, Sigma)`` with ``Sigma[r, c] = 0.5**(2(|r-c|+1))``,
``X_1 | X_-1 ~ N(gamma'X_-1, 1)`` and ``Y | X ~ N(g(X_1) + alpha'X_-1, 1)``
with ``alpha = gamma``. Random numbers come from numpy's Philox generator
keyed by ``SeedSequence(seed, spawn_key=(replication, ...))``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from . import __version__
from .core import UqpeConfig, estimate_all, fit_nuisances, point_estimates
from .data import Dataset
from .errors import ConfigError, DegenerateDrawsError, StudyError, UqpeError

log = logging.getLogger(__name__)

SPARSITY_DECAY = {"i": (1, 0), "ii": (2, 2), "iii": (3, 4), "iv": (4, 6)}
RNG_ALGORITHM = f"numpy {np.__version__} Philox4x64 via SeedSequence"


@dataclass(frozen=True)
class DgpSpec:
    dgp_id: int = 1
    sparsity: str = "i"
    n: int = 500
    p: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.dgp_id not in (1, 2, 3):
            raise ConfigError(f"dgp_id must be 1, 2 or 3, got {self.dgp_id}")
        if self.sparsity not in SPARSITY_DECAY:
            raise ConfigError(f"sparsity must be one of i, ii, iii, iv, got {self.sparsity!r}")
        if self.p < 2 or self.n < 2:
            raise ConfigError("need p >= 2 and N >= 2")

    @property
    def label(self) -> str:
        return f"{self.dgp_id} ({self.sparsity})"


def coefficients(sparsity: str, p: int) -> np.ndarray:
    """``alpha_j = gamma_j`` for ``j = 2..p``.

    Design (i) decays as ``0.5**j``; designs (ii)-(iv) as
    ``0.5**((j + c) / k)`` with ``(k, c) = (2, 2), (3, 4), (4, 6)``.
    """
    k, c = SPARSITY_DECAY[sparsity]
    j = np.arange(2, p + 1, dtype=float)
    return 0.5 ** ((j + c) / k)


@lru_cache(maxsize=32)
def control_covariance(p: int) -> np.ndarray:
    idx = np.arange(p - 1)
    return 0.5 ** (2 * (np.abs(idx[:, None] - idx[None, :]) + 1))


@lru_cache(maxsize=32)
def _control_cholesky(p: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(control_covariance(p))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - Sigma is positive definite
        raise StudyError(f"covariance factorization failed for p={p}") from exc


def g_function(dgp_id: int, x):
    x = np.asarray(x, dtype=float)
    if dgp_id == 1:
        return x
    if dgp_id == 2:
        return x - 0.10 * x**2
    return x - 0.10 * x**2 + 0.01 * x**3


def g_derivative(dgp_id: int, x):
    x = np.asarray(x, dtype=float)
    if dgp_id == 1:
        return np.ones_like(x)
    if dgp_id == 2:
        return 1.0 - 0.20 * x
    return 1.0 - 0.20 * x + 0.03 * x**2


def _generator(*key) -> np.random.Generator:
    head, *rest = key
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(head), spawn_key=tuple(rest))))


def simulate_dataset(spec: DgpSpec, rep_seed: int = 0) -> Dataset:
    """One draw of size ``spec.n``; identical for identical ``(spec, rep_seed)``."""
    rng = _generator(spec.seed, rep_seed, 0)
    coef = coefficients(spec.sparsity, spec.p)
    X_rest = rng.standard_normal((spec.n, spec.p - 1)) @ _control_cholesky(spec.p).T
    index = X_rest @ coef
    x1 = index + rng.standard_normal(spec.n)
    y = g_function(spec.dgp_id, x1) + index + rng.standard_normal(spec.n)
    return Dataset(outcome=y, covariates=np.column_stack([x1, X_rest]), treatment_index=0)


def true_omega(spec: DgpSpec, X) -> np.ndarray:
    """``d/dx_1 log f(x_1 | x_-1) = -(x_1 - gamma'x_-1)`` for these designs."""
    X = np.asarray(X, dtype=float)
    return -(X[:, 0] - X[:, 1:] @ coefficients(spec.sparsity, spec.p))


def index_variance(spec: DgpSpec) -> float:
    coef = coefficients(spec.sparsity, spec.p)
    return float(coef @ control_covariance(spec.p) @ coef)


def true_uqpe_oracle(spec: DgpSpec, tau, N0: int = 10**6, *, seed: int = 20240601,
                     return_sd: bool = False):
    """Large-sample value of the UQPE for the Gaussian design.

    Because ``alpha = gamma`` the controls enter only through
    ``L = alpha'X_-1 ~ N(0, alpha' Sigma alpha)``, so ``(X_1, L)`` is drawn
    directly. With ``mu = g(X_1) + L`` the quantile solves
    ``mean(Phi(q - mu)) = tau`` and the UQPE is
    ``mean(phi(q - mu) g'(X_1)) / mean(phi(q - mu))``.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    rng = _generator(seed, spec.dgp_id, 1)
    L = math.sqrt(index_variance(spec)) * rng.standard_normal(N0)
    x1 = L + rng.standard_normal(N0)
    mu = g_function(spec.dgp_id, x1) + L
    gp = g_derivative(spec.dgp_id, x1)
    del L, x1
    values, sds = [], []
    for t in taus:
        q = float(np.mean(mu)) + math.sqrt(float(np.var(mu)) + 1.0) * float(ndtri(t))
        for _ in range(50):
            phi = np.exp(-0.5 * (q - mu) ** 2) / math.sqrt(2 * math.pi)
            step = (float(np.mean(ndtr(q - mu))) - t) / float(np.mean(phi))
            q -= step
            if abs(step) < 1e-12:
                break
        phi = np.exp(-0.5 * (q - mu) ** 2) / math.sqrt(2 * math.pi)
        num, den = float(np.mean(phi * gp)), float(np.mean(phi))
        ratio = num / den
        values.append(ratio)
        sds.append(float(np.std(phi * gp - ratio * phi)) / (den * math.sqrt(N0)))
    values, sds = np.array(values), np.array(sds)
    if np.ndim(tau) == 0:
        values, sds = values[0], sds[0]
    return (values, sds) if return_sd else values


@dataclass
class McMetrics:
    dgp_id: int
    sparsity: str
    n: int
    p: int
    estimator: str
    taus: list
    true_uqpe: list
    mean_estimate: list
    bias: list
    rmse: list
    pointwise_coverage: list
    uniform_coverage: float
    reps: int
    failures: int
    runtime: float
    degenerate: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def table_rows(self) -> list[dict]:
        return [
            {
                "DGP": f"{self.dgp_id} ({self.sparsity})", "N": self.n, "p": self.p,
                "tau": self.taus[k], "true": self.true_uqpe[k], "mean": self.mean_estimate[k],
                "bias": self.bias[k], "rmse": self.rmse[k],
                "pointwise": self.pointwise_coverage[k], "uniform": self.uniform_coverage,
            }
            for k in range(len(self.taus))
        ]


TABLE_COLUMNS = ("DGP", "N", "p", "tau", "true", "mean", "bias", "rmse", "pointwise", "uniform")


def write_metrics_csv(metrics, path) -> None:
    metrics = [metrics] if isinstance(metrics, McMetrics) else list(metrics)
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for m in metrics:
            for row in m.table_rows():
                writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})


def rep_bootstrap_seed(spec: DgpSpec, rep: int) -> int:
    return int(np.random.SeedSequence(spec.seed, spawn_key=(rep, 2)).generate_state(1)[0])


def run_replication(spec: DgpSpec, rep: int, config: UqpeConfig, estimators, truth) -> dict:
    """Estimate on replication ``rep`` for every estimator; share fits when possible."""
    dataset = simulate_dataset(spec, rep)
    cfg = replace(config, seed=rep_bootstrap_seed(spec, rep))
    taus = cfg.evaluation_taus
    out = {"rep": rep}
    shared = None
    if any(e in ("debiased", "plugin_only") for e in estimators):
        need_riesz = "debiased" in estimators
        shared = fit_nuisances(dataset, replace(cfg, estimator="debiased" if need_riesz else "plugin_only"))
    for est_name in estimators:
        try:
            c = replace(cfg, estimator=est_name)
            if est_name == "rif_logit":
                est = estimate_all(dataset, c)
            else:
                nuis = shared
                if est_name == "plugin_only" and nuis.riesz is not None:
                    nuis = replace(nuis, omega=np.zeros_like(nuis.omega), riesz=None, basis_h=None)
                est = estimate_all(dataset, c, nuisances=nuis)
        except DegenerateDrawsError:
            # the estimate exists but its bootstrap spread is exactly zero: the
            # band is the point itself and covers only if it hits the truth
            try:
                point = point_estimates(nuis if est_name != "rif_logit" else fit_nuisances(dataset, c),
                                        taus)
            except (UqpeError, np.linalg.LinAlgError, FloatingPointError) as exc:
                out[est_name] = {"error": f"{type(exc).__name__}: {exc}"}
                continue
            hit = (point["uqpe"] == truth).astype(int)
            out[est_name] = {
                "taus": taus.tolist(), "uqpe": point["uqpe"].tolist(),
                "theta": point["theta"].tolist(), "pointwise_cover": hit.tolist(),
                "uniform_cover": int(np.all(hit)), "zero_test": None, "degenerate_inference": True,
            }
            continue
        except (UqpeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            out[est_name] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        pw = (est.uqpe_pointwise[:, 0] <= truth) & (truth <= est.uqpe_pointwise[:, 1])
        uni = (est.uqpe_uniform[:, 0] <= truth) & (truth <= est.uqpe_uniform[:, 1])
        out[est_name] = {
            "taus": taus.tolist(),
            "uqpe": est.uqpe_hat.tolist(),
            "theta": est.theta_hat.tolist(),
            "pointwise_cover": pw.astype(int).tolist(),
            "uniform_cover": int(np.all(uni)),
            "zero_test": est.zero_test,
        }
    return out


def _replication_job(args):
    return run_replication(*args)


def summarize(records, spec: DgpSpec, estimator: str, config: UqpeConfig, truth, runtime=0.0,
              max_failure_rate: float = 0.05) -> McMetrics:
    ok = [r[estimator] for r in records if "error" not in r[estimator]]
    failures = len(records) - len(ok)
    if not ok or failures > max_failure_rate * len(records):
        raise StudyError(f"{failures} of {len(records)} replications failed for {estimator}")
    taus = config.evaluation_taus
    rep_mask = np.isin(np.round(taus, 10), np.round(config.tau_set, 10))
    est = np.array([r["uqpe"] for r in ok])[:, rep_mask]
    cover = np.array([r["pointwise_cover"] for r in ok])[:, rep_mask]
    true_rep = np.asarray(truth)[rep_mask]
    bias = est.mean(axis=0) - true_rep
    rmse = np.sqrt(np.mean((est - true_rep) ** 2, axis=0))
    return McMetrics(
        dgp_id=spec.dgp_id, sparsity=spec.sparsity, n=spec.n, p=spec.p, estimator=estimator,
        taus=taus[rep_mask].tolist(), true_uqpe=true_rep.tolist(),
        mean_estimate=est.mean(axis=0).tolist(), bias=bias.tolist(), rmse=rmse.tolist(),
        pointwise_coverage=cover.mean(axis=0).tolist(),
        uniform_coverage=float(np.mean([r["uniform_cover"] for r in ok])),
        reps=len(records), failures=failures, runtime=float(runtime),
        degenerate=sum(bool(r.get("degenerate_inference")) for r in ok),
    )


def _cache_key(spec, reps_unused, config, estimators, oracle_n) -> str:
    payload = json.dumps(
        {"spec": asdict(spec), "config": config.to_dict(), "estimators": list(estimators),
         "oracle_n": oracle_n, "version": __version__},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def run_mc_study(spec: DgpSpec, reps: int, config: UqpeConfig | None = None,
                 estimator_choice="debiased", *, oracle_n: int = 10**6, threads: int = 1,
                 cache_dir=None, progress=None):
    """Monte Carlo study over ``reps`` independent datasets.

    ``estimator_choice`` may be a single name or a sequence; estimators in a
    sequence are run on the same datasets and bootstrap multipliers and a
    dict of :class:`McMetrics` is returned. With ``cache_dir`` every finished
    replication is appended to a JSON-lines file so interrupted studies
    resume where they stopped.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    config = UqpeConfig() if config is None else config
    single = isinstance(estimator_choice, str)
    estimators = (estimator_choice,) if single else tuple(estimator_choice)
    truth = true_uqpe_oracle(spec, config.evaluation_taus, oracle_n)
    start = time.perf_counter()

    done = {}
    cache_file = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache_file = cache_dir / f"{_cache_key(spec, reps, config, estimators, oracle_n)}.jsonl"
        if cache_file.exists():
            for line in cache_file.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    done[rec["rep"]] = rec
    todo = [r for r in range(reps) if r not in done]
    jobs = [(spec, r, config, estimators, truth) for r in todo]

    def record(rec):
        done[rec["rep"]] = rec
        if cache_file is not None:
            with cache_file.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
        if progress is not None:
            progress(len(done), reps)

    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(_replication_job, jobs):
                record(rec)
    else:
        for job in jobs:
            record(_replication_job(job))
    records = [done[r] for r in range(reps)]
    runtime = time.perf_counter() - start
    metrics = {e: summarize(records, spec, e, config, truth, runtime) for e in estimators}
    return metrics[estimators[0]] if single else metrics
