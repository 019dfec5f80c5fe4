"""Empirical quantiles, Epanechnikov kernel density and the bootstrap quantile."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeightsError, ZeroBandwidthError


@dataclass(frozen=True)
class KernelSpec:
    name: str = "epanechnikov"
    support_radius: float = 1.0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


EPANECHNIKOV = KernelSpec()

# ranks within this distance of an integer are treated as that integer
RANK_TOL = 1e-9


def order_statistic_index(n: int, tau: float) -> int:
    """0-based index of the ceil(n*tau)-th order statistic."""
    k = math.ceil(n * tau - RANK_TOL)
    return min(max(k, 1), n) - 1


def empirical_quantile(Y, tau: float) -> float:
    """Type-1 quantile: the ceil(N*tau)-th order statistic of ``Y``."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return float(np.sort(Y)[order_statistic_index(Y.size, tau)])


def type1_quantile(values, prob: float, axis=None):
    """Type-1 quantile used for every bootstrap summary in the package."""
    values = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = values.size if axis is None else values.shape[axis]
    idx = order_statistic_index(n, prob)
    if axis is None:
        return float(values.reshape(-1)[idx])
    return np.take(values, idx, axis=axis)


def bandwidth_rot(Y) -> float:
    """Under-smoothed rule of thumb ``1.06 * sd(Y) * N**(-1/5 - 0.01)``."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size < 2:
        raise ZeroBandwidthError("bandwidth needs at least two observations")
    sd = float(np.std(Y, ddof=1))
    if not sd > 0.0:
        raise ZeroBandwidthError("outcome is constant; bandwidth would be zero")
    return 1.06 * sd * Y.size ** (-0.21)


def kde(Y, y, h1: float, kernel: KernelSpec = EPANECHNIKOV):
    """Kernel density estimate of ``Y`` at ``y`` (scalar or array)."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    y_arr = np.asarray(y, dtype=float)
    u = (Y[None, :] - y_arr.reshape(-1, 1)) / h1
    out = kernel(u).mean(axis=1) / h1
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def weighted_kde(Y, weights, y, h1: float, kernel: KernelSpec = EPANECHNIKOV) -> float:
    """Kernel density with observation weights normalized by their sum.

    Weights may be negative (multiplier bootstrap), so the result can be
    negative too; callers decide what to do with it.
    """
    Y = np.asarray(Y, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    total = w.sum()
    if not abs(total) > Y.size * 1e-9:
        raise DegenerateWeightsError(f"weight sum {total!r} is numerically zero")
    return float(np.sum(w * kernel((Y - y) / h1)) / (h1 * total))


def bootstrap_rank(Y, tau: float, q_hat: float, eta) -> tuple[int, bool]:
    """1-based rank of the gradient-bootstrap quantile.

    With ``s = N*tau + sum eta_i (tau - 1{Y_i <= q_hat})`` every order
    statistic with rank in ``[s, s + 1]`` minimizes the perturbed check loss.
    This returns ``ceil(s)``, which equals ``floor(1 + s)`` unless ``s`` is an
    integer; in that tie the lower rank is kept so that zero multipliers give
    back the type-1 sample quantile. The rank is clamped to ``[1, N]``; the
    second return value reports whether clamping happened.
    """
    Y = np.asarray(Y, dtype=float).reshape(-1)
    eta = np.asarray(eta, dtype=float).reshape(-1)
    n = Y.size
    shift = float(np.sum(eta * (tau - (Y <= q_hat))))
    r = math.ceil(n * tau + shift - RANK_TOL)
    clamped = min(max(r, 1), n)
    return clamped, clamped != r


def bootstrap_quantile(Y, tau: float, q_hat: float, eta) -> float:
    """Gradient-bootstrap quantile: the r*-th order statistic of ``Y``."""
    r, _ = bootstrap_rank(Y, tau, q_hat, eta)
    return float(np.sort(np.asarray(Y, dtype=float).reshape(-1))[r - 1])
