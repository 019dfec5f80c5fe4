"""Reference minimizers used as independent test oracles.

They share nothing with the package solvers: plain accelerated proximal
gradient (FISTA) for the l1 problems, scipy's trust-region Newton for the
unpenalized logit.
"""

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit


def logit_nll(B, y, beta):
    z = B @ beta
    return float(-np.mean(y * log_expit(z) + (1.0 - y) * log_expit(-z)))


def logit_mle_oracle(B, y):
    n = B.shape[0]

    def grad(b):
        return -B.T @ (y - expit(B @ b)) / n

    def hess(b):
        p = expit(B @ b)
        return (B * (p * (1 - p))[:, None]).T @ B / n

    res = minimize(lambda b: logit_nll(B, y, b), np.zeros(B.shape[1]), jac=grad, hess=hess,
                   method="trust-exact", options={"gtol": 1e-13, "maxiter": 500})
    return res.x


def soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def fista(f, grad, prox, x0, L, iters, gtol=1e-9):
    """FISTA with function-value restart; ``f`` is the full composite objective.

    Stops once the composite gradient mapping ``L * (y - x_new)`` is below
    ``gtol`` in sup norm, or when a plain proximal step from a restart no
    longer decreases ``f`` (rounding floor).
    """
    x = y = x0.copy()
    t = 1.0
    fx = f(x)
    restarted = False
    for _ in range(iters):
        x_new = prox(y - grad(y) / L, 1.0 / L)
        if L * np.max(np.abs(x_new - y)) < gtol:
            return x_new if f(x_new) <= fx else x
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        f_new = f(x_new)
        if f_new > fx:  # restart momentum
            if restarted:
                return x
            y, t, restarted = x.copy(), 1.0, True
            continue
        restarted = False
        y = x_new + (t - 1.0) / t_new * (x_new - x)
        x, t, fx = x_new, t_new, f_new
    return x


def lasso_logit_oracle(B, y, pen, iters=40000):
    """argmin mean logistic loss + sum pen_j |beta_j| by FISTA."""
    n = B.shape[0]
    L = np.linalg.eigvalsh(B.T @ B / n).max() / 4.0

    def f(b):
        return logit_nll(B, y, b) + float(np.sum(pen * np.abs(b)))

    def grad(b):
        return -B.T @ (y - expit(B @ b)) / n

    def prox(v, s):
        return soft(v, s * pen)

    x = fista(f, grad, prox, np.zeros(B.shape[1]), L, iters)
    return x


def riesz_oracle(G, M, lam, iters=40000):
    """argmin -2 M'rho + rho'G rho + lam |rho|_1 by FISTA."""
    L = 2.0 * np.linalg.eigvalsh(G).max()

    def f(r):
        return float(-2 * M @ r + r @ G @ r + lam * np.sum(np.abs(r)))

    def grad(r):
        return -2 * M + 2 * G @ r

    def prox(v, s):
        return soft(v, s * lam)

    return fista(f, grad, prox, np.zeros(M.size), L, iters)
