"""Brute-force reference computations.

These deliberately avoid the code paths they are used to check: densities
come from ``scipy.stats``, sums are written as explicit loops, and the
constrained least-squares reference solves the full block system instead of
the decoupled one.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError, TooLargeError
from .mixture import CategoricalMixtureParams, GaussianMixtureParams, HybridMixtureParams


@dataclass(frozen=True)
class OracleReport:
    name: str
    value: float
    se: float | None
    inputs_hash: str

    def __post_init__(self):
        if self.se is not None and not self.se > 0:
            raise InvalidArgumentError("stochastic oracles must report a positive standard error")

    def to_json(self) -> dict:
        return {"oracle": self.name, "value": self.value, "se": self.se, "inputs_hash": self.inputs_hash}


def inputs_hash(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (tuple, list)):
            h.update(inputs_hash(*part).encode())
        else:
            a = np.ascontiguousarray(np.asarray(part, dtype=float))
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
    return h.hexdigest()[:16]


def _params_hash(params) -> str:
    if isinstance(params, GaussianMixtureParams):
        return inputs_hash(params.mixing, params.means, params.shared_cov)
    if isinstance(params, CategoricalMixtureParams):
        return inputs_hash(params.mixing, list(params.probs))
    return inputs_hash(params.mixing, list(params.cat_part), params.gauss_means, params.gauss_vars)


# ---------------------------------------------------------------------------
# Classification accuracy
# ---------------------------------------------------------------------------


def _simulate(params, n, rng):
    p = np.asarray(params.mixing)
    K = p.size
    A = rng.choice(K, size=n, p=p)
    if isinstance(params, GaussianMixtureParams):
        dist = stats.multivariate_normal(mean=np.zeros(params.means.shape[1]), cov=params.shared_cov)
        x = params.means[A] + dist.rvs(size=n, random_state=rng).reshape(n, -1)
        return A, x
    tables = params.probs if isinstance(params, CategoricalMixtureParams) else params.cat_part
    levels = np.empty((n, len(tables)), dtype=int)
    for d, t in enumerate(tables):
        cum = np.cumsum(t[A], axis=1)
        u = rng.random(n)[:, None]
        levels[:, d] = np.minimum((u >= cum).sum(axis=1), t.shape[1] - 1)
    if isinstance(params, CategoricalMixtureParams):
        return A, levels
    sd = np.sqrt(params.gauss_vars)
    cont = params.gauss_means[A] + sd * rng.standard_normal((n, sd.size))
    return A, (levels, cont)


def _log_scores(params, data):
    logp = np.log(np.asarray(params.mixing))
    K = logp.size
    if isinstance(params, GaussianMixtureParams):
        return np.column_stack(
            [logp[k] + stats.multivariate_normal(params.means[k], params.shared_cov).logpdf(data) for k in range(K)]
        )
    if isinstance(params, CategoricalMixtureParams):
        tables, levels, cont = params.probs, data, None
    else:
        tables, (levels, cont) = params.cat_part, data
    out = np.tile(logp, (levels.shape[0], 1))
    for k in range(K):
        for d, t in enumerate(tables):
            out[:, k] += np.log(t[k, levels[:, d]])
        if cont is not None:
            for j in range(cont.shape[1]):
                out[:, k] += stats.norm(params.gauss_means[k, j], math.sqrt(params.gauss_vars[j])).logpdf(cont[:, j])
    return out


def mc_classification_accuracy(params, n: int, seed) -> OracleReport:
    """Monte-Carlo hit rate of the posterior-mode classifier at known parameters.

    Returns the estimate with its binomial standard error (floored at
    ``1/n`` so it stays positive when every draw is classified correctly).
    """
    if n < 10_000:
        raise InvalidArgumentError("use at least 10^4 draws")
    if not isinstance(params, (GaussianMixtureParams, CategoricalMixtureParams, HybridMixtureParams)):
        raise InvalidArgumentError("unsupported mixture parameters")
    rng = np.random.default_rng(seed)
    A, data = _simulate(params, int(n), rng)
    hits = np.argmax(_log_scores(params, data), axis=1) == A
    est = float(hits.mean())
    se = max(math.sqrt(est * (1 - est) / n), 1.0 / n)
    return OracleReport("mc_classification_accuracy", est, se, _params_hash(params) + f":{n}:{seed}")


def enumerate_categorical_accuracy(params: CategoricalMixtureParams, cap: int = 2**20) -> float:
    """Exact accuracy by visiting every category combination.

    For each cell the class with the largest joint probability
    ``p_k prod_d theta_kd`` is predicted (first index on ties, up to a
    relative 1e-12) and the joint
    probability of that class and cell is accumulated.
    """
    tables = params.probs
    sizes = [t.shape[1] for t in tables]
    if math.prod(sizes) > cap:
        raise TooLargeError(f"{math.prod(sizes)} cells exceed the cap {cap}")
    p = params.mixing
    K = p.size
    total = 0.0
    for cell in itertools.product(*[range(m) for m in sizes]):
        joint = []
        for k in range(K):
            v = p[k]
            for d, j in enumerate(cell):
                v *= tables[d][k, j]
            joint.append(v)
        best = 0
        for k in range(1, K):
            if joint[k] > joint[best] * (1 + 1e-12):
                best = k
        total += joint[best]
    return total


def gaussian_threshold_accuracy(mus, sigma: float, mixing) -> float:
    """Exact two-class accuracy from the single equal-posterior threshold.

    With ``mu_0 < mu_1`` class 1 is predicted above
    ``t = (mu_0 + mu_1)/2 + sigma^2 log(p_0/p_1) / (mu_1 - mu_0)``.
    """
    mu = [float(m) for m in np.ravel(mus)]
    p = [float(v) for v in np.ravel(mixing)]
    if len(mu) != 2 or len(p) != 2:
        raise InvalidArgumentError("exactly two components are required")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    if mu[0] == mu[1]:
        return max(p)
    if mu[0] > mu[1]:
        mu, p = mu[::-1], p[::-1]
    t = 0.5 * (mu[0] + mu[1]) + sigma**2 * math.log(p[0] / p[1]) / (mu[1] - mu[0])
    return p[0] * stats.norm.cdf(t, mu[0], sigma) + p[1] * stats.norm.sf(t, mu[1], sigma)


# ---------------------------------------------------------------------------
# Calculus and optimization references
# ---------------------------------------------------------------------------


def finite_diff_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_j) - f(x - h e_j)) / 2h``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _ols_sse(design, y):
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    r = y - design @ coef
    return coef, float(r @ r)


def dual_scan_fair_ls(y, A_hat, U, epsilon: float, grid_size: int = 2000, refine: int = 200):
    """Best feasible SSE found by scanning the dual multiplier.

    For each ``t`` on a grid over ``[0, 1/epsilon)`` the stationarity system
    ``(Q + t M) theta = c`` of the full centered problem (including the
    cross-covariance between ``A_hat`` and ``U``) is solved; among feasible
    solutions the smallest SSE is kept. The bracket around the first
    feasible grid point is then bisected ``refine`` times.

    Returns
    -------
    coefs : dict with beta0, alpha, beta
    sse : float
    """
    if grid_size < 1000:
        raise InvalidArgumentError("grid_size must be at least 1000")
    y = np.asarray(y, dtype=float).ravel()
    P = np.asarray(A_hat, dtype=float)
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    n, K = P.shape
    ones = np.ones((n, 1))

    def pack(theta):
        alpha, beta = theta[:K], theta[K:]
        b0 = y.mean() - P.mean(0) @ alpha - U.mean(0) @ beta
        r = y - b0 - P @ alpha - U @ beta
        return {"beta0": float(b0), "alpha": alpha, "beta": beta}, float(r @ r)

    if epsilon == 0:
        coef, sse = _ols_sse(np.hstack([ones, U]), y)
        return {"beta0": float(coef[0]), "alpha": np.zeros(K), "beta": coef[1:]}, sse
    if epsilon >= 1:
        coef, sse = _ols_sse(np.hstack([ones, P, U]), y)
        return {"beta0": float(coef[0]), "alpha": coef[1 : K + 1], "beta": coef[K + 1 :]}, sse

    M_all = np.hstack([P, U])
    Mc = M_all - M_all.mean(0)
    Q = Mc.T @ Mc / n
    c = Mc.T @ (y - y.mean()) / n
    S_A, S_U = Q[:K, :K], Q[K:, K:]
    Mcon = np.zeros_like(Q)
    Mcon[:K, :K] = (1 - epsilon) * S_A
    Mcon[K:, K:] = -epsilon * S_U
    scale = max(1e-300, float(np.trace(Q)))

    def solve(t):
        theta, *_ = np.linalg.lstsq(Q + t * Mcon, c, rcond=None)
        gval = (1 - epsilon) * theta[:K] @ S_A @ theta[:K] - epsilon * theta[K:] @ S_U @ theta[K:]
        return theta, gval

    theta0, g0 = solve(0.0)
    if g0 <= 0:
        return pack(theta0)
    ts = np.arange(grid_size) / (grid_size * epsilon)
    best = None
    prev_infeasible = 0.0
    for t in ts:
        theta, gval = solve(t)
        if gval <= 1e-14 * scale:
            cand = pack(theta)
            if best is None or cand[1] < best[1]:
                best, best_t = cand, t
        elif best is None:
            prev_infeasible = t
    if best is None:
        lo, hi = ts[-1], 1.0 / epsilon
    else:
        lo, hi = prev_infeasible, best_t
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        theta, gval = solve(mid)
        if gval <= 1e-14 * scale:
            hi = mid
            cand = pack(theta)
            if best is None or cand[1] < best[1]:
                best = cand
        else:
            lo = mid
    if best is None:
        raise ArithmeticError("dual scan found no feasible point")
    return best


def irls_logistic(X, y, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Logistic MLE by iteratively reweighted least squares; ``X`` includes any intercept column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(mu * (1 - mu), 1e-300)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if np.max(np.abs(new - beta)) < tol * max(1.0, np.max(np.abs(new))):
            return new
        beta = new
    return beta


# ---------------------------------------------------------------------------
# Naive metric references
# ---------------------------------------------------------------------------


def pairwise_auc(scores, labels) -> float:
    """AUC by comparing every positive with every negative."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def naive_mean_distance(A_hat, y) -> float:
    rows = [list(map(float, r)) for r in np.asarray(A_hat)]
    K = len(rows[0])
    num = [0.0] * K
    den = [0.0] * K
    for r, yi in zip(rows, np.ravel(y)):
        k = max(range(K), key=lambda j: (r[j], -j))
        w = r[k] - 1.0 / K
        num[k] += w * float(yi)
        den[k] += w
    means = [num[k] / den[k] for k in range(K) if den[k] >= 1e-12]
    return max(abs(a - b) for a in means for b in means)


def naive_penalty(A_hat, pi, delta: float) -> float:
    rows = np.asarray(A_hat, dtype=float)
    pi = np.ravel(pi)
    n, K = rows.shape
    pbar = sum(pi) / n
    total = 0.0
    for k in range(K):
        abar = sum(rows[i, k] for i in range(n)) / n
        s = 0.0
        for i in range(n):
            s += (rows[i, k] - abar) * (pi[i] - pbar)
        total += s * s
    return math.sqrt(total + delta)
