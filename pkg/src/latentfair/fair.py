"""Residualization and fairness-aware linear / logistic fits on estimated groups.

Notation: ``A_hat`` is the n x K posterior matrix, ``U`` the residualized
predictors. A fitted model predicts ``beta0 + A_hat @ alpha + U @ beta``.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import FairnessWarning, InvalidArgumentError, SeparationError
from .metrics import mean_distance
from .mixture import as_probs


# ---------------------------------------------------------------------------
# Residualization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualizedDesign:
    """``residuals = X - 1 intercept^T - A_hat coefficients``."""

    residuals: np.ndarray
    coefficients: np.ndarray
    intercept: np.ndarray
    warnings: tuple = ()

    def apply(self, X, A_hat) -> np.ndarray:
        """Residualize new rows with the coefficients estimated on the training rows."""
        X = np.asarray(X, dtype=float)
        return X - self.intercept[None, :] - as_probs(A_hat) @ self.coefficients


def _matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def residualize(X, A_hat) -> ResidualizedDesign:
    """Least-squares residuals of every column of ``X`` on ``[1, A_hat]``.

    Posterior rows sum to one, so ``[1, A_hat]`` is rank deficient; the last
    posterior column is then dropped (its coefficient row is zero).
    """
    X = _matrix(X)
    P = as_probs(A_hat)
    n, K = P.shape
    if X.shape[0] != n:
        raise InvalidArgumentError("X and A_hat must have the same number of rows")
    if n <= K + 1:
        raise InvalidArgumentError(f"need n > K + 1 rows to residualize (n={n}, K={K})")
    notes = []
    design = np.column_stack([np.ones(n), P])
    keep = K
    if np.linalg.matrix_rank(design) < K + 1:
        keep = K - 1
        design = design[:, : K]
        notes.append(f"[1, A_hat] rank deficient; dropped posterior column {K - 1}")
        if np.linalg.matrix_rank(design) < keep + 1:
            notes.append("posterior columns remain collinear; using minimum-norm coefficients")
    coef, *_ = np.linalg.lstsq(design, X, rcond=None)
    B = np.zeros((K, X.shape[1]))
    B[:keep] = coef[1:]
    mu = coef[0]
    U = X - mu[None, :] - P @ B
    return ResidualizedDesign(U, B, mu, tuple(notes))


@dataclass(frozen=True)
class SampleCov:
    S_A: np.ndarray
    S_U: np.ndarray


def _cov(M: np.ndarray) -> np.ndarray:
    Mc = M - M.mean(axis=0)
    S = Mc.T @ Mc / M.shape[0]
    return 0.5 * (S + S.T)


def sample_covs(A_hat, U) -> SampleCov:
    """Covariances of the rows of ``A_hat`` and ``U`` (divided by n)."""
    return SampleCov(_cov(as_probs(A_hat)), _cov(_matrix(U)))


# ---------------------------------------------------------------------------
# Constrained least squares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FairLinearFit:
    beta0: float
    alpha: np.ndarray
    beta: np.ndarray
    epsilon: float
    sse: float
    r2_given_A: float
    multiplier: float
    warnings: tuple = ()

    def predict(self, A_hat, U) -> np.ndarray:
        return self.beta0 + as_probs(A_hat) @ self.alpha + _matrix(U) @ self.beta

    def to_json(self) -> dict:
        return {
            "task": "regression",
            "tuning": {"epsilon": self.epsilon},
            "coefficients": {"beta0": self.beta0, "alpha": self.alpha.tolist(), "beta": self.beta.tolist()},
            "diagnostics": {
                "sse": self.sse,
                "r2_given_A": self.r2_given_A,
                "multiplier": self.multiplier if math.isfinite(self.multiplier) else None,
            },
            "converged": True,
            "n_iter": 0,
            "warnings": list(self.warnings),
        }


def r2_on_groups(y_hat, A_hat) -> float:
    """R^2 of the least-squares regression of ``y_hat`` on ``[1, A_hat]``."""
    y_hat = np.asarray(y_hat, dtype=float)
    P = as_probs(A_hat)
    yc = y_hat - y_hat.mean()
    sst = float(yc @ yc)
    if sst <= 1e-300:
        return 0.0
    design = np.column_stack([np.ones(len(y_hat)), P])
    coef, *_ = np.linalg.lstsq(design, y_hat, rcond=None)
    resid = y_hat - design @ coef
    return float(min(1.0, max(0.0, 1.0 - (resid @ resid) / sst)))


def _solve_spd(S: np.ndarray, c: np.ndarray, notes: list, label: str) -> np.ndarray:
    if S.size == 0:
        return np.zeros(0)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(np.trace(S), 1e-300)
        notes.append(f"{label} singular; added ridge jitter {jitter:.3g}")
        L = np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
    return np.linalg.solve(L.T, np.linalg.solve(L, c))


def fit_fair_ls(y, A_hat, U, epsilon: float) -> FairLinearFit:
    """Least squares subject to ``R^2(y_hat | A_hat) <= epsilon``.

    After centering, the problem is

        min  a' S_A a + b' S_U b - 2 c_A' a - 2 c_U' b
        s.t. (1 - eps) a' S_A a - eps b' S_U b <= 0

    with ``c = cov(., y)``. ``U`` is assumed residualized on ``A_hat`` so that
    the cross-covariance vanishes. Stationarity with multiplier ``t`` scales
    the unconstrained solution to ``a0 / (1 + t (1 - eps))`` and
    ``b0 / (1 - t eps)``; ``t`` in ``[0, 1/eps)`` is found by bracketed root
    search on the constraint, carried out in ``u = t eps``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {epsilon}")
    y = np.asarray(y, dtype=float).ravel()
    P = as_probs(A_hat)
    U = _matrix(U)
    n = y.size
    if P.shape[0] != n or U.shape[0] != n:
        raise InvalidArgumentError("y, A_hat and U must have the same number of rows")
    notes: list = []
    covs = sample_covs(P, U)
    yc = y - y.mean()
    c_A = (P - P.mean(axis=0)).T @ yc / n
    c_U = (U - U.mean(axis=0)).T @ yc / n
    alpha_ols, *_ = np.linalg.lstsq(covs.S_A, c_A, rcond=None)
    beta_ols = _solve_spd(covs.S_U, c_U, notes, "S_U")
    a = float(alpha_ols @ covs.S_A @ alpha_ols)
    b = float(beta_ols @ covs.S_U @ beta_ols)

    if epsilon >= 1.0 or (1 - epsilon) * a - epsilon * b <= 0.0:
        alpha, beta, t = alpha_ols, beta_ols, 0.0
    elif epsilon == 0.0 or b <= 0.0:
        alpha, beta, t = np.zeros_like(alpha_ols), beta_ols, math.inf
    else:
        # search u = t * eps in [0, 1) so that tiny eps cannot overflow
        def gap(u):
            return (1 - epsilon) * a * (epsilon / (epsilon + u * (1 - epsilon))) ** 2 - epsilon * b / (1 - u) ** 2

        hi = 0.5
        while gap(hi) > 0:
            hi = 0.5 * (hi + 1.0)
        u = brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        alpha = alpha_ols * (epsilon / (epsilon + u * (1 - epsilon)))
        beta = beta_ols / (1 - u)
        t = u / epsilon if u < epsilon * np.finfo(float).max else math.inf

    beta0 = float(y.mean() - P.mean(axis=0) @ alpha - U.mean(axis=0) @ beta)
    y_hat = beta0 + P @ alpha + U @ beta
    resid = y - y_hat
    return FairLinearFit(
        beta0=beta0,
        alpha=alpha,
        beta=beta,
        epsilon=float(epsilon),
        sse=float(resid @ resid),
        r2_given_A=r2_on_groups(y_hat, P),
        multiplier=float(t),
        warnings=tuple(notes),
    )


def predict_linear(fit, a_row, u_row) -> float:
    """Linear predictor ``beta0 + a' alpha + u' beta`` for one observation."""
    return float(fit.beta0 + np.dot(a_row, fit.alpha) + np.dot(u_row, fit.beta))


# ---------------------------------------------------------------------------
# Penalized logistic regression
# ---------------------------------------------------------------------------


def penalty_value(A_hat, pi_hat, delta: float) -> float:
    """Smoothed dependence penalty ``sqrt(||A_hat^T C pi_hat||^2 + delta)``."""
    P = as_probs(A_hat)
    pi = np.asarray(pi_hat, dtype=float).ravel()
    v = (P - P.mean(axis=0)).T @ pi
    return float(np.sqrt(v @ v + delta))


def logistic_loss(y, X_aug, coefs):
    """Negative Bernoulli log-likelihood and its gradient for ``eta = X_aug @ coefs``."""
    y = np.asarray(y, dtype=float)
    eta = X_aug @ coefs
    value = float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    grad = X_aug.T @ (expit(eta) - y)
    return value, grad


def penalty_gradient(A_hat, X_aug, coefs, delta: float) -> np.ndarray:
    """Gradient of the smoothed penalty with respect to ``coefs``.

    With ``v = A_c^T pi`` and ``d pi_i / d eta_i = pi_i (1 - pi_i)``,
    ``grad = X_aug^T [pi (1 - pi) * (A_c v)] / C_delta``.
    """
    return _penalty_terms(_centered(A_hat), X_aug, coefs, delta, hessian=False)[1]


def penalty_hessian(A_hat, X_aug, coefs, delta: float) -> np.ndarray:
    return _penalty_terms(_centered(A_hat), X_aug, coefs, delta, hessian=True)[2]


def _centered(A_hat) -> np.ndarray:
    P = as_probs(A_hat)
    return P - P.mean(axis=0)


def _penalty_terms(Pc, Z, theta, delta, hessian=True):
    pi = expit(Z @ theta)
    w = pi * (1.0 - pi)
    v = Pc.T @ pi
    C = math.sqrt(float(v @ v) + delta)
    s = Pc @ v
    g = Z.T @ (w * s) / C
    if not hessian:
        return C, g, None
    J = (Pc * w[:, None]).T @ Z
    H = (J.T @ J + (Z * (w * (1.0 - 2.0 * pi) * s)[:, None]).T @ Z) / C - np.outer(g, g) / C
    return C, g, 0.5 * (H + H.T)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the penalized logistic solver.

    ``method`` is ``"newton"`` (damped Newton with Armijo backtracking; the
    Hessian is shifted towards the identity when it is not positive definite)
    or ``"adam"`` (full-batch adaptive moments with step ``step``).
    """

    method: str = "newton"
    step: float = 1e-2
    grad_tol: float = 1e-6
    max_iter: int = 50_000
    coef_cap: float = 1e4
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.method not in ("newton", "adam"):
            raise InvalidArgumentError(f"unknown optimizer method {self.method!r}")
        if not (self.grad_tol > 0 and self.step > 0 and self.coef_cap > 0 and self.max_iter >= 1):
            raise InvalidArgumentError("optimizer tolerances, step, cap and max_iter must be positive")


@dataclass(frozen=True)
class FairLogisticFit:
    beta0: float
    alpha: np.ndarray
    beta: np.ndarray
    lam: float
    delta: float
    objective: float
    logit_loss: float
    penalty_value: float
    grad_norm: float
    converged: bool
    n_iter: int
    method: str = "newton"
    warnings: tuple = ()

    def decision_function(self, A_hat, U) -> np.ndarray:
        return self.beta0 + as_probs(A_hat) @ self.alpha + _matrix(U) @ self.beta

    def predict_proba(self, A_hat, U) -> np.ndarray:
        return expit(self.decision_function(A_hat, U))

    def predict(self, A_hat, U) -> np.ndarray:
        return (self.predict_proba(A_hat, U) >= 0.5).astype(int)

    def to_json(self) -> dict:
        return {
            "task": "classification",
            "tuning": {"lambda": self.lam, "delta": self.delta},
            "coefficients": {"beta0": self.beta0, "alpha": self.alpha.tolist(), "beta": self.beta.tolist()},
            "diagnostics": {
                "objective": self.objective,
                "logit_loss": self.logit_loss,
                "penalty_value": self.penalty_value,
                "grad_norm": self.grad_norm,
            },
            "converged": self.converged,
            "n_iter": self.n_iter,
            "warnings": list(self.warnings),
        }


class _Standardized:
    """Column standardization of ``[A_hat, U]`` with a map back to the raw scale.

    The last posterior column is always dropped (posterior rows sum to one) and
    constant columns are dropped; their coefficients are reported as zero.
    """

    def __init__(self, P: np.ndarray, U: np.ndarray):
        K = P.shape[1]
        raw = np.column_stack([P[:, : K - 1], U]) if K > 1 else U.copy()
        self.K, self.p = K, U.shape[1]
        self.raw_index = np.r_[np.arange(K - 1), K + np.arange(self.p)] if K > 1 else K + np.arange(self.p)
        mean = raw.mean(axis=0)
        sd = raw.std(axis=0)
        keep = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
        self.keep = keep
        self.mean, self.sd = mean[keep], sd[keep]
        self.Z = np.column_stack([np.ones(P.shape[0]), (raw[:, keep] - self.mean) / self.sd])

    def to_raw(self, theta: np.ndarray):
        slopes = theta[1:] / self.sd
        b0 = float(theta[0] - slopes @ self.mean)
        full = np.zeros(self.K + self.p)
        full[self.raw_index[self.keep]] = slopes
        return b0, full[: self.K], full[self.K :]

    def from_raw(self, beta0, alpha, beta) -> np.ndarray:
        full = np.r_[alpha, beta][self.raw_index[self.keep]]
        # only valid when the dropped posterior column has a zero coefficient
        return np.r_[beta0 + full @ self.mean, full * self.sd]


def _objective(y, Z, Pc, lam, delta, theta, need_hessian):
    eta = Z @ theta
    pi = expit(eta)
    loss = float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    grad = Z.T @ (pi - y)
    H = None
    if need_hessian:
        H = (Z * (pi * (1 - pi))[:, None]).T @ Z
    C = math.sqrt(delta)
    if lam > 0:
        C, gC, HC = _penalty_terms(Pc, Z, theta, delta, hessian=need_hessian)
        grad = grad + lam * gC
        if need_hessian:
            H = H + lam * HC
    elif Pc.shape[1]:
        v = Pc.T @ pi
        C = math.sqrt(float(v @ v) + delta)
    return loss + lam * C, loss, C, grad, H


def _newton(fun, theta, cfg: OptimizerConfig, stall_limit: int = 20):
    """Damped Newton; returns ``(theta, converged, n_iter)``.

    Armijo backtracking on the objective. Close to the optimum of a very
    stiff penalty the objective is flat to rounding level, so a full step is
    also accepted when it lowers the gradient norm. The loop stops early
    once neither the objective nor the gradient norm has improved for
    ``stall_limit`` iterations.
    """
    f, _, _, g, H = fun(theta, True)
    eye = np.eye(theta.size)
    gnorm = float(np.max(np.abs(g)))
    best_f, best_g = f, gnorm
    stall, it = 0, 0
    for it in range(1, cfg.max_iter + 1):
        if gnorm < cfg.grad_tol:
            return theta, True, it - 1
        shift = 0.0
        scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
        while True:
            try:
                L = np.linalg.cholesky(H + shift * eye)
                break
            except np.linalg.LinAlgError:
                shift = max(2.0 * shift, 1e-10 * scale)
        d = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        slope = float(g @ d)
        # slack at rounding level so that steps are not rejected on float noise
        slack = 16 * np.finfo(float).eps * max(1.0, abs(f))
        step, accepted = 1.0, False
        for _ in range(60):
            cand = theta + step * d
            if fun(cand, False)[0] <= f + 1e-4 * step * slope + slack:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            cand = theta + d
            if float(np.max(np.abs(fun(cand, False)[3]))) >= gnorm:
                break
        theta = cand
        if np.max(np.abs(theta)) > cfg.coef_cap:
            raise SeparationError(f"coefficients exceeded the cap {cfg.coef_cap:g} (separation?)")
        f, _, _, g, H = fun(theta, True)
        gnorm = float(np.max(np.abs(g)))
        progress = False
        if f < best_f - 4 * np.finfo(float).eps * max(1.0, abs(best_f)):
            best_f, progress = f, True
        if gnorm < 0.9 * best_g:
            progress = True
        best_g = min(best_g, gnorm)
        stall = 0 if progress else stall + 1
        if stall >= stall_limit:
            break
    return theta, gnorm < cfg.grad_tol, it


def _adam(fun, theta, cfg: OptimizerConfig):
    b1, b2 = cfg.adam_betas
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best = (math.inf, theta)
    for it in range(1, cfg.max_iter + 1):
        f, _, _, g, _ = fun(theta, False)
        if f < best[0]:
            best = (f, theta)
        if np.max(np.abs(g)) < cfg.grad_tol:
            return theta, True, it - 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**it)
        vhat = v / (1 - b2**it)
        theta = theta - cfg.step * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if np.max(np.abs(theta)) > cfg.coef_cap:
            raise SeparationError(f"coefficients exceeded the cap {cfg.coef_cap:g} (separation?)")
    return best[1], False, cfg.max_iter


def fit_fair_logistic(
    y,
    A_hat,
    U,
    lam: float = 0.0,
    delta: float = 1e-8,
    opt: OptimizerConfig | None = None,
    init=None,
) -> FairLogisticFit:
    """Minimize ``logistic loss + lam * C_delta(A_hat, pi)``.

    The problem is solved on standardized columns; coefficients are returned
    on the original scale with the last posterior coefficient fixed at zero.
    ``grad_norm`` is the max-norm of the gradient in the standardized
    parametrization. A fit that stops before ``opt.grad_tol`` is reached is
    returned with ``converged=False``.
    """
    opt = opt or OptimizerConfig()
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    if not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("y must be binary (0/1)")
    P = as_probs(A_hat)
    U = _matrix(U)
    n = y.size
    if P.shape[0] != n or U.shape[0] != n:
        raise InvalidArgumentError("y, A_hat and U must have the same number of rows")
    Pc = P - P.mean(axis=0)
    std = _Standardized(P, U)
    notes = []

    def fun(theta, need_hessian):
        return _objective(y, std.Z, Pc, lam, delta, theta, need_hessian)

    if y.min() == y.max():
        # degenerate response: intercept-only fit with the probability capped
        rate = min(max(y.mean(), 1e-10), 1 - 1e-10)
        theta = np.zeros(std.Z.shape[1])
        theta[0] = math.log(rate / (1 - rate))
        notes.append("constant response; returned intercept-only fit")
        converged, n_iter = True, 0
    else:
        theta0 = np.zeros(std.Z.shape[1]) if init is None else std.from_raw(*init)
        solver = _newton if opt.method == "newton" else _adam
        theta, converged, n_iter = solver(fun, theta0, opt)
        # every margin positive: the loss has no minimizer, only a vanishing gradient
        if np.all((2 * y - 1) * (std.Z @ theta) > 0):
            raise SeparationError("training classes are perfectly separated; coefficients diverge")
        if not converged:
            notes.append(f"did not reach grad_tol={opt.grad_tol:g} within {opt.max_iter} iterations")
    f, loss, C, g, _ = fun(theta, False)
    beta0, alpha, beta = std.to_raw(theta)
    return FairLogisticFit(
        beta0=beta0,
        alpha=alpha,
        beta=beta,
        lam=float(lam),
        delta=float(delta),
        objective=f,
        logit_loss=loss,
        penalty_value=C,
        grad_norm=float(np.max(np.abs(g))),
        converged=bool(converged),
        n_iter=int(n_iter),
        method=opt.method,
        warnings=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Trade-off curves
# ---------------------------------------------------------------------------


@dataclass
class TradeoffPoint:
    """One grid value; ``loss`` is SSE/SST (regression) or the error rate (classification)."""

    tuning: float
    loss: float | None
    fairness: float | None
    penalty: float | None = None
    fit: object = None
    error: str | None = None


@dataclass
class TradeoffCurve:
    """Accuracy loss (SSE/SST or error rate) and fairness (R^2 on groups or MD) per grid value."""

    task: str
    points: list = field(default_factory=list)
    monotone: bool = True

    def rows(self) -> list:
        return [(p.tuning, p.loss, p.fairness) for p in self.points]


def tradeoff_curve(
    y,
    A_hat,
    U,
    grid: Sequence[float],
    task: str = "regression",
    delta: float = 1e-8,
    opt: OptimizerConfig | None = None,
    monotone_slack: float = 1e-6,
) -> TradeoffCurve:
    """Fit one model per grid value (epsilon for regression, lambda for classification).

    Each point is computed independently from a cold start. ``monotone``
    reports whether the fitted criterion moved in the expected direction:
    SSE nonincreasing in epsilon, penalty nonincreasing in lambda among
    converged fits.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidArgumentError("grid must be non-empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise InvalidArgumentError("grid must be sorted ascending")
    if task not in ("regression", "classification"):
        raise InvalidArgumentError(f"unknown task {task!r}")
    y = np.asarray(y, dtype=float).ravel()
    curve = TradeoffCurve(task)
    for value in grid:
        try:
            if task == "regression":
                fit = fit_fair_ls(y, A_hat, U, value)
                sst = float(np.sum((y - y.mean()) ** 2))
                curve.points.append(TradeoffPoint(value, fit.sse / sst if sst > 0 else 0.0, fit.r2_given_A, None, fit))
            else:
                fit = fit_fair_logistic(y, A_hat, U, value, delta, opt)
                y_pred = fit.predict(A_hat, U)
                err = float(np.mean(y_pred != y))
                with _warnings.catch_warnings():
                    _warnings.simplefilter("ignore", FairnessWarning)
                    try:
                        md = mean_distance(A_hat, y_pred)
                    except Exception:
                        md = None
                curve.points.append(TradeoffPoint(value, err, md, fit.penalty_value, fit))
        except Exception as exc:  # keep the other grid points
            curve.points.append(TradeoffPoint(value, None, None, None, None, f"{type(exc).__name__}: {exc}"))

    ok = [p for p in curve.points if p.fit is not None]
    if task == "regression":
        sses = [p.fit.sse for p in ok]
        curve.monotone = all(b <= a + 1e-8 * max(1.0, abs(a)) for a, b in zip(sses, sses[1:]))
    else:
        conv = [p.fit for p in ok if p.fit.converged]
        curve.monotone = all(
            b.penalty_value <= a.penalty_value + monotone_slack for a, b in zip(conv, conv[1:])
        )
    return curve
