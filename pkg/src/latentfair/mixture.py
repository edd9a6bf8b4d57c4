"""EM fitting of K-component mixtures for the sensitive-related predictor block.

Three component families are supported:

* Gaussian with a covariance matrix shared by all components (full or diagonal),
* product-multinomial (independent categorical predictors),
* hybrid: product of the categorical part and a diagonal Gaussian part.

Categorical levels are coded ``0 .. m_d - 1``; the code ``-1`` marks a missing
or unseen level and contributes a factor of one to every component density.
Component labels are zero-based as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DegenerateFitError, InvalidArgumentError, NumericError

PROB_FLOOR = 1e-10
EMPTY_MASS = 1e-12
MISSING_LEVEL = -1

_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_mixing(mixing: np.ndarray) -> None:
    if mixing.ndim != 1 or mixing.size < 1:
        raise InvalidArgumentError("mixing must be a non-empty vector")
    if np.any(mixing <= 0) or (mixing.size > 1 and np.any(mixing >= 1)):
        raise InvalidArgumentError(f"mixing entries must lie in (0, 1), got {mixing}")
    if abs(mixing.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError(f"mixing must sum to 1, got {mixing.sum()!r}")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureParams:
    """Gaussian mixture with a covariance shared across components.

    ``shared_cov`` is p_a x p_a; a diagonal fit stores a diagonal matrix.
    """

    mixing: np.ndarray
    means: np.ndarray
    shared_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mixing", _frozen(self.mixing))
        object.__setattr__(self, "means", _frozen(np.atleast_2d(self.means)))
        object.__setattr__(self, "shared_cov", _frozen(np.atleast_2d(self.shared_cov)))
        _check_mixing(self.mixing)
        K, p = self.means.shape
        if K != self.mixing.size:
            raise InvalidArgumentError("means must have one row per component")
        if self.shared_cov.shape != (p, p):
            raise InvalidArgumentError(f"shared_cov must be {p}x{p}")
        if np.max(np.abs(self.shared_cov - self.shared_cov.T)) > 1e-12:
            raise InvalidArgumentError("shared_cov must be symmetric")
        if np.linalg.eigvalsh(self.shared_cov).min() <= 0:
            raise InvalidArgumentError("shared_cov must be positive definite")

    @property
    def n_components(self) -> int:
        return self.mixing.size

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "shared_cov": self.shared_cov.tolist()}


@dataclass(frozen=True)
class CategoricalMixtureParams:
    """Product-multinomial mixture.

    ``probs[d]`` is a K x m_d matrix whose row k is the level distribution of
    predictor d in component k.
    """

    mixing: np.ndarray
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "mixing", _frozen(self.mixing))
        object.__setattr__(self, "probs", tuple(_frozen(np.atleast_2d(t)) for t in self.probs))
        _check_mixing(self.mixing)
        for d, t in enumerate(self.probs):
            if t.shape[0] != self.mixing.size:
                raise InvalidArgumentError(f"probs[{d}] must have one row per component")
            if t.shape[1] < 2:
                raise InvalidArgumentError(f"predictor {d} needs at least 2 levels")
            if np.any(t <= 0) or np.any(t >= 1):
                raise InvalidArgumentError(f"probs[{d}] entries must lie in (0, 1)")
            if np.max(np.abs(t.sum(axis=1) - 1.0)) > 1e-12:
                raise InvalidArgumentError(f"probs[{d}] rows must sum to 1")

    @property
    def n_components(self) -> int:
        return self.mixing.size

    @property
    def arities(self) -> tuple:
        return tuple(t.shape[1] for t in self.probs)

    def to_dict(self) -> dict:
        return {"probs": [t.tolist() for t in self.probs]}


@dataclass(frozen=True)
class HybridMixtureParams:
    """Categorical part times a diagonal Gaussian part with variances shared by components."""

    mixing: np.ndarray
    cat_part: tuple
    gauss_means: np.ndarray
    gauss_vars: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.mixing).size
        object.__setattr__(self, "mixing", _frozen(self.mixing))
        object.__setattr__(self, "cat_part", tuple(_frozen(np.atleast_2d(t)) for t in self.cat_part))
        means = np.asarray(self.gauss_means, dtype=float).reshape(K, -1)
        object.__setattr__(self, "gauss_means", _frozen(means))
        object.__setattr__(self, "gauss_vars", _frozen(np.atleast_1d(self.gauss_vars)))
        if self.gauss_vars.size != self.gauss_means.shape[1]:
            raise InvalidArgumentError("gauss_vars must have one entry per continuous column")
        if np.any(self.gauss_vars <= 0):
            raise InvalidArgumentError("gauss_vars must be positive")
        _check_mixing(self.mixing)
        if self.cat_part:
            CategoricalMixtureParams(self.mixing, self.cat_part)
        if self.gauss_means.shape[0] != K:
            raise InvalidArgumentError("gauss_means must have one row per component")

    @property
    def n_components(self) -> int:
        return self.mixing.size

    def to_dict(self) -> dict:
        return {
            "cat_part": [t.tolist() for t in self.cat_part],
            "gauss_means": self.gauss_means.tolist(),
            "gauss_vars": self.gauss_vars.tolist(),
        }


MixtureParams = Union[GaussianMixtureParams, CategoricalMixtureParams, HybridMixtureParams]


@dataclass(frozen=True)
class GroupPosterior:
    """n x K matrix of posterior class probabilities (rows sum to one)."""

    probs: np.ndarray

    def __post_init__(self):
        P = _frozen(np.atleast_2d(self.probs))
        if np.any(P < 0) or np.any(P > 1):
            raise InvalidArgumentError("posterior entries must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=1) - 1.0), initial=0.0) > 1e-10:
            raise InvalidArgumentError("posterior rows must sum to 1")
        object.__setattr__(self, "probs", P)

    @property
    def n_components(self) -> int:
        return self.probs.shape[1]

    def __len__(self):
        return self.probs.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def labels(self) -> np.ndarray:
        return map_classify(self)


def as_probs(A_hat) -> np.ndarray:
    """Return the posterior matrix of a GroupPosterior or array-like."""
    if isinstance(A_hat, GroupPosterior):
        return A_hat.probs
    P = np.asarray(A_hat, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    return P


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidArgumentError("rel_tol must be > 0")
        if int(self.n_restarts) < 1:
            raise InvalidArgumentError("n_restarts must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")


@dataclass
class MixtureFit:
    """Result of an EM fit.

    ``loglik_trace`` holds the log-likelihood after every E-step of the winning
    restart; ``reseed_iters`` lists iterations at which an empty component was
    reinitialized (monotonicity is only guaranteed between reseeds).
    """

    family: str
    params: MixtureParams
    posterior: GroupPosterior
    loglik: float
    n_iter: int
    converged: bool
    loglik_trace: np.ndarray
    restart: int
    warnings: list = field(default_factory=list)
    reseed_iters: list = field(default_factory=list)

    def __iter__(self):
        # allows ``params, post, ll = fit_gaussian_em(...)``
        return iter((self.params, self.posterior, self.loglik))

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "K": int(self.params.n_components),
            "mixing": self.params.mixing.tolist(),
            "params": self.params.to_dict(),
            "loglik": float(self.loglik),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# Component families (internal)
# ---------------------------------------------------------------------------


def _one_hot_levels(levels: np.ndarray, arities: Sequence[int]) -> list:
    """Per predictor, an n x m_d indicator matrix (all zeros for missing codes)."""
    out = []
    for d, m in enumerate(arities):
        col = levels[:, d]
        Z = np.zeros((levels.shape[0], m))
        ok = col >= 0
        Z[np.nonzero(ok)[0], col[ok]] = 1.0
        out.append(Z)
    return out


def gaussian_m_step(x: np.ndarray, resp: np.ndarray, diagonal: bool = False):
    """Closed-form M-step for a shared-covariance Gaussian mixture.

    Returns ``(mixing, means, cov)`` with the weighted means of every
    component and the pooled within-component scatter divided by n.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    Nk = resp.sum(axis=0)
    mixing = Nk / n
    means = (resp.T @ x) / Nk[:, None]
    cov = np.zeros((x.shape[1], x.shape[1]))
    for k in range(resp.shape[1]):
        diff = x - means[k]
        cov += (resp[:, k, None] * diff).T @ diff
    cov /= resp.sum()
    cov = 0.5 * (cov + cov.T)
    if diagonal:
        cov = np.diag(np.diag(cov))
    return mixing, means, cov


def categorical_m_step(onehots: Sequence[np.ndarray], resp: np.ndarray):
    """Weighted multinomial MLE: returns ``(mixing, [K x m_d probability tables])``.

    Missing codes (all-zero indicator rows) are left out of each predictor's
    denominator.
    """
    n = resp.shape[0]
    mixing = resp.sum(axis=0) / n
    tables = []
    for Z in onehots:
        counts = resp.T @ Z
        tables.append(counts / counts.sum(axis=1, keepdims=True))
    return mixing, tables


def _clamp_table(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return t / t.sum(axis=1, keepdims=True)


class _GaussianPart:
    def __init__(self, x: np.ndarray, diagonal: bool):
        self.x = x
        self.diagonal = diagonal

    @property
    def dim(self):
        return self.x.shape[1]

    def m_step(self, resp, it, warnings):
        _, means, cov = gaussian_m_step(self.x, resp, self.diagonal)
        chol, cov = _safe_cholesky(cov, it, warnings)
        return {"means": means, "cov": cov, "chol": chol}

    def log_density(self, comp):
        L = comp["chol"]
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        n, p = self.x.shape
        K = comp["means"].shape[0]
        out = np.empty((n, K))
        for k in range(K):
            sol = solve_triangular(L, (self.x - comp["means"][k]).T, lower=True) if p else np.zeros((0, n))
            out[:, k] = -0.5 * (p * _LOG_2PI + logdet + np.sum(sol**2, axis=0))
        return out

    def reseed(self, comp, k, row):
        comp = dict(comp)
        means = comp["means"].copy()
        means[k] = self.x[row]
        comp["means"] = means
        return comp


def _safe_cholesky(cov, it, warnings):
    """Return ``(L, cov)``; on failure jitters the diagonal once and retries."""
    p = cov.shape[0]
    if p == 0:
        return np.zeros((0, 0)), cov
    try:
        return np.linalg.cholesky(cov), cov
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * np.trace(cov) / p
    warnings.append(f"iteration {it}: covariance not positive definite, added jitter {jitter:.3g}")
    try:
        if not jitter > 0:
            raise np.linalg.LinAlgError
        cov = cov + jitter * np.eye(p)
        return np.linalg.cholesky(cov), cov
    except np.linalg.LinAlgError:
        raise DegenerateFitError(
            f"covariance numerically singular at EM iteration {it} even after jitter", iteration=it
        ) from None


class _CategoricalPart:
    def __init__(self, levels: np.ndarray, arities: Sequence[int]):
        self.levels = levels
        self.arities = tuple(int(m) for m in arities)
        self.onehots = _one_hot_levels(levels, self.arities)

    def m_step(self, resp, it, warnings):
        _, tables = categorical_m_step(self.onehots, resp)
        return {"tables": [_clamp_table(t) for t in tables]}

    def log_density(self, comp):
        n = self.levels.shape[0]
        K = comp["tables"][0].shape[0] if comp["tables"] else 0
        out = np.zeros((n, K))
        for Z, t in zip(self.onehots, comp["tables"]):
            out += Z @ np.log(t).T
        return out

    def reseed(self, comp, k, row):
        tables = [t.copy() for t in comp["tables"]]
        for d, t in enumerate(tables):
            lev = self.levels[row, d]
            m = t.shape[1]
            t[k] = 0.5 / (m - 1)
            if lev >= 0:
                t[k, lev] = 0.5
            else:
                t[k] = 1.0 / m
        return {"tables": tables}


class _Family:
    """Product of an optional categorical part and an optional Gaussian part."""

    def __init__(self, name, cat: _CategoricalPart | None, gauss: _GaussianPart | None, n: int):
        self.name = name
        self.cat = cat
        self.gauss = gauss
        self.n = n

    def m_step(self, resp, it, warnings):
        comp = {"mixing": resp.sum(axis=0) / self.n}
        if self.cat is not None:
            comp.update(self.cat.m_step(resp, it, warnings))
        if self.gauss is not None:
            comp.update(self.gauss.m_step(resp, it, warnings))
        return comp

    def log_joint(self, comp):
        out = np.log(comp["mixing"])[None, :].repeat(self.n, axis=0)
        if self.cat is not None:
            out = out + self.cat.log_density(comp)
        if self.gauss is not None:
            out = out + self.gauss.log_density(comp)
        return out

    def reseed(self, comp, k, row):
        comp = dict(comp)
        if self.cat is not None:
            comp.update(self.cat.reseed(comp, k, row))
        if self.gauss is not None:
            comp.update(self.gauss.reseed(comp, k, row))
        mixing = comp["mixing"].copy()
        mixing[k] = 1.0 / self.n
        comp["mixing"] = mixing / mixing.sum()
        return comp

    def init_features(self) -> np.ndarray:
        """Standardized continuous columns and level indicators, used only for seeding."""
        blocks = []
        if self.gauss is not None and self.gauss.dim:
            x = self.gauss.x
            sd = x.std(axis=0)
            blocks.append((x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0))
        if self.cat is not None:
            blocks.extend(self.cat.onehots)
        return np.hstack(blocks) if blocks else np.zeros((self.n, 1))

    def sort_key(self, comp):
        if self.gauss is not None and self.gauss.dim > 0:
            return comp["means"][:, 0]
        if self.cat is not None and comp["tables"]:
            return comp["tables"][0][:, 0]
        return np.arange(comp["mixing"].size)

    def permute(self, comp, order):
        comp = dict(comp)
        comp["mixing"] = comp["mixing"][order]
        if "tables" in comp:
            comp["tables"] = [t[order] for t in comp["tables"]]
        if "means" in comp:
            comp["means"] = comp["means"][order]
        return comp

    def to_params(self, comp) -> MixtureParams:
        mixing = comp["mixing"] / comp["mixing"].sum()
        if self.name == "gaussian":
            return GaussianMixtureParams(mixing, comp["means"], comp["cov"])
        if self.name == "categorical":
            return CategoricalMixtureParams(mixing, tuple(comp["tables"]))
        tables = tuple(comp.get("tables", ()))
        if self.gauss is None:
            return HybridMixtureParams(mixing, tables, np.zeros((mixing.size, 0)), np.zeros(0))
        return HybridMixtureParams(mixing, tables, comp["means"], np.diag(comp["cov"]))


def _init_responsibilities(feats: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Soft assignments to K seed rows picked by D^2 (k-means++) sampling."""
    n = feats.shape[0]
    centers = [int(rng.integers(n))]
    d2 = np.sum((feats - feats[centers[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = int(rng.integers(n)) if total <= 0 else int(rng.choice(n, p=d2 / total))
        centers.append(idx)
        d2 = np.minimum(d2, np.sum((feats - feats[idx]) ** 2, axis=1))
    dist = np.stack([np.sum((feats - feats[c]) ** 2, axis=1) for c in centers], axis=1)
    logits = -0.5 * dist
    resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    # keep every component non-empty at the first M-step
    resp = 0.99 * resp + 0.01 * rng.dirichlet(np.ones(K), size=n)
    return resp


def _e_step(family: _Family, comp):
    lj = family.log_joint(comp)
    if not np.all(np.isfinite(lj)):
        bad = np.nonzero(~np.all(np.isfinite(lj), axis=0))[0]
        raise NumericError(f"non-finite component log-density (component {bad[0]})", component=int(bad[0]))
    norm = logsumexp(lj, axis=1)
    resp = np.exp(lj - norm[:, None])
    return resp, float(norm.sum())


def _converged(prev: float, cur: float, tol: float) -> bool:
    return abs(cur - prev) / (1.0 + abs(cur)) < tol


def _run_em(family: _Family, K: int, cfg: EmConfig) -> MixtureFit:
    n = family.n
    if not 1 <= K <= n:
        raise InvalidArgumentError(f"K must satisfy 1 <= K <= n (K={K}, n={n})")
    best = None
    for r in range(int(cfg.n_restarts)):
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(r,)))
        warnings: list = []
        reseeds: list = []
        resp = _init_responsibilities(family.init_features(), K, rng)
        comp = family.m_step(resp, 0, warnings)
        trace = []
        converged = False
        it = 0
        for it in range(1, int(cfg.max_iter) + 1):
            empty = np.nonzero(comp["mixing"] * n < EMPTY_MASS)[0]
            for k in empty:
                row = int(rng.integers(n))
                comp = family.reseed(comp, int(k), row)
                warnings.append(f"iteration {it}: component {int(k)} empty, reseeded from row {row}")
                reseeds.append(it)
            resp, ll = _e_step(family, comp)
            trace.append(ll)
            if len(trace) > 1 and it not in reseeds and _converged(trace[-2], ll, cfg.rel_tol):
                converged = True
                break
            if it == int(cfg.max_iter):
                break
            comp = family.m_step(resp, it, warnings)
        if not converged:
            warnings.append(f"restart {r}: no convergence within {cfg.max_iter} iterations")
        if best is None or trace[-1] > best[1][-1]:
            best = (comp, trace, resp, it, converged, r, warnings, reseeds)

    comp, trace, resp, n_iter, converged, r, warnings, reseeds = best
    order = np.argsort(family.sort_key(comp), kind="stable")
    comp = family.permute(comp, order)
    resp = resp[:, order]
    params = family.to_params(comp)
    return MixtureFit(
        family=family.name,
        params=params,
        posterior=GroupPosterior(resp),
        loglik=trace[-1],
        n_iter=n_iter,
        converged=converged,
        loglik_trace=np.asarray(trace),
        restart=r,
        warnings=warnings,
        reseed_iters=reseeds,
    )


# ---------------------------------------------------------------------------
# Input validation helpers
# ---------------------------------------------------------------------------


def _check_continuous(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidArgumentError("continuous block must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("continuous block contains non-finite entries")
    return x


def _check_levels(levels, arities=None):
    levels = np.asarray(levels)
    if levels.ndim == 1:
        levels = levels[:, None]
    if levels.ndim != 2:
        raise InvalidArgumentError("levels must be an n x D integer matrix")
    if levels.size and not np.issubdtype(levels.dtype, np.integer):
        as_int = levels.astype(np.int64)
        if not np.array_equal(as_int, levels):
            raise InvalidArgumentError("levels must be integer codes")
        levels = as_int
    levels = levels.astype(np.int64)
    if arities is None:
        arities = [int(levels[:, d].max()) + 1 if levels.shape[0] else 0 for d in range(levels.shape[1])]
    arities = [int(m) for m in arities]
    if len(arities) != levels.shape[1]:
        raise InvalidArgumentError("one arity per categorical column is required")
    for d, m in enumerate(arities):
        if m < 2:
            raise InvalidArgumentError(f"categorical column {d} has arity {m} < 2")
        col = levels[:, d]
        if np.any((col < MISSING_LEVEL) | (col >= m)):
            raise InvalidArgumentError(f"categorical column {d} has codes outside 0..{m - 1}")
    return levels, arities


# ---------------------------------------------------------------------------
# Public fitting API
# ---------------------------------------------------------------------------


def fit_gaussian_em(xa, K: int, cfg: EmConfig | None = None, diagonal: bool = False) -> MixtureFit:
    """Fit a K-component Gaussian mixture with a shared covariance by EM.

    Parameters
    ----------
    xa : array of shape (n, p_a)
        Continuous sensitive-related predictors.
    K : int
        Number of components.
    cfg : EmConfig, optional
        Iteration limits, tolerance, number of random restarts and seed.
    diagonal : bool
        Restrict the shared covariance to a diagonal matrix.

    Returns
    -------
    MixtureFit
        Components are sorted by ascending first mean coordinate. The fit
        unpacks as ``(params, posterior, loglik)``.
    """
    cfg = cfg or EmConfig()
    x = _check_continuous(xa)
    family = _Family("gaussian", None, _GaussianPart(x, diagonal), x.shape[0])
    return _run_em(family, int(K), cfg)


def fit_categorical_em(levels, K: int, cfg: EmConfig | None = None, arities=None) -> MixtureFit:
    """Fit a product-multinomial mixture by EM (levels coded from 0, -1 = missing)."""
    cfg = cfg or EmConfig()
    levels, arities = _check_levels(levels, arities)
    family = _Family("categorical", _CategoricalPart(levels, arities), None, levels.shape[0])
    return _run_em(family, int(K), cfg)


def fit_hybrid_em(levels, xa_cont, K: int, cfg: EmConfig | None = None, arities=None) -> MixtureFit:
    """Fit the hybrid categorical x diagonal-Gaussian mixture.

    Either block may have zero columns; with no categorical columns the fit is
    identical to ``fit_gaussian_em(..., diagonal=True)`` and with no continuous
    columns to ``fit_categorical_em``.
    """
    cfg = cfg or EmConfig()
    n = None
    cat = gauss = None
    if levels is not None and np.asarray(levels).size:
        lv, arities = _check_levels(levels, arities)
        cat = _CategoricalPart(lv, arities)
        n = lv.shape[0]
    if xa_cont is not None and np.asarray(xa_cont).size:
        x = _check_continuous(xa_cont)
        gauss = _GaussianPart(x, diagonal=True)
        if n is not None and x.shape[0] != n:
            raise InvalidArgumentError("categorical and continuous blocks have different row counts")
        n = x.shape[0]
    if n is None:
        raise InvalidArgumentError("hybrid mixture needs at least one categorical or continuous column")
    return _run_em(_Family("hybrid", cat, gauss, n), int(K), cfg)


# ---------------------------------------------------------------------------
# Evaluation at fixed parameters
# ---------------------------------------------------------------------------


def _split_data(params: MixtureParams, data):
    """Normalize ``data`` to the block layout expected by ``params``."""
    if isinstance(params, GaussianMixtureParams):
        x = np.asarray(data, dtype=float)
        p = params.means.shape[1]
        if x.ndim <= 1:
            x = x.reshape(-1, p)
        if x.shape[1] != p:
            raise InvalidArgumentError(f"expected {p} continuous columns, got {x.shape[1]}")
        return x
    if isinstance(params, CategoricalMixtureParams):
        lv = np.asarray(data)
        D = len(params.probs)
        return np.atleast_2d(lv).reshape(-1, D).astype(np.int64)
    levels, cont = data
    D = len(params.cat_part)
    M = params.gauss_means.shape[1]
    lv = np.asarray(levels if levels is not None else np.zeros((0,)), dtype=np.int64)
    cont = np.asarray(cont if cont is not None else np.zeros((0,)), dtype=float)
    n = max(lv.size // max(D, 1) if D else 0, cont.size // max(M, 1) if M else 0, 1)
    return lv.reshape(n, D), cont.reshape(n, M)


def _log_joint(params: MixtureParams, data) -> np.ndarray:
    block = _split_data(params, data)
    logp = np.log(params.mixing)[None, :]
    if isinstance(params, GaussianMixtureParams):
        part = _GaussianPart(block, diagonal=False)
        comp = {"means": params.means, "chol": np.linalg.cholesky(params.shared_cov)}
        return logp + part.log_density(comp)
    if isinstance(params, CategoricalMixtureParams):
        part = _CategoricalPart(*_check_levels(block, params.arities))
        return logp + part.log_density({"tables": list(params.probs)})
    lv, cont = block
    out = logp + np.zeros((max(lv.shape[0], cont.shape[0]), params.n_components))
    if lv.shape[1]:
        part = _CategoricalPart(*_check_levels(lv, [t.shape[1] for t in params.cat_part]))
        out = out + part.log_density({"tables": list(params.cat_part)})
    if cont.shape[1]:
        g = _GaussianPart(cont, diagonal=True)
        chol = np.diag(np.sqrt(params.gauss_vars))
        out = out + g.log_density({"means": params.gauss_means, "chol": chol})
    return out


def posterior_matrix(params: MixtureParams, data) -> GroupPosterior:
    """Posterior class probabilities for every row of ``data``."""
    lj = _log_joint(params, data)
    if not np.all(np.isfinite(lj)):
        bad = int(np.nonzero(~np.all(np.isfinite(lj), axis=0))[0][0])
        raise NumericError(f"non-finite density for component {bad}", component=bad)
    return GroupPosterior(np.exp(lj - logsumexp(lj, axis=1, keepdims=True)))


def posterior(params: MixtureParams, x) -> np.ndarray:
    """Posterior probability vector for a single observation.

    For hybrid params pass ``x`` as ``(levels_row, continuous_row)``.
    """
    return posterior_matrix(params, x).probs[0]


def map_classify(post) -> np.ndarray:
    """Posterior-mode labels (zero-based); ties go to the smallest index."""
    return np.argmax(as_probs(post), axis=1)


def log_likelihood(params: MixtureParams, data) -> float:
    """Observed-data log-likelihood ``sum_i log sum_k p_k f_k(x_i)``."""
    lj = _log_joint(params, data)
    ll = logsumexp(lj, axis=1)
    if not np.all(np.isfinite(ll)):
        raise NumericError("zero or non-finite marginal density")
    return float(ll.sum())
