"""Closed-form quantities: identifiability counting, posterior-mode accuracy,
separation thresholds and the R^2 accuracy/fairness trade-off."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidArgumentError, TooLargeError
from .mixture import CategoricalMixtureParams

DEFAULT_CELL_CAP = 2**20
# likelihood ratios this close to the prior ratio are treated as exact ties
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class IdentifiabilityVerdict:
    n_mix: int
    n_joint: int
    identifiable: bool


@dataclass(frozen=True)
class TheoryReport:
    quantity: str
    value: float
    inputs: dict = field(default_factory=dict)
    method: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidArgumentError(f"{self.quantity}: non-finite value")

    def to_json(self) -> dict:
        return {"quantity": self.quantity, "value": float(self.value), "inputs": self.inputs, "method": self.method}


def identifiability_check(K: int, arities: Sequence[int]) -> IdentifiabilityVerdict:
    """Compare mixture free parameters with the joint table's degrees of freedom."""
    arities = [int(m) for m in arities]
    if not arities:
        raise InvalidArgumentError("at least one categorical predictor is required")
    if K < 2:
        raise InvalidArgumentError("K must be >= 2")
    if min(arities) < 2:
        raise InvalidArgumentError("every predictor needs at least two levels")
    n_mix = (K - 1) + K * sum(m - 1 for m in arities)
    n_joint = math.prod(arities) - 1
    return IdentifiabilityVerdict(n_mix, n_joint, n_joint >= n_mix)


def _check_mixing(mixing) -> np.ndarray:
    p = np.asarray(mixing, dtype=float).ravel()
    if p.size < 1 or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"mixing must be a positive probability vector, got {p}")
    return p


def _pairwise_win(dist: float, pk: float, pl: float, k: int, l: int) -> float:
    """P(class k beats class l | A = k) for standardized separation ``dist``."""
    if dist == 0.0:
        # limit of the Gaussian tail: larger prior wins, ties to the smaller index
        if pk != pl:
            return 1.0 if pk > pl else 0.0
        return 1.0 if k < l else 0.0
    return float(ndtr(dist / 2.0 - math.log(pl / pk) / dist))


def _product_accuracy(dist: np.ndarray, p: np.ndarray) -> float:
    K = p.size
    total = 0.0
    for k in range(K):
        term = p[k]
        for l in range(K):
            if l != k:
                term *= _pairwise_win(float(dist[k, l]), p[k], p[l], k, l)
        total += term
    return float(total)


def gaussian_accuracy_multi(means, sigma_e, mixing) -> float:
    """Posterior-mode accuracy of a shared-covariance Gaussian mixture.

    Uses the product over pairwise comparisons of whitened means. Exact for
    K = 2; for K >= 3 the pairwise events are dependent and the product is an
    approximation (compare with ``oracles.mc_classification_accuracy``).
    """
    mu = np.asarray(means, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    p = _check_mixing(mixing)
    if mu.shape[0] != p.size:
        raise InvalidArgumentError("means must be K x p_a with one row per mixing weight")
    S = np.atleast_2d(np.asarray(sigma_e, dtype=float))
    L = np.linalg.cholesky(S)
    white = np.linalg.solve(L, mu.T).T
    diff = white[:, None, :] - white[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    return _product_accuracy(dist, p)


def gaussian_accuracy_uni(mus, sigma_e: float, mixing) -> float:
    """Univariate case of :func:`gaussian_accuracy_multi` with separations |mu_k - mu_l| / sigma_e."""
    mus = np.asarray(mus, dtype=float).ravel()
    if not sigma_e > 0:
        raise InvalidArgumentError("sigma_e must be positive")
    p = _check_mixing(mixing)
    dist = np.abs(mus[:, None] - mus[None, :]) / sigma_e
    return _product_accuracy(dist, p)


def separation_threshold(mixing, alpha: float) -> float:
    """Minimum standardized separation guaranteeing accuracy above ``1 - alpha``.

    With ``alpha' = 1 - (1 - alpha)^(1/(K-1))`` and ``z = Phi^{-1}(alpha')``
    returns ``sqrt(2 log(p_max/p_min) + z^2) - z``.
    """
    p = _check_mixing(mixing)
    K = p.size
    if K < 2:
        raise InvalidArgumentError("K must be >= 2")
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    alpha_pair = -math.expm1(math.log1p(-alpha) / (K - 1))
    z = float(ndtri(alpha_pair))
    return math.sqrt(2.0 * math.log(p.max() / p.min()) + z * z) - z


def _cells(arities, cap):
    n_cells = math.prod(arities)
    if n_cells > cap:
        raise TooLargeError(
            f"{n_cells} category combinations exceed the enumeration cap {cap}; "
            "use oracles.mc_classification_accuracy instead"
        )
    return itertools.product(*[range(m) for m in arities])


def categorical_accuracy(params: CategoricalMixtureParams, cap: int = DEFAULT_CELL_CAP) -> float:
    """Exact posterior-mode accuracy of a product-multinomial mixture.

    Sums ``p_k * P(cell | k)`` over the cells where class k beats every other
    class on the likelihood-ratio test ``prod_d theta_k/theta_l > p_l/p_k``
    (equality, up to a relative ``TIE_RTOL``, counts as a win for the
    smaller index). A class that wins every cell contributes exactly its
    prior, so non-identifiable tables give ``max(p)`` without rounding.
    """
    p = np.asarray(params.mixing, dtype=float)
    tables = params.probs
    K = p.size
    won = [[] for _ in range(K)]
    lost = [0] * K
    for cell in _cells(params.arities, cap):
        theta = np.array([[tables[d][k, j] for d, j in enumerate(cell)] for k in range(K)])
        for k in range(K):
            wins = True
            for l in range(K):
                if l == k:
                    continue
                ratio = float(np.prod(theta[k] / theta[l]))
                bound = p[l] / p[k]
                tie = abs(ratio - bound) <= TIE_RTOL * bound
                if not ((ratio > bound and not tie) or (tie and k < l)):
                    wins = False
                    break
            if wins:
                won[k].append(float(np.prod(theta[k])))
            else:
                lost[k] += 1
    # a class that wins every cell is correct with conditional probability exactly 1
    return math.fsum(p[k] * (1.0 if lost[k] == 0 else math.fsum(won[k])) for k in range(K))


def categorical_accuracy_binary(p: float, theta1: float, theta2: float) -> float:
    """Accuracy for one binary predictor and two classes (class 1 has prior p)."""
    for name, v in (("p", p), ("theta1", theta1), ("theta2", theta2)):
        if not 0 < v < 1:
            raise InvalidArgumentError(f"{name} must lie strictly inside (0, 1), got {v}")
    # class 1 wins ties, matching the smaller-index rule of the general formula
    prior_ratio = (1 - p) / p * (1 - TIE_RTOL)
    m = 1.0 if theta1 / theta2 >= prior_ratio else 0.0
    n = 1.0 if (1 - theta1) / (1 - theta2) >= prior_ratio else 0.0
    return (m - n) * (p * theta1 - (1 - p) * theta2) + n * (2 * p - 1) + (1 - p)


@dataclass(frozen=True)
class R2Inputs:
    """Population quantities of the linear model with a Gaussian-mixture block.

    ``mu`` is K x p_a (row k = mean of the sensitive block in class k) and
    ``sigma_A`` the covariance of the one-hot class indicator.
    """

    beta_a: np.ndarray
    beta_z: np.ndarray
    mu: np.ndarray
    sigma_A: np.ndarray
    sigma_e: np.ndarray
    sigma_xz: np.ndarray
    sigma_12: np.ndarray
    sigma_eps2: float

    def __post_init__(self):
        ba = np.atleast_1d(np.asarray(self.beta_a, dtype=float))
        bz = np.asarray(self.beta_z, dtype=float).ravel()
        pa, pz = ba.size, bz.size
        fields = {
            "beta_a": ba,
            "beta_z": bz,
            "mu": np.asarray(self.mu, dtype=float).reshape(-1, pa),
            "sigma_A": np.atleast_2d(np.asarray(self.sigma_A, dtype=float)),
            "sigma_e": np.asarray(self.sigma_e, dtype=float).reshape(pa, pa),
            "sigma_xz": np.asarray(self.sigma_xz, dtype=float).reshape(pz, pz),
            "sigma_12": np.asarray(self.sigma_12, dtype=float).reshape(pa, pz),
        }
        for k, v in fields.items():
            object.__setattr__(self, k, v)
        K = fields["mu"].shape[0]
        if fields["sigma_A"].shape != (K, K):
            raise InvalidArgumentError("sigma_A must be K x K with K = rows of mu")
        if not self.sigma_eps2 > 0:
            raise InvalidArgumentError("sigma_eps2 must be positive")
        SA = fields["sigma_A"]
        _check_psd(SA, "sigma_A")
        if np.max(np.abs(SA.sum(axis=1)), initial=0.0) > 1e-9 * max(1.0, np.abs(SA).max()):
            raise InvalidArgumentError("sigma_A rows must sum to zero (one-hot covariance)")
        _check_psd(fields["sigma_e"], "sigma_e")
        _check_psd(fields["sigma_xz"], "sigma_xz")
        S1 = fields["mu"].T @ SA @ fields["mu"] + fields["sigma_e"]
        block = np.block([[S1, fields["sigma_12"]], [fields["sigma_12"].T, fields["sigma_xz"]]])
        _check_psd(block, "joint predictor covariance")


def _check_psd(M: np.ndarray, name: str) -> None:
    if M.size == 0:
        return
    if np.max(np.abs(M - M.T)) > 1e-9 * max(1.0, np.abs(M).max()):
        raise InvalidArgumentError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if lo < -1e-10 * max(1.0, np.abs(M).max()):
        raise InvalidArgumentError(f"{name} must be positive semidefinite (min eigenvalue {lo:.3g})")


def one_hot_covariance(mixing) -> np.ndarray:
    """Covariance of a one-hot class indicator, ``diag(p) - p p^T``."""
    p = _check_mixing(mixing)
    return np.diag(p) - np.outer(p, p)


def r2_general(inp: R2Inputs) -> tuple[float, float]:
    """Population ``(R_x^2, R_a^2)`` before and after residualizing on the class indicator.

    The cross-covariance term enters the explained variance twice
    (``2 beta_a^T Sigma_12 beta_z``), as in the variance of a sum.
    """
    ba, bz = inp.beta_a, inp.beta_z
    group = float(ba @ inp.mu.T @ inp.sigma_A @ inp.mu @ ba)
    n_a = float(ba @ inp.sigma_e @ ba + bz @ inp.sigma_xz @ bz + 2.0 * ba @ inp.sigma_12 @ bz)
    n_x = n_a + group
    denom = n_x + inp.sigma_eps2
    return n_x / denom, n_a / denom


def r2_univariate(beta1: float, mu: float, p: float, sigma_e: float, sigma_eps: float) -> tuple[float, float]:
    """``(R_x^2, R_a^2)`` for one Gaussian predictor whose mean shifts by ``mu`` when A = 1."""
    if not 0 < p < 1:
        raise InvalidArgumentError("p must lie in (0, 1)")
    if not (sigma_e > 0 and sigma_eps > 0):
        raise InvalidArgumentError("sigma_e and sigma_eps must be positive")
    b2 = beta1 * beta1
    group = b2 * p * (1 - p) * mu * mu
    denom = group + b2 * sigma_e**2 + sigma_eps**2
    return (group + b2 * sigma_e**2) / denom, b2 * sigma_e**2 / denom


def r2_univariate_inputs(beta1, mu, p, sigma_e, sigma_eps) -> R2Inputs:
    """The :class:`R2Inputs` equivalent of the univariate binary model."""
    return R2Inputs(
        beta_a=[beta1],
        beta_z=np.zeros(0),
        mu=[[0.0], [mu]],
        sigma_A=one_hot_covariance([1 - p, p]),
        sigma_e=[[sigma_e**2]],
        sigma_xz=np.zeros((0, 0)),
        sigma_12=np.zeros((1, 0)),
        sigma_eps2=sigma_eps**2,
    )
