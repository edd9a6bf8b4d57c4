"""Seeded data generators for the simulation scenarios and a curve runner.

Random streams
--------------
Every draw comes from ``numpy.random.Generator(PCG64(SeedSequence(seed,
spawn_key=key)))`` where ``key`` is ``(scenario_index, replicate)`` or
``(scenario_index, replicate, grid_index)`` for scenarios whose grid changes
the data. Normal variates are produced by inverse-CDF transformation of
uniforms with ``scipy.special.ndtri``; uniforms come from
``Generator.random``. Outputs are therefore pure functions of the scenario
and seed.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy.special import ndtri

from .errors import InvalidArgumentError
from .fair import residualize, tradeoff_curve
from .mixture import (
    CategoricalMixtureParams,
    EmConfig,
    fit_categorical_em,
    fit_gaussian_em,
    map_classify,
    posterior_matrix,
)
from .theory import (
    categorical_accuracy,
    gaussian_accuracy_uni,
    one_hot_covariance,
    r2_general,
    R2Inputs,
    separation_threshold,
)

_BASE_MU = separation_threshold([0.2, 0.3, 0.5], 0.05)

_DEFAULTS = {
    "gaussian-uni": dict(n=1000, mu_min=_BASE_MU, mixing=(0.2, 0.3, 0.5), sigma=1.0),
    "categorical": dict(n=10_000, p=0.5, theta1=(0.2, 0.6, 0.2), theta2=(0.4, 0.3, 0.5)),
    "r2": dict(n=1000, mu=6.0, p=0.7, sigma_e2=2.0, beta0=1.0, beta1=1.0, beta_z=(1.0, 1.0), sigma_eps=0.5),
    "ls": dict(
        n=100, mu=2.0, k=2.0, p=0.7, rho=0.5, n_unif=100, noise_sd=0.5,
        mixture_columns=(0, 1), model_columns=(0, 1, 4, 5),
    ),
    "logistic": dict(
        n=1000, mu=2.0, k=2.0, p=0.7, rho=0.5, n_unif=96, delta=1e-8,
        mixture_columns=(0, 1), model_columns=(0, 1, 4, 5, 6),
    ),
    "cat-classify": dict(
        n=1000, p=0.5, theta1=(0.1, 0.9, 0.5), theta2=(0.4, 0.7, 0.5),
        setting=1, coef=(), delta=1e-8,
    ),
}
SCENARIOS = tuple(_DEFAULTS)

_COEF = {1: (-1.0, 4.0, -1.0, -1.0), 2: (-4.0, 1.0, -1.0, 4.0)}

# what the tuning / accuracy / fairness / reference columns hold per scenario
_COLUMNS = {
    "gaussian-uni": ("mu_min", "EM posterior-mode accuracy (label aligned)", "", "theoretical accuracy"),
    "categorical": ("p", "Monte-Carlo posterior-mode accuracy at true parameters", "", "theoretical accuracy"),
    "r2": ("n", "empirical R_a^2 after residualizing on the true A", "", "population R_a^2"),
    "ls": ("epsilon", "SSE/SST", "R^2(y_hat | A_hat)", ""),
    "logistic": ("lambda", "training error rate", "MD of predicted classes", ""),
    "cat-classify": ("lambda", "training error rate", "MD of predicted classes", ""),
}
DEFAULT_GRIDS = {
    "gaussian-uni": (0.5, 1.0, 2.0, 3.0, _BASE_MU, 2 * _BASE_MU),
    "categorical": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "r2": (100, 1000, 10_000, 100_000),
    "ls": tuple(round(0.1 * i, 10) for i in range(11)),
    "logistic": (0.0, 0.1, 1.0, 3.0, 5.0, 10.0),
    "cat-classify": (0.0, 0.6, 1.2, 1.8, 2.4, 3.0),
}


@dataclass(frozen=True)
class Scenario:
    """A named simulation setting with validated parameters.

    ``params`` overrides the defaults of the named scenario; unknown keys are
    rejected.
    """

    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in _DEFAULTS:
            raise InvalidArgumentError(f"unknown scenario {self.name!r}; choose from {', '.join(SCENARIOS)}")
        unknown = set(self.params) - set(_DEFAULTS[self.name])
        if unknown:
            raise InvalidArgumentError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        merged = dict(_DEFAULTS[self.name])
        for key, value in self.params.items():
            merged[key] = _coerce(key, value, _DEFAULTS[self.name][key])
        _validate(self.name, merged)
        object.__setattr__(self, "params", MappingProxyType(merged))
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidArgumentError("seed must be a nonnegative integer")

    @property
    def n(self) -> int:
        return int(self.params["n"])

    @property
    def index(self) -> int:
        return SCENARIOS.index(self.name)

    def with_params(self, **kw) -> "Scenario":
        return Scenario(self.name, {**self.params, **kw}, self.seed)

    def rng(self, *key) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(self.index, *key))
        return np.random.Generator(np.random.PCG64(ss))


def _coerce(key, value, default):
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return tuple(type(default[0])(v) if default else float(v) for v in value)
    if isinstance(default, bool) or not isinstance(default, (int, float)):
        raise InvalidArgumentError(f"parameter {key} is not configurable")
    try:
        if isinstance(default, int):
            if float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        return float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"parameter {key} must be numeric, got {value!r}") from None


def _prob(name, v, open_=True):
    if not (0 < v < 1 if open_ else 0 <= v <= 1):
        raise InvalidArgumentError(f"{name} must lie in (0, 1), got {v}")


def _validate(name, p):
    if p["n"] < 2:
        raise InvalidArgumentError("n must be at least 2")
    if "p" in p:
        _prob("p", p["p"])
    if name == "gaussian-uni":
        mix = np.asarray(p["mixing"])
        if mix.size != 3 or np.any(mix <= 0) or abs(mix.sum() - 1) > 1e-9:
            raise InvalidArgumentError("mixing must be three positive weights summing to one")
        if not p["sigma"] > 0:
            raise InvalidArgumentError("sigma must be positive")
    if name in ("categorical", "cat-classify"):
        if len(p["theta1"]) != len(p["theta2"]) or not p["theta1"]:
            raise InvalidArgumentError("theta1 and theta2 must have equal, nonzero length")
        for t in p["theta1"] + p["theta2"]:
            _prob("theta", t)
    if name == "cat-classify":
        if p["coef"]:
            if len(p["coef"]) != len(p["theta1"]) + 1:
                raise InvalidArgumentError("coef needs an intercept plus one value per predictor")
        elif p["setting"] not in _COEF:
            raise InvalidArgumentError("setting must be 1 or 2")
        elif len(p["theta1"]) != 3:
            raise InvalidArgumentError("preset coefficient settings need three predictors")
    if name == "r2" and not (p["sigma_e2"] > 0 and p["sigma_eps"] > 0 and len(p["beta_z"]) >= 1):
        raise InvalidArgumentError("variances must be positive and beta_z non-empty")
    if name in ("ls", "logistic"):
        if not -1 < p["rho"] < 1:
            raise InvalidArgumentError("rho must lie in (-1, 1)")
        width = 4 + p["n_unif"]
        needed = 7 if name == "logistic" else 6
        if width < needed:
            raise InvalidArgumentError(f"n_unif too small: the response uses the first {needed} columns")
        for key in ("mixture_columns", "model_columns"):
            cols = p[key]
            if not cols or min(cols) < 0 or max(cols) >= width or len(set(cols)) != len(cols):
                raise InvalidArgumentError(f"{key} must be distinct column indices below {width}")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _normal(rng, size):
    return ndtri(rng.random(size))


def _bernoulli(rng, prob, size=None):
    return (rng.random(size) < prob).astype(int)


def _expect(scn, name):
    if scn.name != name:
        raise InvalidArgumentError(f"expected a {name!r} scenario, got {scn.name!r}")


def gen_gaussian_uni(scn: Scenario, *key):
    """Labels in {0, 1, 2} and draws with means ``0, mu_min, 2 mu_min + 1``."""
    _expect(scn, "gaussian-uni")
    p, n = scn.params, scn.n
    rng = scn.rng(*key)
    cum = np.cumsum(p["mixing"])
    labels = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), 2)
    means = np.array([0.0, p["mu_min"], 2 * p["mu_min"] + 1])
    x = means[labels] + p["sigma"] * _normal(rng, n)
    return labels, x


def gen_categorical(scn: Scenario, *key):
    """``A ~ Ber(p)``; predictor d is ``Ber(theta1[d])`` when A = 1, else ``Ber(theta2[d])``."""
    _expect(scn, "categorical")
    return _categorical_draw(scn, scn.rng(*key))


def _categorical_draw(scn, rng):
    p, n = scn.params, scn.n
    A = _bernoulli(rng, p["p"], n)
    th = np.where(A[:, None] == 1, np.asarray(p["theta1"])[None, :], np.asarray(p["theta2"])[None, :])
    X = (rng.random(th.shape) < th).astype(int)
    return A, X


def categorical_scenario_params(scn: Scenario) -> CategoricalMixtureParams:
    """True mixture parameters; component 0 is A = 1 (prior p)."""
    p = scn.params
    tables = tuple(np.array([[1 - a, a], [1 - b, b]]) for a, b in zip(p["theta1"], p["theta2"]))
    return CategoricalMixtureParams(np.array([p["p"], 1 - p["p"]]), tables)


def gen_r2_scenario(scn: Scenario, *key):
    """``x_a = mu A + e`` with ``A ~ Ber(p)``, uniform ``x_z`` and a linear response."""
    _expect(scn, "r2")
    p, n = scn.params, scn.n
    rng = scn.rng(*key)
    A = _bernoulli(rng, p["p"], n)
    xa = p["mu"] * A + np.sqrt(p["sigma_e2"]) * _normal(rng, n)
    bz = np.asarray(p["beta_z"])
    xz = rng.random((n, bz.size))
    y = p["beta0"] + p["beta1"] * xa + xz @ bz + p["sigma_eps"] * _normal(rng, n)
    return A, xa, xz, y


def r2_scenario_inputs(scn: Scenario) -> R2Inputs:
    p = scn.params
    pz = len(p["beta_z"])
    return R2Inputs(
        beta_a=[p["beta1"]],
        beta_z=p["beta_z"],
        mu=[[0.0], [p["mu"]]],
        sigma_A=one_hot_covariance([1 - p["p"], p["p"]]),
        sigma_e=[[p["sigma_e2"]]],
        sigma_xz=np.eye(pz) / 12.0,
        sigma_12=np.zeros((1, pz)),
        sigma_eps2=p["sigma_eps"] ** 2,
    )


def _two_mixtures(scn, rng, n_unif):
    p, n = scn.params, scn.n
    A = _bernoulli(rng, p["p"], n)
    L = np.linalg.cholesky(np.array([[1.0, p["rho"]], [p["rho"], 1.0]]))
    Z12 = _normal(rng, (n, 2)) @ L.T
    Z34 = _normal(rng, (n, 2)) @ L.T
    Z12[:, 0] += p["mu"] * A
    Z34[:, 0] += p["k"] * p["mu"] * A
    U = -2.0 + 4.0 * rng.random((n, n_unif))
    return A, np.column_stack([Z12, Z34, U])


def gen_ls_scenario(scn: Scenario, *key):
    """Columns ``Z1..Z4`` from two bivariate mixtures, then uniforms; ``y = Z1+Z2+Z5+Z6+noise``."""
    _expect(scn, "ls")
    rng = scn.rng(*key)
    A, Z = _two_mixtures(scn, rng, scn.params["n_unif"])
    y = Z[:, 0] + Z[:, 1] + Z[:, 4] + Z[:, 5] + scn.params["noise_sd"] * _normal(rng, scn.n)
    return A, Z, y


def gen_logistic_scenario(scn: Scenario, *key):
    """Same mixtures; ``Y ~ Ber(expit(1 + Z1 + Z2 + Z5 + Z6 + Z7))``."""
    _expect(scn, "logistic")
    rng = scn.rng(*key)
    A, Z = _two_mixtures(scn, rng, scn.params["n_unif"])
    eta = 1.0 + Z[:, 0] + Z[:, 1] + Z[:, 4] + Z[:, 5] + Z[:, 6]
    y = _bernoulli(rng, 1.0 / (1.0 + np.exp(-eta)), eta.shape)
    return A, Z, y


def cat_classify_coef(scn: Scenario) -> np.ndarray:
    p = scn.params
    return np.asarray(p["coef"] if p["coef"] else _COEF[p["setting"]], dtype=float)


def gen_cat_classify_scenario(scn: Scenario, *key):
    """Categorical mixture predictors and ``Y ~ Ber(expit(c0 + X @ c))``."""
    _expect(scn, "cat-classify")
    rng = scn.rng(*key)
    A, X = _categorical_draw(scn, rng)
    c = cat_classify_coef(scn)
    eta = c[0] + X @ c[1:]
    y = _bernoulli(rng, 1.0 / (1.0 + np.exp(-eta)), eta.shape)
    return A, X, y


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def aligned_accuracy(true, pred, K: int) -> float:
    """Fraction correct after the best relabeling of estimated components (K <= 6)."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    if K > 6:
        raise InvalidArgumentError("label alignment by enumeration supports K <= 6")
    return max(float(np.mean(np.asarray(perm)[pred] == true)) for perm in itertools.permutations(range(K)))


def _em_seed(rng) -> int:
    return int(rng.integers(2**31 - 1))


def _mc_posterior_mode_accuracy(params, A, X):
    pred = map_classify(posterior_matrix(params, X))
    truth = np.where(A == 1, 0, 1)  # component 0 is A = 1
    return float(np.mean(pred == truth))


def _point_rows(scn, grid, r):
    rows = []
    for g, value in enumerate(grid):
        if scn.name == "gaussian-uni":
            s = scn.with_params(mu_min=value)
            labels, x = gen_gaussian_uni(s, r, g)
            fit = fit_gaussian_em(x, 3, EmConfig(seed=_em_seed(s.rng(r, g, 1))))
            acc = aligned_accuracy(labels, map_classify(fit.posterior), 3)
            means = [0.0, value, 2 * value + 1]
            ref = gaussian_accuracy_uni(means, s.params["sigma"], s.params["mixing"])
            rows.append((r, value, acc, None, ref))
        elif scn.name == "categorical":
            s = scn.with_params(p=value)
            A, X = gen_categorical(s, r, g)
            params = categorical_scenario_params(s)
            rows.append((r, value, _mc_posterior_mode_accuracy(params, A, X), None, categorical_accuracy(params)))
        else:
            s = scn.with_params(n=int(value))
            A, xa, xz, y = gen_r2_scenario(s, r, g)
            rows.append((r, int(value), empirical_r2_after_residualizing(A, xa, xz, y), None, r2_general(r2_scenario_inputs(s))[1]))
    return rows


def empirical_r2_after_residualizing(A, xa, xz, y) -> float:
    """R^2 of ``y`` on the residuals of ``[x_a, x_z]`` regressed on the known labels."""
    A = np.asarray(A)
    onehot = np.column_stack([A == 0, A == 1]).astype(float)
    U = residualize(np.column_stack([xa, xz]), onehot).residuals
    D = np.column_stack([np.ones(len(y)), U])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = y - D @ coef
    yc = y - y.mean()
    return float(1.0 - resid @ resid / (yc @ yc))


def _curve_rows(scn, grid, r):
    p = scn.params
    rng_fit = scn.rng(r, 1)
    if scn.name == "ls":
        A, Z, y = gen_ls_scenario(scn, r)
    elif scn.name == "logistic":
        A, Z, y = gen_logistic_scenario(scn, r)
    else:
        A, Z, y = gen_cat_classify_scenario(scn, r)
    cfg = EmConfig(seed=_em_seed(rng_fit))
    if scn.name == "cat-classify":
        fit = fit_categorical_em(Z, 2, cfg)
        model = Z.astype(float)
    else:
        fit = fit_gaussian_em(Z[:, list(p["mixture_columns"])], 2, cfg)
        model = Z[:, list(p["model_columns"])]
    U = residualize(model, fit.posterior).residuals
    task = "regression" if scn.name == "ls" else "classification"
    curve = tradeoff_curve(y, fit.posterior, U, grid, task=task, delta=p.get("delta", 1e-8))
    return [(r, pt.tuning, pt.loss, pt.fairness, None) for pt in curve.points]


HEADER = ("replicate", "tuning", "accuracy", "fairness", "reference")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def run_scenario(scn: Scenario, grid=None, replicates: int = 1, out_dir: str | None = None):
    """Evaluate ``scn`` over ``grid`` for each replicate.

    Returns rows ``(replicate, tuning, accuracy, fairness, reference)``,
    ordered by replicate then grid value; the meaning of each column per
    scenario is recorded in the manifest. With ``out_dir`` a CSV and a
    manifest JSON are written there.
    """
    grid = list(DEFAULT_GRIDS[scn.name] if grid is None else grid)
    if replicates < 1:
        raise InvalidArgumentError("replicates must be >= 1")
    rows = []
    if grid:
        for r in range(replicates):
            if scn.name in ("gaussian-uni", "categorical", "r2"):
                rows.extend(_point_rows(scn, grid, r))
            else:
                rows.extend(_curve_rows(scn, grid, r))
    if out_dir is not None:
        write_outputs(scn, grid, replicates, rows, out_dir)
    return rows


def manifest(scn: Scenario, grid, replicates) -> dict:
    cols = _COLUMNS[scn.name]
    notes = ["normal draws use the inverse normal CDF of PCG64 uniforms"]
    if scn.name in ("logistic", "cat-classify"):
        notes.append("MD is computed on predicted classes; error rate and MD are in-sample")
    if scn.name == "cat-classify":
        notes.append("the linear score is used as the logit of a Bernoulli response")
    return {
        "scenario": scn.name,
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in scn.params.items()},
        "seed": int(scn.seed),
        "replicates": int(replicates),
        "grid": [float(g) for g in grid],
        "rng": {
            "bit_generator": "PCG64",
            "seeding": "SeedSequence(seed, spawn_key=(scenario_index, replicate[, grid_index]))",
            "scenario_index": scn.index,
        },
        "columns": dict(zip(HEADER[1:], cols)),
        "notes": notes,
        "files": [f"{scn.name}.csv"],
    }


def write_outputs(scn, grid, replicates, rows, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{scn.name}.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))
    with open(os.path.join(out_dir, f"{scn.name}.manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest(scn, grid, replicates), fh, indent=2, sort_keys=True)
        fh.write("\n")
