"""Choose which predictors drive the mixture estimate of the sensitive attribute."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FairnessWarning, InvalidArgumentError, LatentFairError
from .fair import OptimizerConfig, fit_fair_logistic, fit_fair_ls, residualize
from .metrics import mean_distance
from .mixture import EmConfig, fit_gaussian_em


@dataclass(frozen=True)
class ScreeningConfig:
    """Settings for :func:`screen_predictors`.

    ``model_columns`` selects the predictors used downstream (default: all
    columns of ``X``). ``epsilon`` / ``lam`` are the fairness tuning values of
    the downstream fit. For classification the default criterion minimizes MD
    among candidates whose training error is within ``accuracy_floor`` of the
    best candidate; ``criterion="error"`` ranks by error rate instead.
    """

    em: EmConfig = field(default_factory=EmConfig)
    model_columns: tuple | None = None
    epsilon: float = 0.0
    lam: float = 1.0
    delta: float = 1e-8
    criterion: str = "md"
    accuracy_floor: float | None = 0.05
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class ScreeningResult:
    candidate: tuple
    criterion: float
    chosen: bool = False
    error_rate: float | None = None
    failed: str | None = None

    def to_json(self) -> dict:
        return {
            "candidate": list(self.candidate),
            "criterion": self.criterion,
            "chosen": self.chosen,
            "error_rate": self.error_rate,
            "failed": self.failed,
        }


def _score_regression(y, P, U, cfg):
    fit = fit_fair_ls(y, P, U, cfg.epsilon)
    y_hat = fit.predict(P, U)
    if np.std(y_hat) == 0 or np.std(y) == 0:
        return 0.0, None
    return float(np.corrcoef(y_hat, y)[0, 1]), None


def _score_classification(y, P, U, cfg):
    fit = fit_fair_logistic(y, P, U, cfg.lam, cfg.delta, cfg.opt)
    y_pred = fit.predict(P, U)
    err = float(np.mean(y_pred != y))
    if cfg.criterion == "error":
        return err, err
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FairnessWarning)
        return mean_distance(P, y_pred), err


def candidate_em(em: EmConfig, index: int) -> EmConfig:
    """EM settings for candidate ``index`` with a seed derived from ``em.seed``."""
    seed = int(np.random.SeedSequence([int(em.seed), int(index)]).generate_state(1, np.uint64)[0])
    return replace(em, seed=seed)


def screen_predictors(X, y, candidates, task: str = "regression", K: int = 2, cfg: ScreeningConfig | None = None):
    """Score each candidate column set and flag the best one.

    For each candidate a Gaussian mixture with ``K`` components is fitted on
    those columns, the model columns are residualized on the posterior and
    the fair model is fitted. Regression maximizes ``Cor(y_hat, y)``;
    classification minimizes MD (or the error rate). A candidate whose fit
    fails gets the worst possible score and a warning. Ties go to the
    earlier candidate. Candidate ``j`` runs EM with a seed derived from
    ``(cfg.em.seed, j)``, so its score does not depend on the other candidates.

    Returns
    -------
    list of ScreeningResult
        In candidate order, exactly one with ``chosen=True``.
    """
    cfg = cfg or ScreeningConfig()
    if task not in ("regression", "classification"):
        raise InvalidArgumentError(f"unknown task {task!r}")
    if cfg.criterion not in ("md", "error"):
        raise InvalidArgumentError(f"unknown screening criterion {cfg.criterion!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    cands = [tuple(int(c) for c in np.atleast_1d(cand)) for cand in candidates]
    if not cands or any(len(c) == 0 for c in cands):
        raise InvalidArgumentError("candidates must be a non-empty list of non-empty column sets")
    model = X if cfg.model_columns is None else X[:, list(cfg.model_columns)]
    maximize = task == "regression"
    # finite sentinels: correlations lie in [-1, 1], MD and error rates of 0/1 predictions in [0, 1]
    worst = -1.0 if maximize else 1.0

    results = []
    for j, cand in enumerate(cands):
        try:
            fit = fit_gaussian_em(X[:, list(cand)], K, candidate_em(cfg.em, j))
            U = residualize(model, fit.posterior).residuals
            score = _score_regression if task == "regression" else _score_classification
            value, err = score(y, fit.posterior.probs, U, cfg)
            results.append(ScreeningResult(cand, value, error_rate=err))
        except (LatentFairError, np.linalg.LinAlgError, ValueError) as exc:
            warnings.warn(f"candidate {cand} failed: {exc}", FairnessWarning, stacklevel=2)
            results.append(ScreeningResult(cand, worst, failed=f"{type(exc).__name__}: {exc}"))

    eligible = [r for r in results if r.failed is None]
    if task == "classification" and cfg.criterion == "md" and cfg.accuracy_floor is not None and eligible:
        best_err = min(r.error_rate for r in eligible)
        eligible = [r for r in eligible if r.error_rate <= best_err + cfg.accuracy_floor]
    pool = eligible or results
    key = (lambda r: -r.criterion) if maximize else (lambda r: r.criterion)
    min(pool, key=key).chosen = True
    return results
