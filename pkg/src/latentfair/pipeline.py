"""End-to-end run: mixture fit, residualization, fair fit and test-split metrics."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DesignPartition, write_csv
from .errors import FairnessWarning, InvalidArgumentError, LatentFairError
from .fair import OptimizerConfig, fit_fair_logistic, fit_fair_ls, r2_on_groups, residualize
from .metrics import auc, classification_report, mean_distance
from .mixture import EmConfig, fit_categorical_em, fit_gaussian_em, fit_hybrid_em, map_classify, posterior_matrix


class StageError(LatentFairError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class ModelConfig:
    task: str = "classification"
    K: int = 2
    grid: tuple = (0.0,)
    delta: float = 1e-8
    em: EmConfig = field(default_factory=EmConfig)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise InvalidArgumentError(f"unknown task {self.task!r}")
        if int(self.K) < 2:
            raise InvalidArgumentError("K must be at least 2")
        self.grid = tuple(float(v) for v in self.grid)
        if not self.grid:
            raise InvalidArgumentError("at least one tuning value is required")


@dataclass
class MixtureStage:
    fit: object
    post_train: np.ndarray
    post_test: np.ndarray


def _staged(stage, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (LatentFairError, np.linalg.LinAlgError, ArithmeticError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc


def fit_mixture_stage(part: DesignPartition, K: int, em: EmConfig) -> MixtureStage:
    """Fit the mixture family implied by the column roles on the training split."""
    tr = part.train
    if part.family == "gaussian":
        fit = _staged("mixture", fit_gaussian_em, tr.sens_cont, K, em)
    elif part.family == "categorical":
        fit = _staged("mixture", fit_categorical_em, tr.sens_levels, K, em, part.arities)
    else:
        fit = _staged("mixture", fit_hybrid_em, tr.sens_levels, tr.sens_cont, K, em, part.arities)
    post_test = _staged("mixture", posterior_matrix, fit.params, part.test.mixture_data())
    return MixtureStage(fit, fit.posterior.probs, post_test.probs)


def _prediction_rows(design, post, values):
    labels = map_classify(post)
    return [(int(r), float(yv), *vals, int(g)) for r, yv, *vals, g in zip(design.rows, design.y, *values, labels)]


def run_pipeline(part: DesignPartition, cfg: ModelConfig, out_dir: str | None = None):
    """Run every grid value and return ``(results, warnings)``.

    Each result holds the fit JSON, test-split metrics and, with
    ``out_dir``, the path of the predictions CSV.
    """
    notes = list(part.warnings)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FairnessWarning)
        stage = fit_mixture_stage(part, cfg.K, cfg.em)
        notes.extend(stage.fit.warnings)
        X_tr = part.train.other
        if X_tr.shape[1] == 0:
            raise StageError("residualize", InvalidArgumentError("no predictors besides the sensitive-related ones"))
        res = _staged("residualize", residualize, X_tr, stage.post_train)
        notes.extend(res.warnings)
        U_tr = res.residuals
        U_te = res.apply(part.test.other, stage.post_test)
        y_tr, y_te = part.train.y, part.test.y
        if cfg.task == "classification" and not np.all(np.isin(np.r_[y_tr, y_te], (0.0, 1.0))):
            raise StageError("load", InvalidArgumentError("classification needs a 0/1 response (see positive_label)"))

        results = []
        for value in cfg.grid:
            if cfg.task == "regression":
                fit = _staged("fit", fit_fair_ls, y_tr, stage.post_train, U_tr, value)
                pred = fit.predict(stage.post_test, U_te)
                resid = y_te - pred
                sst = float(np.sum((y_te - y_te.mean()) ** 2))
                metrics = {
                    "mse": float(np.mean(resid**2)),
                    "r2": float(1 - resid @ resid / sst) if sst > 0 else None,
                    "r2_given_A": r2_on_groups(pred, stage.post_test),
                    "md": _safe(mean_distance, stage.post_test, pred),
                }
                columns = [pred]
                header = ["row", "y", "y_hat", "group"]
            else:
                fit = _staged("fit", fit_fair_logistic, y_tr, stage.post_train, U_tr, value, cfg.delta, cfg.opt)
                prob = fit.predict_proba(stage.post_test, U_te)
                y_pred = (prob >= 0.5).astype(int)
                # gaps use the true groups when the schema provides them
                truth = part.test.true_sensitive
                binary_truth = truth if truth is not None and set(np.unique(truth)) <= {0, 1} else None
                report = classification_report(y_pred, y_te, stage.post_test, truth, binary_truth)
                metrics = report.to_json()
                metrics["error_rate"] = 1.0 - report.acc
                columns = [prob, y_pred.tolist()]
                header = ["row", "y", "prob", "y_pred", "group"]
            entry = {"fit": fit.to_json(), "metrics": metrics}
            if out_dir is not None:
                tag = f"{value:g}".replace("-", "m")
                path = os.path.join(out_dir, f"predictions_{tag}.csv")
                os.makedirs(out_dir, exist_ok=True)
                write_csv(path, header, _prediction_rows(part.test, stage.post_test, columns))
                entry["predictions"] = path
            results.append(entry)
        mixture = stage.fit.to_json()
        if part.test.true_sensitive is not None and stage.post_test.shape[1] == 2:
            truth = part.test.true_sensitive
            if set(np.unique(truth)) == {0, 1}:
                a = _safe(auc, stage.post_test[:, 1], truth)
                mixture["test_auc"] = None if a is None else max(a, 1 - a)
    notes.extend(str(w.message) for w in caught)
    return {"mixture": mixture, "fits": results, "data": _data_summary(part)}, notes


def _safe(fn, *args):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FairnessWarning)
            return fn(*args)
    except LatentFairError:
        return None


def _data_summary(part: DesignPartition) -> dict:
    return {
        "n_train": part.train.n,
        "n_test": part.test.n,
        "family": part.family,
        "arities": list(part.arities),
        "other_columns": part.other_names,
        "dropped_rows": part.dropped_rows,
        "level_maps": part.level_maps,
    }
