"""Fairness and accuracy metrics on estimated or observed groups."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import FairnessWarning, InvalidArgumentError, UndefinedMetricError
from .mixture import as_probs, map_classify

EMPTY_WEIGHT = 1e-12


def mean_distance(A_hat, y) -> float:
    """Largest gap between posterior-weighted response means of the estimated groups.

    Each observation is assigned to its posterior mode and weighted by
    ``max_k a_ik - 1/K`` (its confidence above the uniform posterior).
    Groups whose total weight is below ``1e-12`` are skipped with a
    :class:`FairnessWarning`.

    Parameters
    ----------
    A_hat : GroupPosterior or (n, K) array
    y : (n,) array
        Response or predictions.

    Raises
    ------
    UndefinedMetricError
        If fewer than two groups carry weight.
    """
    P = as_probs(A_hat)
    y = np.asarray(y, dtype=float).ravel()
    n, K = P.shape
    if y.size != n:
        raise InvalidArgumentError("A_hat and y must have the same number of rows")
    if n < 2:
        raise UndefinedMetricError("mean distance needs at least two observations")
    labels = map_classify(P)
    w = P.max(axis=1) - 1.0 / K
    means = []
    for k in range(K):
        mask = labels == k
        total = w[mask].sum()
        if total < EMPTY_WEIGHT:
            if mask.any():
                warnings.warn(f"group {k} has negligible posterior weight; excluded from MD", FairnessWarning, stacklevel=2)
            continue
        means.append(float(w[mask] @ y[mask]) / total)
    if len(means) < 2:
        raise UndefinedMetricError("mean distance needs at least two weighted groups")
    return float(max(means) - min(means))


def _groups(groups, n):
    g = np.asarray(groups).ravel()
    if g.size != n:
        raise InvalidArgumentError("groups must have one label per observation")
    return g


def _binary(v, name):
    v = np.asarray(v).ravel()
    if not np.all((v == 0) | (v == 1)):
        raise InvalidArgumentError(f"{name} must be binary (0/1)")
    return v.astype(int)


def _spread(values):
    return max(values) - min(values) if len(values) >= 2 else None


def delta_eo(y_pred, y, groups) -> float:
    """Equalized-odds gap: the larger of the TPR range and the FPR range across groups.

    A group without positives (or negatives) is left out of the TPR (FPR)
    comparison with a warning.
    """
    y_pred = _binary(y_pred, "y_pred")
    y = _binary(y, "y")
    if y.size != y_pred.size:
        raise InvalidArgumentError("y_pred and y must have the same length")
    g = _groups(groups, y.size)
    tpr, fpr = [], []
    for level in np.unique(g):
        m = g == level
        pos, neg = m & (y == 1), m & (y == 0)
        if pos.any():
            tpr.append(y_pred[pos].mean())
        else:
            warnings.warn(f"group {level!r} has no positives; TPR excluded", FairnessWarning, stacklevel=2)
        if neg.any():
            fpr.append(y_pred[neg].mean())
        else:
            warnings.warn(f"group {level!r} has no negatives; FPR excluded", FairnessWarning, stacklevel=2)
    gaps = [s for s in (_spread(tpr), _spread(fpr)) if s is not None]
    if not gaps:
        raise UndefinedMetricError("equalized-odds gap needs two groups with a defined rate")
    return float(max(gaps))


def delta_dp(y_pred, groups) -> float:
    """Demographic-parity gap: range of positive-prediction rates across groups."""
    y_pred = _binary(y_pred, "y_pred")
    g = _groups(groups, y_pred.size)
    rates = [y_pred[g == level].mean() for level in np.unique(g)]
    if len(rates) < 2:
        raise UndefinedMetricError("demographic-parity gap needs at least two groups")
    return float(max(rates) - min(rates))


def auc(scores, labels) -> float:
    """Area under the ROC curve from the rank-sum statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = _binary(labels, "labels")
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def accuracy(y_pred, y) -> float:
    y_pred = np.asarray(y_pred).ravel()
    y = np.asarray(y).ravel()
    if y.size == 0 or y.size != y_pred.size:
        raise InvalidArgumentError("y_pred and y must be non-empty and of equal length")
    return float(np.mean(y_pred == y))


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    delta_eo: float | None
    delta_dp: float | None
    md: float | None
    auc: float | None = None

    def __post_init__(self):
        for name in ("acc", "delta_eo", "delta_dp", "auc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name}={v} outside [0, 1]")
        if self.md is not None and self.md < 0:
            raise InvalidArgumentError("md must be nonnegative")

    def to_json(self) -> dict:
        return {"acc": self.acc, "delta_eo": self.delta_eo, "delta_dp": self.delta_dp, "md": self.md, "auc": self.auc}


def _quiet(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def classification_report(y_pred, y, A_hat, groups=None, true_sensitive=None) -> MetricsReport:
    """ACC, equalized-odds and parity gaps, MD of the predictions and sensitive-attribute AUC.

    ``groups`` defaults to the posterior modes of ``A_hat``. The AUC is
    computed only for a binary ``true_sensitive``; because mixture components
    carry arbitrary labels it is reported as ``max(auc, 1 - auc)`` of the
    second posterior column.
    """
    P = as_probs(A_hat)
    if groups is None:
        groups = map_classify(P)
    sens_auc = None
    if true_sensitive is not None and P.shape[1] == 2:
        a = _quiet(auc, P[:, 1], true_sensitive)
        sens_auc = None if a is None else max(a, 1.0 - a)
    return MetricsReport(
        acc=accuracy(y_pred, y),
        delta_eo=_quiet(delta_eo, y_pred, y, groups),
        delta_dp=_quiet(delta_dp, y_pred, groups),
        md=_quiet(mean_distance, P, y_pred),
        auc=sens_auc,
    )
