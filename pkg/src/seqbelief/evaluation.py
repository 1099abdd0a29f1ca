"""Classification metrics and the portfolio economics layer (ROI / MOIC)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Per-startup value/cost constants, in millions of USD."""

    fiv_tp: float = 248.44  # final investment value of a correctly picked success
    fiv_fp: float = 0.0  # value of a picked failure
    ic: float = 10.24  # investment cost per selected startup
    oc: float = 198.81  # opportunity cost per missed success

    def __post_init__(self):
        if self.ic <= 0:
            raise MetricError("investment cost must be positive")
        if min(self.fiv_tp, self.fiv_fp, self.oc) < 0:
            raise MetricError("cost-model values must be non-negative")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricError("confusion counts must be non-negative")


def confusion(y_true: Sequence[int], y_pred: Sequence[int]) -> ConfusionCounts:
    if len(y_true) != len(y_pred):
        raise MetricError("y_true and y_pred lengths differ")
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if t not in (0, 1) or p not in (0, 1):
            raise MetricError("labels and predictions must be 0 or 1")
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 1 and p == 0:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def classification_metrics(y_true: Sequence[int], y_pred: Sequence[int]) -> dict[str, float]:
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise MetricError("need equal-length non-empty label lists")
    c = confusion(y_true, y_pred)
    precision, recall, f1 = _prf(c.tp, c.fp, c.fn)
    # negative class treated symmetrically for macro/weighted F1
    _, _, f1_neg = _prf(c.tn, c.fn, c.fp)
    n = len(y_true)
    support_pos = c.tp + c.fn
    support_neg = c.tn + c.fp
    return {
        "accuracy": (c.tp + c.tn) / n,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "weighted_f1": (support_pos * f1 + support_neg * f1_neg) / n,
        "macro_f1": 0.5 * (f1 + f1_neg),
    }


def auc(y_true: Sequence[int], scores: Sequence[float]) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise MetricError("labels and scores lengths differ")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")
    ranks = rankdata(s)  # average ranks handle ties
    return (float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roi(c: ConfusionCounts, m: CostModel = CostModel()) -> float:
    """Net gain over deployed capital, in percent."""
    deployed = (c.tp + c.fp) * m.ic
    if deployed <= 0:
        raise MetricError("ROI undefined: no capital deployed (tp + fp == 0)")
    gain = c.tp * m.fiv_tp + c.fp * m.fiv_fp - deployed - c.fn * m.oc
    return gain / deployed * 100.0


def moic(c: ConfusionCounts, m: CostModel = CostModel()) -> float:
    """Multiple on invested capital."""
    deployed = (c.tp + c.fp) * m.ic
    if deployed <= 0:
        raise MetricError("MOIC undefined: no capital deployed (tp + fp == 0)")
    return (c.tp * m.fiv_tp + c.fp * m.fiv_fp - c.fn * m.oc) / deployed


def evaluation_report(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    scores: Sequence[float] | None = None,
    cost_model: CostModel = CostModel(),
) -> dict:
    metrics = classification_metrics(y_true, y_pred)
    if scores is not None:
        try:
            metrics["auc"] = auc(y_true, scores)
        except MetricError:
            metrics["auc"] = None
    c = confusion(y_true, y_pred)
    try:
        economics = {"roi": roi(c, cost_model), "moic": moic(c, cost_model)}
    except MetricError:
        economics = {"roi": None, "moic": None}
    return {
        "metrics": metrics,
        "confusion": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn},
        "economics": economics,
        "cost_model": {
            "fiv_tp": cost_model.fiv_tp,
            "fiv_fp": cost_model.fiv_fp,
            "ic": cost_model.ic,
            "oc": cost_model.oc,
        },
    }
