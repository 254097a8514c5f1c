"""Stratified cross-validation splits and weighted multi-class metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidFolds, LengthMismatch, SingleClass

logger = logging.getLogger(__name__)


def stratified_kfold(labels, folds: int, seed: int) -> np.ndarray:
    """Seeded class-stratified fold assignment; every sample lands in exactly one fold.

    Within each class the (shuffled) members are dealt round-robin over the
    folds, with the dealing counter carried across classes so overall fold
    sizes stay balanced.  A class smaller than the fold count is reported
    but not fatal.
    """
    if folds < 2:
        raise InvalidFolds(f"need at least 2 folds, got {folds}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assign = np.empty(labels.size, dtype=np.intp)
    counter = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < folds:
            logger.warning(
                "class %s has %d sample(s) for %d folds; some folds will lack it",
                cls,
                members.size,
                folds,
            )
        members = rng.permutation(members)
        for idx in members:
            assign[idx] = counter % folds
            counter += 1
    return assign


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    auc: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float
    per_class: dict
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "per_class": {
                str(cls): {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "auc": m.auc,
                    "support": m.support,
                }
                for cls, m in sorted(self.per_class.items())
            },
            "confusion": self.confusion.astype(int).tolist(),
        }


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with true classes as rows, predictions as columns."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        m[t, p] += 1
    return m


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def binary_auc(positive: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic with midranks.

    Equivalent to the trapezoidal area over all score thresholds, including
    tie handling; invariant under monotone transforms of the scores.
    """
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC undefined without both positives and negatives")
    ranks = _midranks(np.asarray(scores, dtype=np.float64))
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_metrics(y_true, y_pred, y_logprobs) -> MetricsReport:
    """Support-weighted precision/recall/F1 and one-vs-rest AUC.

    AUC for class q uses column q of the per-sample log-probabilities as the
    score (any monotone transform of the probability gives the same area).
    Classes absent from the ground truth are excluded with a warning.
    """
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    y_logprobs = np.asarray(y_logprobs, dtype=np.float64)
    if not (y_true.size == y_pred.size == y_logprobs.shape[0]):
        raise LengthMismatch(
            f"{y_true.size} labels, {y_pred.size} predictions, {y_logprobs.shape[0]} score rows"
        )
    n_classes = y_logprobs.shape[1]
    present = np.unique(y_true)
    if present.size < 2:
        raise SingleClass("metrics require at least two classes in y_true")
    absent = sorted(set(range(n_classes)) - set(present.tolist()))
    if absent:
        logger.warning("classes %s absent from y_true; excluded from averages", absent)

    confusion = confusion_matrix(y_true, y_pred, n_classes)
    per_class = {}
    for cls in present:
        tp = int(confusion[cls, cls])
        fp = int(confusion[:, cls].sum() - tp)
        fn = int(confusion[cls, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        auc = binary_auc(y_true == cls, y_logprobs[:, cls])
        per_class[int(cls)] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            auc=auc,
            support=int((y_true == cls).sum()),
        )

    supports = np.array([per_class[int(c)].support for c in present], dtype=np.float64)
    weights = supports / supports.sum()

    def avg(attr: str) -> float:
        return float(sum(w * getattr(per_class[int(c)], attr) for w, c in zip(weights, present)))

    return MetricsReport(
        precision=avg("precision"),
        recall=avg("recall"),
        f1=avg("f1"),
        auc=avg("auc"),
        per_class=per_class,
        confusion=confusion,
    )


def weighted_f1(y_true, y_pred) -> float:
    """Support-weighted F1 over the classes present in y_true (for monitoring)."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.size != y_pred.size:
        raise LengthMismatch(f"{y_true.size} labels vs {y_pred.size} predictions")
    total = 0.0
    for cls in np.unique(y_true):
        tp = int(((y_true == cls) & (y_pred == cls)).sum())
        fp = int(((y_true != cls) & (y_pred == cls)).sum())
        fn = int(((y_true == cls) & (y_pred != cls)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += f1 * (y_true == cls).sum()
    return float(total / y_true.size)
