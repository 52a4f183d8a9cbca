"""Evaluation metrics: one-vs-rest ROC areas, false acceptance/rejection
rates at a threshold, their balanced mean, and top-1 accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import ShapeError


@dataclass
class MetricsReport:
    aauc: float
    afar: float
    afrr: float
    abfr: float
    acc1: float
    tau: float
    per_class_auc: dict[int, float] = field(default_factory=dict)
    excluded_classes: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "aauc": self.aauc,
            "afar": self.afar,
            "afrr": self.afrr,
            "abfr": self.abfr,
            "acc1": self.acc1,
            "tau": self.tau,
            "per_class_auc": {str(k): v for k, v in self.per_class_auc.items()},
            "excluded_classes": self.excluded_classes,
        }


def auc_one_vs_rest(scores: np.ndarray, positives: np.ndarray) -> float:
    """Probability a random positive outscores a random negative (ties 0.5).

    Mann-Whitney form via average ranks; exactly equals exhaustive pairwise
    counting.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        raise ShapeError("AUC undefined: need at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def metrics(probs: np.ndarray, labels: np.ndarray, tau: float) -> MetricsReport:
    """Per-class one-vs-rest metrics averaged over classes present in `labels`.

    For class j the score is column j of `probs`; FAR counts negatives at or
    above `tau`, FRR positives below it. Classes without positives in the
    evaluation set are excluded from the averages and reported.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeError("probs must be (n x c) matching labels")
    n, c = probs.shape

    per_class_auc: dict[int, float] = {}
    fars, frrs = [], []
    excluded = []
    for j in range(c):
        pos = labels == j
        n_pos = int(pos.sum())
        n_neg = n - n_pos
        if n_pos == 0 or n_neg == 0:
            excluded.append(j)
            continue
        scores = probs[:, j]
        per_class_auc[j] = auc_one_vs_rest(scores, pos)
        fars.append(float((scores[~pos] >= tau).sum()) / n_neg)
        frrs.append(float((scores[pos] < tau).sum()) / n_pos)

    if not per_class_auc:
        raise ShapeError("no class has both positives and negatives")
    aauc = float(np.mean(list(per_class_auc.values())))
    afar = float(np.mean(fars))
    afrr = float(np.mean(frrs))
    acc1 = float((probs.argmax(axis=1) == labels).mean())
    return MetricsReport(
        aauc=aauc,
        afar=afar,
        afrr=afrr,
        abfr=(afar + afrr) / 2.0,
        acc1=acc1,
        tau=tau,
        per_class_auc=per_class_auc,
        excluded_classes=excluded,
    )
