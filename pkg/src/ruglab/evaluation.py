"""Binary classification metrics: rank AUC, per-class precision/recall/F1, confusion counts."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata


class UndefinedAuc(ValueError):
    """AUC needs at least one positive and one negative."""


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks (ties count one half)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAuc("labels contain a single class")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricsReport:
    auc: Optional[float]
    precision_1: float
    recall_1: float
    f1_1: float
    precision_0: float
    recall_0: float
    f1_0: float
    accuracy: float
    tn: int
    fp: int
    fn: int
    tp: int
    n: int
    threshold: float
    auc_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def report(scores, labels, threshold: float = 0.5) -> MetricsReport:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    if len(s) == 0:
        raise ValueError("empty inputs")
    pred = (s >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    p1, r1 = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    p0, r0 = _ratio(tn, tn + fn), _ratio(tn, tn + fp)
    try:
        auc, defined = roc_auc(s, y), True
    except UndefinedAuc:
        auc, defined = None, False
    return MetricsReport(
        auc=auc, precision_1=p1, recall_1=r1, f1_1=_f1(p1, r1),
        precision_0=p0, recall_0=r0, f1_0=_f1(p0, r0),
        accuracy=(tp + tn) / len(y), tn=tn, fp=fp, fn=fn, tp=tp, n=len(y),
        threshold=float(threshold), auc_defined=defined,
    )
