"""AUC / accuracy / macro-F1 and the censored concordance index."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    task: str
    values: dict
    per_fold: dict = field(default_factory=dict)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    n_samples: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task": self.task, "values": self.values, "per_fold": self.per_fold,
                "mean": self.mean, "std": self.std, "n_samples": self.n_samples, "notes": self.notes}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC; tied scores count 1/2 per pair."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: single-class label set")
    ranks = rankdata(scores)  # average ranks handle ties
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_report(scores, labels) -> MetricsReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise MetricError("scores must be M x C with one label per row")
    M, C = scores.shape
    if M < 2:
        raise MetricError("need at least two samples")
    present = np.unique(labels)
    if present.size < 2:
        raise MetricError("AUC undefined: single-class label set")
    notes = []
    pred = np.argmax(scores, axis=1)  # first max wins: ties go to the lowest index
    acc = float(np.mean(pred == labels))

    f1s = []
    for c in range(C):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        if tp + fp + fn == 0:
            continue
        f1s.append(2.0 * tp / (2 * tp + fp + fn))
    f1 = float(np.mean(f1s))

    if C == 2:
        auc = binary_auc(scores[:, 1] - scores[:, 0], labels == 1)
    else:
        aucs = []
        for c in range(C):
            if c not in present:
                notes.append(f"class {c} absent from labels; skipped in AUC")
                continue
            aucs.append(binary_auc(scores[:, c], labels == c))
        auc = float(np.mean(aucs))
    return MetricsReport("classification", {"auc": auc, "acc": acc, "f1": f1}, n_samples=M, notes=notes)


def c_index(risks, times, observed) -> float:
    """Harrell's C: pairs with t_i < t_j and i observed; tied risks count 1/2."""
    r = np.asarray(risks, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(observed, dtype=bool)
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    total = int(comparable.sum())
    if total == 0:
        raise MetricError("no comparable pairs")
    conc = (r[:, None] > r[None, :]) & comparable
    ties = (r[:, None] == r[None, :]) & comparable
    return float((conc.sum() + 0.5 * ties.sum()) / total)


def survival_report(risks, times, observed) -> MetricsReport:
    return MetricsReport("survival", {"c_index": c_index(risks, times, observed)}, n_samples=len(risks))


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Mean and population std (divisor k) across fold reports."""
    if not reports:
        raise MetricError("no completed folds to aggregate")
    task = reports[0].task
    keys = list(reports[0].values)
    per_fold = {k: [r.values[k] for r in reports] for k in keys}
    mean = {k: float(np.mean(v)) for k, v in per_fold.items()}
    std = {k: float(np.std(v)) for k, v in per_fold.items()}
    notes = sorted({n for r in reports for n in r.notes})
    return MetricsReport(task, dict(mean), per_fold, mean, std, sum(r.n_samples for r in reports), notes)
