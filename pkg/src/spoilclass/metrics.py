"""Confusion-matrix metrics, fold aggregation and two-tailed t-tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from . import kernels
from .errors import (AbsentClass, EmptyMatrix, LengthMismatch, TooFewReports,
                     UndefinedPrecision, UnknownLabel)

ALPHA = 0.05


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with true classes on rows and predicted classes on columns."""

    counts: np.ndarray
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _index(self, cls) -> int:
        try:
            return self.classes.index(cls)
        except ValueError:
            raise UnknownLabel("confusion matrix", cls) from None

    def one_vs_rest(self, cls) -> Dict[str, int]:
        i = self._index(cls)
        tp = int(self.counts[i, i])
        fn = int(self.counts[i].sum()) - tp
        fp = int(self.counts[:, i].sum()) - tp
        return {"tp": tp, "fp": fp, "fn": fn, "tn": self.total - tp - fp - fn}

    def support(self) -> Dict[str, int]:
        return {c: int(n) for c, n in zip(self.classes, self.counts.sum(axis=1))}


def confusion(predicted: Sequence, true: Sequence, vocabulary: Sequence) -> ConfusionMatrix:
    if len(predicted) != len(true):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(true)} labels")
    vocab = tuple(vocabulary)
    index = {v: i for i, v in enumerate(vocab)}
    for name, seq in (("true", true), ("predicted", predicted)):
        for v in seq:
            if v not in index:
                raise UnknownLabel(name, v)
    t = np.array([index[v] for v in true], dtype=np.int64)
    p = np.array([index[v] for v in predicted], dtype=np.int64)
    return ConfusionMatrix(kernels.confusion_tally(t, p, len(vocab)), vocab)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("no samples in confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def per_class_accuracy(cm: ConfusionMatrix, mode: str = "recall") -> Dict[str, float]:
    """Per-class accuracy as recall (default) or one-vs-rest (TP+TN)/total."""
    out = {}
    for c in cm.classes:
        r = cm.one_vs_rest(c)
        if mode == "recall":
            if r["tp"] + r["fn"] == 0:
                raise AbsentClass(c)
            out[c] = r["tp"] / (r["tp"] + r["fn"])
        elif mode == "one_vs_rest":
            if cm.total == 0:
                raise EmptyMatrix("no samples in confusion matrix")
            out[c] = (r["tp"] + r["tn"]) / cm.total
        else:
            raise ValueError(f"unknown per-class accuracy mode {mode!r}")
    return out


def mpca(cm: ConfusionMatrix, mode: str = "recall") -> float:
    """Mean per-class accuracy: unweighted mean over classes."""
    values = per_class_accuracy(cm, mode)
    return float(sum(values.values()) / len(values))


def precision_recall(cm: ConfusionMatrix, cls, strict: bool = False):
    """``(precision, recall)`` for one class, one-vs-rest.

    Precision is ``None`` when the class is never predicted (``strict`` raises
    :class:`UndefinedPrecision` instead). Recall is 0 for a class with no true
    samples only if it is also never predicted; otherwise it is ``None``.
    """
    r = cm.one_vs_rest(cls)
    precision = None
    if r["tp"] + r["fp"] > 0:
        precision = r["tp"] / (r["tp"] + r["fp"])
    elif strict:
        raise UndefinedPrecision(f"class {cls!r} is never predicted")
    recall = r["tp"] / (r["tp"] + r["fn"]) if r["tp"] + r["fn"] > 0 else None
    return precision, recall


@dataclass
class MetricsReport:
    overall_accuracy: float
    mpca: Optional[float]
    precision: Dict[str, Optional[float]]
    recall: Dict[str, Optional[float]]
    support: Dict[str, int]
    confusion: List[List[int]] = field(default_factory=list)
    classes: List[str] = field(default_factory=list)

    def to_dict(self):
        return {"overall_accuracy": self.overall_accuracy, "mpca": self.mpca,
                "precision": dict(self.precision), "recall": dict(self.recall),
                "support": dict(self.support), "confusion": self.confusion,
                "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate(predicted, true, vocabulary, mpca_mode: str = "recall") -> MetricsReport:
    """All metrics for one model; MPCA covers the classes present in ``true``."""
    cm = confusion(predicted, true, vocabulary)
    support = cm.support()
    present = [c for c in cm.classes if support[c] > 0]
    if not present:
        m = None
    elif mpca_mode == "recall":
        # predictions into classes absent from ``true`` still count as misses
        diag = dict(zip(cm.classes, np.diag(cm.counts).tolist()))
        m = float(sum(diag[c] / support[c] for c in present) / len(present))
    else:
        ovr = per_class_accuracy(cm, mpca_mode)
        m = float(sum(ovr[c] for c in present) / len(present))
    pr = {c: precision_recall(cm, c) for c in cm.classes}
    return MetricsReport(
        overall_accuracy=overall_accuracy(cm),
        mpca=m,
        precision={c: pr[c][0] for c in cm.classes},
        recall={c: pr[c][1] for c in cm.classes},
        support=support,
        confusion=cm.counts.tolist(),
        classes=list(cm.classes),
    )


@dataclass
class MeanStd:
    mean: Optional[float]
    std: Optional[float]
    n: int
    excluded: int = 0

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "n": self.n, "excluded": self.excluded}


def mean_std(values: Sequence[Optional[float]]) -> MeanStd:
    """Mean and n-1 standard deviation; ``None`` entries are excluded and counted."""
    kept = [float(v) for v in values if v is not None]
    excluded = len(values) - len(kept)
    if not kept:
        return MeanStd(None, None, 0, excluded)
    mean = math.fsum(kept) / len(kept)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in kept) / (len(kept) - 1)) if len(kept) > 1 else 0.0
    return MeanStd(mean, std, len(kept), excluded)


@dataclass
class AggregateReport:
    overall_accuracy: MeanStd
    mpca: MeanStd
    precision: Dict[str, MeanStd]
    recall: Dict[str, MeanStd]
    n_reports: int

    def to_dict(self):
        return {"overall_accuracy": self.overall_accuracy.to_dict(),
                "mpca": self.mpca.to_dict(),
                "precision": {c: m.to_dict() for c, m in self.precision.items()},
                "recall": {c: m.to_dict() for c, m in self.recall.items()},
                "n_reports": self.n_reports}


def aggregate(reports: Sequence[MetricsReport]) -> AggregateReport:
    if len(reports) < 2:
        raise TooFewReports(f"need at least two reports, got {len(reports)}")
    classes = list(reports[0].precision)
    return AggregateReport(
        overall_accuracy=mean_std([r.overall_accuracy for r in reports]),
        mpca=mean_std([r.mpca for r in reports]),
        precision={c: mean_std([r.precision.get(c) for r in reports]) for c in classes},
        recall={c: mean_std([r.recall.get(c) for r in reports]) for c in classes},
        n_reports=len(reports),
    )


def format_mean_std(mean: float, std: float, percent: bool = True) -> str:
    """``"99.28 (± 0.35)"``; pass fractions, they are shown as percentages."""
    f = 100.0 if percent else 1.0
    return f"{mean * f:.2f} (± {std * f:.2f})"


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    significant: bool
    method: str = "welch"


def t_test(sample_a: Sequence[float], sample_b: Sequence[float], equal_var: bool = False,
           alpha: float = ALPHA) -> TTestResult:
    """Two-sample two-tailed t-test, Welch by default, pooled-variance Student optional."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise TooFewReports("each sample needs at least two values")
    na, nb = a.size, b.size
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    method = "student" if equal_var else "welch"
    if equal_var:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = pooled * (1.0 / na + 1.0 / nb)
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        df = se2 ** 2 / (qa ** 2 / (na - 1) + qb ** 2 / (nb - 1)) if se2 > 0 else float(na + nb - 2)
    diff = ma - mb
    if se2 == 0.0:
        # both samples constant: equal means carry no evidence of a difference
        if diff == 0.0:
            return TTestResult(0.0, df, 1.0, False, method)
        t = math.copysign(math.inf, diff)
        return TTestResult(t, df, 0.0, True, method)
    t = float(diff / math.sqrt(se2))
    p = float(2.0 * special.stdtr(df, -abs(t)))
    p = min(max(p, 0.0), 1.0)
    return TTestResult(t, float(df), p, p < alpha, method)


def significance_vs_best(accuracies: Mapping[str, Sequence[float]], best: Optional[str] = None,
                         equal_var: bool = False) -> Dict[str, TTestResult]:
    """t-test of every model against ``best`` (highest mean when not given)."""
    if best is None:
        best = max(sorted(accuracies), key=lambda k: float(np.mean(accuracies[k])))
    return {name: t_test(accuracies[best], accs, equal_var)
            for name, accs in sorted(accuracies.items()) if name != best}
