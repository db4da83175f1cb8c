"""Confusion matrices and multiclass metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

IBA_ALPHA = 0.1


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), rows = true, columns = predicted
    classes: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self) -> str:
        lines = ["true\\pred," + ",".join(self.classes)]
        for name, row in zip(self.classes, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion(true_labels: Sequence, pred_labels: Sequence, classes: Sequence) -> ConfusionMatrix:
    if len(true_labels) != len(pred_labels):
        raise ValueError("true and predicted label lists differ in length")
    index = {c: i for i, c in enumerate(classes)}
    C = len(classes)
    try:
        t = np.array([index[v] for v in true_labels], dtype=np.int64)
        p = np.array([index[v] for v in pred_labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"unknown label {exc.args[0]!r}") from None
    counts = np.bincount(t * C + p, minlength=C * C).reshape(C, C) if len(t) else np.zeros((C, C), np.int64)
    return ConfusionMatrix(counts.astype(np.int64), [str(c) for c in classes])


def topk_accuracy(probabilities: np.ndarray, true_labels: Sequence[int], k: int) -> float:
    """Share of samples whose true class is among the k most probable; ties favour the lower class index."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    C = probs.shape[1]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > C:
        raise ValueError(f"k={k} exceeds the number of classes {C}")
    if len(y) == 0:
        return 0.0
    # stable sort on -p keeps ascending class index among equal probabilities
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float((order == y[:, None]).any(axis=1).mean())


@dataclass
class MetricsReport:
    overall_accuracy: float
    macro_accuracy: float
    weighted_accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    iba: float
    per_class_recall: dict[str, float]
    support: dict[str, int]
    n_samples: int
    top3: float | None = None
    top5: float | None = None
    topk: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topk"] = {str(k): v for k, v in self.topk.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        rows = [("overall accuracy", self.overall_accuracy), ("macro accuracy", self.macro_accuracy),
                ("weighted accuracy", self.weighted_accuracy), ("weighted precision", self.weighted_precision),
                ("weighted recall", self.weighted_recall), ("weighted F1", self.weighted_f1),
                ("IBA", self.iba)]
        if self.top3 is not None:
            rows.append(("top-3 accuracy", self.top3))
        if self.top5 is not None:
            rows.append(("top-5 accuracy", self.top5))
        lines = [f"{name:<20s} {value:.4f}" for name, value in rows]
        lines.append(f"{'samples':<20s} {self.n_samples}")
        lines.append("per-class recall:")
        lines += [f"  {c:<18s} {r:.4f} (n={self.support[c]})" for c, r in self.per_class_recall.items()]
        return "\n".join(lines) + "\n"


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.divide(a, b, out=np.zeros(np.shape(a), dtype=np.float64), where=b > 0)


def metrics(cm: ConfusionMatrix, probabilities: np.ndarray | None = None,
            true_indices: Sequence[int] | None = None, topk: Sequence[int] | None = None) -> MetricsReport:
    """Accuracy family, support-weighted precision/recall/F1, IBA and optional top-k.

    Macro accuracy is the unweighted mean of per-class recall over classes with
    support; weighted scores average per-class values by support. IBA per class
    is ``(1 + 0.1 (recall - specificity)) * recall * specificity`` (one-vs-rest),
    support-weighted. Top-k (default k = 3, 5 when probabilities are given)
    needs ``probabilities`` and ``true_indices``.
    """
    if topk is None:
        topk = (3, 5) if probabilities is not None else ()
    c = cm.counts.astype(np.float64)
    total = c.sum()
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    recall = _safe_div(tp, support)
    precision = _safe_div(tp, predicted)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    fp = predicted - tp
    negatives = total - support
    specificity = np.where(negatives > 0, _safe_div(negatives - fp, negatives), 1.0)
    iba_c = (1.0 + IBA_ALPHA * (recall - specificity)) * recall * specificity
    w = _safe_div(support, np.full_like(support, total))
    present = support > 0
    report = MetricsReport(
        overall_accuracy=float(tp.sum() / total) if total else 0.0,
        macro_accuracy=float(recall[present].mean()) if present.any() else 0.0,
        weighted_accuracy=float((w * recall).sum()),
        weighted_precision=float((w * precision).sum()),
        weighted_recall=float((w * recall).sum()),
        weighted_f1=float((w * f1).sum()),
        iba=float((w * iba_c).sum()),
        per_class_recall={name: float(r) for name, r in zip(cm.classes, recall)},
        support={name: int(s) for name, s in zip(cm.classes, support)},
        n_samples=int(total),
    )
    if topk:
        if probabilities is None or true_indices is None:
            raise ValueError("top-k accuracy requires per-sample probabilities and true class indices")
        C = len(cm.classes)
        for k in topk:
            if k <= C:
                report.topk[int(k)] = topk_accuracy(probabilities, true_indices, k)
        report.top3 = report.topk.get(3)
        report.top5 = report.topk.get(5)
    return report
