"""Confusion-matrix metrics and side-by-side comparison reports.

Numeric contract: support-weighted recall is computed as trace/total so it
equals accuracy bit for bit, and per-class F1 is computed as the single
division 2*correct / (predicted + support), which keeps it inside
[min(P, R), max(P, R)] even at the last ulp.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from .errors import EmptyMatrix, LengthMismatch
from .ingest import CLASS_ORDER, N_CLASSES, ScamLabel


def _codes(labels) -> np.ndarray:
    out = np.empty(len(labels), dtype=np.intp)
    for idx, item in enumerate(labels):
        out[idx] = item.code if isinstance(item, ScamLabel) else int(item)
        if not 0 <= out[idx] < N_CLASSES:
            raise ValueError(f"class code {out[idx]} out of range")
    return out


def confusion(y_true, y_pred) -> np.ndarray:
    """3x3 count matrix, rows = true class, columns = predicted class."""
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    t = _codes(y_true)
    p = _codes(y_pred)
    matrix = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(matrix, (t, p), 1)
    return matrix


@dataclass(frozen=True)
class ClassMetrics:
    label: ScamLabel
    support: int
    predicted: int
    correct: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool  # False when nothing was predicted as this class
    recall_defined: bool  # False when the class is absent from y_true


@dataclass(frozen=True)
class MetricsReport:
    matrix: tuple[tuple[int, ...], ...]
    per_class: tuple[ClassMetrics, ...]
    total: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    def to_dict(self) -> dict:
        return {
            "matrix": [list(row) for row in self.matrix],
            "per_class": {
                m.label.value: {
                    "support": m.support, "predicted": m.predicted,
                    "correct": m.correct, "precision": m.precision,
                    "recall": m.recall, "f1": m.f1,
                    "precision_defined": m.precision_defined,
                    "recall_defined": m.recall_defined,
                } for m in self.per_class
            },
            "total": self.total,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
        }


def f1_from_pr(precision: float, recall: float) -> float:
    """Harmonic mean 2pr/(p+r); 0 when both rates are 0."""
    if precision == 0.0 and recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(matrix: np.ndarray) -> MetricsReport:
    """All rates from one confusion matrix. Undefined ratios (zero support
    or zero predictions) score 0.0 and are flagged per class."""
    matrix = np.asarray(matrix)
    if matrix.shape != (N_CLASSES, N_CLASSES) or (matrix < 0).any():
        raise ValueError(f"expected a non-negative {N_CLASSES}x{N_CLASSES} matrix")
    total = int(matrix.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no observations")

    per_class = []
    for k, label in enumerate(CLASS_ORDER):
        support = int(matrix[k].sum())
        predicted = int(matrix[:, k].sum())
        correct = int(matrix[k, k])
        precision = correct / predicted if predicted > 0 else 0.0
        recall = correct / support if support > 0 else 0.0
        denom = predicted + support
        f1 = 2.0 * correct / denom if denom > 0 else 0.0
        per_class.append(ClassMetrics(
            label=label, support=support, predicted=predicted, correct=correct,
            precision=precision, recall=recall, f1=f1,
            precision_defined=predicted > 0, recall_defined=support > 0,
        ))

    trace = int(np.trace(matrix))
    accuracy = trace / total
    macro_precision = sum(m.precision for m in per_class) / N_CLASSES
    macro_recall = sum(m.recall for m in per_class) / N_CLASSES
    macro_f1 = sum(m.f1 for m in per_class) / N_CLASSES
    weighted_precision = sum(m.support * m.precision for m in per_class) / total
    # identical to accuracy: sum_k support_k * (correct_k / support_k) = trace
    weighted_recall = trace / total
    weighted_f1 = sum(m.support * m.f1 for m in per_class) / total
    return MetricsReport(
        matrix=tuple(tuple(int(v) for v in row) for row in matrix),
        per_class=tuple(per_class),
        total=total,
        accuracy=accuracy,
        macro_precision=macro_precision,
        macro_recall=macro_recall,
        macro_f1=macro_f1,
        weighted_precision=weighted_precision,
        weighted_recall=weighted_recall,
        weighted_f1=weighted_f1,
    )


def evaluate_predictions(y_true, y_pred) -> MetricsReport:
    return metrics(confusion(y_true, y_pred))


# ---------------------------------------------------------------------------
# Comparison reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    classifier: str
    resampler: str
    metrics: MetricsReport


@dataclass
class ReportDocument:
    rows: list[ComparisonRow]
    importance: dict[str, list[tuple[str, float]]] | None = None

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.classifier, r.resampler))


_CSV_HEADER = "classifier,resampler,accuracy,precision_w,recall_w,f1_w,f1_macro"


def report_to_csv(doc: ReportDocument) -> str:
    lines = [_CSV_HEADER]
    for row in doc.rows:
        m = row.metrics
        lines.append(",".join([
            row.classifier, row.resampler,
            repr(m.accuracy), repr(m.weighted_precision), repr(m.weighted_recall),
            repr(m.weighted_f1), repr(m.macro_f1),
        ]))
    return "\n".join(lines) + "\n"


def chart_csv(doc: ReportDocument) -> str:
    """Flat combination,f1 table meant for quick bar charts."""
    lines = ["combination,f1"]
    for row in doc.rows:
        lines.append(f"{row.classifier}+{row.resampler},{repr(row.metrics.weighted_f1)}")
    return "\n".join(lines) + "\n"


def report_to_text(doc: ReportDocument) -> str:
    headers = ("classifier", "resampler", "accuracy", "prec_w", "recall_w",
               "f1_w", "f1_macro")
    body = []
    for row in doc.rows:
        m = row.metrics
        body.append((row.classifier, row.resampler, f"{m.accuracy:.4f}",
                     f"{m.weighted_precision:.4f}", f"{m.weighted_recall:.4f}",
                     f"{m.weighted_f1:.4f}", f"{m.macro_f1:.4f}"))
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
              for i in range(len(headers))]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in body)
    if doc.importance:
        lines.append("")
        for model_name in sorted(doc.importance):
            lines.append(f"importance [{model_name}]")
            for feat, value in doc.importance[model_name]:
                lines.append(f"  {feat}: {value:.4f}")
    return "\n".join(lines) + "\n"
