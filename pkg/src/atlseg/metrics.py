"""Binary segmentation metrics from pixel confusion counts.

Landslide (value 1) is the positive class. Any ratio whose denominator is
zero is reported as 0.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(*(a + b for a, b in zip(astuple(self), astuple(other))))


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    oa: float
    landslide_iou: float
    background_iou: float
    miou: float

    CSV_HEADER = ("P", "REC", "F1", "OA", "MIoU", "Landslide-IoU")

    def csv_values(self) -> tuple[float, ...]:
        return (self.precision, self.recall, self.f1, self.oa, self.miou, self.landslide_iou)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def accumulate(pred, truth, counts: ConfusionCounts | None = None) -> ConfusionCounts:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    batch = ConfusionCounts(tp, fp, tn, fn)
    return batch if counts is None else counts + batch


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    if counts.total == 0:
        raise ValueError("cannot compute metrics from empty confusion counts")
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    oa = (tp + tn) / counts.total
    fg_iou = _ratio(tp, tp + fn + fp)
    bg_iou = _ratio(tn, tn + fn + fp)
    return MetricsReport(precision, recall, f1, oa, fg_iou, bg_iou, (fg_iou + bg_iou) / 2)


def format_table(rows: list[tuple[str, MetricsReport]], percent: bool = True) -> str:
    """Aligned text table, one model per row, metrics in percent by default."""
    header = ("Model",) + tuple(f"{h}(%)" if percent else h for h in MetricsReport.CSV_HEADER)
    scale = 100.0 if percent else 1.0
    body = [(name,) + tuple(f"{v * scale:.2f}" for v in rep.csv_values()) for name, rep in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header, *body]]
    return "\n".join(lines)
