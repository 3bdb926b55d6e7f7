"""Depth and segmentation evaluation metrics over mergeable accumulators.

Depth errors are accumulated per valid pixel (prediction clamped to a small
positive floor first); segmentation metrics come from a class confusion
matrix. Accumulators merge by summation, so batches may be evaluated
independently and combined. Empty support yields an explicit undefined
result instead of NaN.
"""

from dataclasses import dataclass, field

import numpy as np

from .autograd import ConfigurationError, DataError

DEPTH_CLAMP_FLOOR = 1e-3
DEPTH_METRIC_NAMES = ("rel", "log10", "rms", "delta1", "delta2", "delta3")
PARSING_METRIC_NAMES = ("mean_iou", "mean_accuracy", "pixel_accuracy")


@dataclass
class DepthMetrics:
    rel: float
    rms: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    defined: bool = True

    @staticmethod
    def undefined():
        return DepthMetrics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, defined=False)

    def as_dict(self):
        if not self.defined:
            return {name: None for name in DEPTH_METRIC_NAMES}
        return {name: getattr(self, name) for name in DEPTH_METRIC_NAMES}


@dataclass
class ParsingMetrics:
    mean_iou: float
    mean_accuracy: float
    pixel_accuracy: float
    per_class_iou: list = field(default_factory=list)
    defined: bool = True

    @staticmethod
    def undefined(num_classes=0):
        return ParsingMetrics(0.0, 0.0, 0.0, [None] * num_classes, defined=False)

    def as_dict(self):
        if not self.defined:
            return {name: None for name in PARSING_METRIC_NAMES}
        return {name: getattr(self, name) for name in PARSING_METRIC_NAMES}


class DepthAccumulator:
    """Summed per-pixel error terms; merge() adds accumulators."""

    def __init__(self, rel_denominator="gt"):
        if rel_denominator not in ("gt", "pred"):
            raise ConfigurationError(f"rel denominator must be gt|pred, got {rel_denominator!r}")
        self.rel_denominator = rel_denominator
        self.n = 0
        self.rel = 0.0
        self.sq = 0.0
        self.log10 = 0.0
        self.delta = np.zeros(3)

    def add(self, pred, gt, mask):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        sel = np.asarray(mask, dtype=bool) & (gt > 0)
        d = np.maximum(pred[sel], DEPTH_CLAMP_FLOOR)
        ds = gt[sel]
        if d.size == 0:
            return self
        denom = ds if self.rel_denominator == "gt" else d
        self.n += d.size
        self.rel += float((np.abs(d - ds) / denom).sum())
        self.sq += float(((d - ds) ** 2).sum())
        self.log10 += float(np.abs(np.log10(d) - np.log10(ds)).sum())
        ratio = np.maximum(ds / d, d / ds)
        for i, t in enumerate((1.25, 1.25**2, 1.25**3)):
            self.delta[i] += int((ratio < t).sum())
        return self

    def merge(self, other):
        if other.rel_denominator != self.rel_denominator:
            raise ConfigurationError("cannot merge accumulators with different rel denominators")
        self.n += other.n
        self.rel += other.rel
        self.sq += other.sq
        self.log10 += other.log10
        self.delta += other.delta
        return self

    def result(self):
        if self.n == 0:
            return DepthMetrics.undefined()
        n = self.n
        return DepthMetrics(
            rel=self.rel / n,
            rms=float(np.sqrt(self.sq / n)),
            log10=self.log10 / n,
            delta1=float(self.delta[0] / n),
            delta2=float(self.delta[1] / n),
            delta3=float(self.delta[2] / n),
        )


class ParsingAccumulator:
    """Confusion-matrix accumulator; rows are ground truth, columns predictions."""

    def __init__(self, num_classes, ignore_index=255):
        self.num_classes = int(num_classes)
        self.ignore_index = ignore_index
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, pred_labels, gt_labels):
        pred = np.asarray(pred_labels).ravel()
        gt = np.asarray(gt_labels).ravel()
        keep = gt != self.ignore_index
        bad = keep & ((gt < 0) | (gt >= self.num_classes))
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise DataError(
                f"ground-truth label {int(gt[i])} out of range "
                f"[0, {self.num_classes}) at flat pixel {i}"
            )
        badp = keep & ((pred < 0) | (pred >= self.num_classes))
        if badp.any():
            i = int(np.nonzero(badp)[0][0])
            raise DataError(
                f"predicted label {int(pred[i])} out of range "
                f"[0, {self.num_classes}) at flat pixel {i}"
            )
        flat = self.num_classes * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
        counts = np.bincount(flat, minlength=self.num_classes**2)
        self.confusion += counts.reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ConfigurationError("cannot merge accumulators with different class counts")
        self.confusion += other.confusion
        return self

    def result(self):
        cm = self.confusion
        total = int(cm.sum())
        if total == 0:
            return ParsingMetrics.undefined(self.num_classes)
        tp = np.diag(cm).astype(np.float64)
        fp = cm.sum(axis=0) - tp
        fn = cm.sum(axis=1) - tp
        present = (tp + fn) > 0  # classes that occur in the ground truth
        iou = np.zeros(self.num_classes)
        iou[present] = tp[present] / (tp + fp + fn)[present]
        acc = tp[present] / (tp + fn)[present]
        per_class = [float(iou[c]) if present[c] else None for c in range(self.num_classes)]
        return ParsingMetrics(
            mean_iou=float(iou[present].mean()),
            mean_accuracy=float(acc.mean()),
            pixel_accuracy=float(tp.sum() / total),
            per_class_iou=per_class,
        )


def depth_metrics(pred, gt, mask, rel_denominator="gt"):
    """One-shot depth metric computation for a single prediction batch."""
    return DepthAccumulator(rel_denominator).add(pred, gt, mask).result()


def parsing_metrics(pred_labels, gt_labels, num_classes, ignore_index=255):
    return ParsingAccumulator(num_classes, ignore_index).add(pred_labels, gt_labels).result()


def metric_cells(metrics, names):
    """Formatted cells: '-' for a task the method lacks, 'undefined' for empty support."""
    if metrics is None:
        return ["-"] * len(names)
    d = metrics.as_dict()
    return ["undefined" if d[k] is None else f"{d[k]:.6f}" for k in names]


def format_metric_table(rows, include_depth=True, include_parsing=True):
    """Delimited table: one row per method, metric columns like the result tables."""
    cols = ["method"]
    if include_depth:
        cols += list(DEPTH_METRIC_NAMES)
    if include_parsing:
        cols += list(PARSING_METRIC_NAMES)
    lines = ["\t".join(cols)]
    for name, dm, pm in rows:
        cells = [name]
        if include_depth:
            cells += metric_cells(dm, DEPTH_METRIC_NAMES)
        if include_parsing:
            cells += metric_cells(pm, PARSING_METRIC_NAMES)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
