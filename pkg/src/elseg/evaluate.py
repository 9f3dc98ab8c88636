"""Thresholding, pixel confusion counts and the segmentation metric suite."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import tensor as T
from .data import DEFAULT_CLASSES, MultiHotMask

METRICS = ("accuracy", "precision", "recall", "dice", "iou")


def binarize(probabilities, threshold: float = 0.5) -> np.ndarray:
    """1 where ``p >= threshold``, channel by channel (boundary inclusive)."""
    return (np.asarray(probabilities) >= threshold).astype(np.uint8)


@dataclass
class ConfusionCounts:
    classes: Sequence[str]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if tuple(self.classes) != tuple(other.classes):
            raise ValueError("cannot add counts over different class sets")
        return ConfusionCounts(self.classes, self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn


def _as_planes(m) -> np.ndarray:
    return m.data if isinstance(m, MultiHotMask) else np.asarray(m)


def confusion(pred, gt, classes: Sequence[str] | None = None) -> ConfusionCounts:
    """Per-channel pixel counts for (C, H, W) or (N, C, H, W) binary masks."""
    p = _as_planes(pred).astype(bool)
    g = _as_planes(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    if p.ndim == 3:
        p, g = p[None], g[None]
    if p.ndim != 4:
        raise ValueError(f"masks must be (C, H, W) or (N, C, H, W), got {p.shape}")
    if classes is None:
        classes = getattr(gt, "classes", None) or (
            DEFAULT_CLASSES if p.shape[1] == len(DEFAULT_CLASSES) else tuple(map(str, range(p.shape[1]))))
    axes = (0, 2, 3)
    tp = np.sum(p & g, axis=axes, dtype=np.int64)
    fp = np.sum(p & ~g, axis=axes, dtype=np.int64)
    fn = np.sum(~p & g, axis=axes, dtype=np.int64)
    tn = np.sum(~p & ~g, axis=axes, dtype=np.int64)
    return ConfusionCounts(tuple(classes), tp, fp, fn, tn)


@dataclass
class MetricSuite:
    per_class: Dict[str, Dict[str, float]]
    macro: Dict[str, float]
    bce: float | None = None

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "macro": self.macro, "bce": self.bce}

    def table(self) -> str:
        head = f"{'class':<12s}" + "".join(f"{m:>11s}" for m in METRICS)
        rows = [head]
        for name, vals in list(self.per_class.items()) + [("macro", self.macro)]:
            rows.append(f"{name:<12s}" + "".join(f"{vals[m]:>11.6f}" for m in METRICS))
        if self.bce is not None:
            rows.append(f"{'bce':<12s}{self.bce:>11.6f}")
        return "\n".join(rows)


def _ratio(num, den, when_empty):
    return float(num) / float(den) if den else when_empty


def class_metrics(tp: int, fp: int, fn: int, tn: int) -> Dict[str, float]:
    """Metrics for one class.

    A class absent from both prediction and ground truth scores 1.0 on
    precision, recall, dice and iou. Otherwise an empty denominator gives 0.
    """
    tp, fp, fn, tn = (int(v) for v in (tp, fp, fn, tn))
    total = tp + fp + fn + tn
    if tp + fp + fn == 0:
        return {"accuracy": _ratio(tp + tn, total, 1.0), "precision": 1.0, "recall": 1.0,
                "dice": 1.0, "iou": 1.0}
    return {
        "accuracy": _ratio(tp + tn, total, 1.0),
        "precision": _ratio(tp, tp + fp, 0.0),
        "recall": _ratio(tp, tp + fn, 0.0),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, 0.0),
        "iou": _ratio(tp, tp + fp + fn, 0.0),
    }


def metric_suite(counts: ConfusionCounts, bce: float | None = None) -> MetricSuite:
    per_class = {
        name: class_metrics(counts.tp[i], counts.fp[i], counts.fn[i], counts.tn[i])
        for i, name in enumerate(counts.classes)
    }
    macro = {m: float(np.mean([v[m] for v in per_class.values()])) for m in METRICS}
    return MetricSuite(per_class, macro, bce)


@dataclass
class CorpusEvaluation:
    suite: MetricSuite
    counts: ConfusionCounts
    per_image: Dict[str, MetricSuite] = field(default_factory=dict)
    per_image_macro: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "global": self.suite.to_dict(),
            "counts": {k: getattr(self.counts, k).tolist() for k in ("tp", "fp", "fn", "tn")},
            "classes": list(self.counts.classes),
            "per_image": {k: v.to_dict() for k, v in self.per_image.items()},
            "per_image_macro_mean": self.per_image_macro,
        }


def evaluate_masks(preds: Dict[str, object], gts: Dict[str, object],
                   bce: float | None = None) -> CorpusEvaluation:
    """Aggregate counts globally over aligned id -> mask dicts, then macro-average."""
    if not gts:
        raise ValueError("empty corpus")
    if set(preds) != set(gts):
        missing = sorted(set(gts) ^ set(preds))
        raise ValueError(f"prediction and ground-truth ids differ, e.g. {missing[:3]}")
    total = None
    per_image = {}
    for key in sorted(gts):
        c = confusion(preds[key], gts[key])
        per_image[key] = metric_suite(c)
        total = c if total is None else total + c
    per_image_macro = {m: float(np.mean([s.macro[m] for s in per_image.values()])) for m in METRICS}
    return CorpusEvaluation(metric_suite(total, bce), total, per_image, per_image_macro)


def evaluate_corpus(model, records: List, threshold: float = 0.5, batch_size: int = 8,
                    prepare=None) -> CorpusEvaluation:
    """Run ``model`` over ``records`` and score the thresholded predictions.

    ``prepare(record) -> (input (C, S, S), target (K, S, S))`` converts a
    record into network tensors; defaults to :func:`elseg.train.record_tensors`.
    """
    from . import unet as U
    from .train import record_tensors

    if not records:
        raise ValueError("empty corpus")
    prepare = prepare or record_tensors
    preds, gts = {}, {}
    loss_sum = 0.0
    n_elem = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        xs, ts = zip(*(prepare(r) for r in chunk))
        x = np.stack(xs)
        t = np.stack(ts)
        logits = U.forward(model, x)
        loss_sum += T.bce_with_logits(logits, t) * logits.size
        n_elem += logits.size
        pred = binarize(T.sigmoid(logits), threshold)
        for r, p, g in zip(chunk, pred, t):
            preds[r.id] = MultiHotMask(p, r.mask.classes)
            gts[r.id] = MultiHotMask(g.astype(np.uint8), r.mask.classes)
    return evaluate_masks(preds, gts, bce=loss_sum / n_elem)
