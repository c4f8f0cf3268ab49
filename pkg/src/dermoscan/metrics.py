"""Evaluation metrics: per-image segmentation rates, one-vs-rest
classification metrics with weighted averages, ROC curves with trapezoidal
AUC, and a serializable report.

Conventions (documented, deterministic):
  * segmentation rates are computed per image and reported as mean +/- std
    (population std) over the dataset;
  * an image with empty ground truth scores recall/IoU 1 when the prediction
    is also empty, else 0; specificity is handled symmetrically when there
    are no background pixels;
  * classification confusion matrices are rows = predicted, cols = actual;
  * zero-denominator classification cells are reported as 0 and flagged.

All functions here are pure (numpy in, values out) and safe to parallelize
across images.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


# -- segmentation ------------------------------------------------------------


@dataclass
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def recall(self) -> float:
        pos = self.tp + self.fn
        if pos == 0:
            return 1.0 if self.fp == 0 else 0.0
        return self.tp / pos

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        if neg == 0:
            return 1.0  # no background pixels: vacuously specific
        return self.tn / neg

    @property
    def iou(self) -> float:
        denom = self.tp + self.fn + self.fp
        if denom == 0:
            return 1.0  # empty ground truth, empty prediction
        return self.tp / denom


def seg_confusion(y_mask, pred_mask, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel confusion counts for one image; prediction is binarized at the
    threshold, ground truth must already be binary."""
    y = np.asarray(y_mask, dtype=np.float64)
    p = np.asarray(pred_mask, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"mask shapes differ: {y.shape} vs {p.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("ground-truth mask must be binary")
    yb = y > 0.5
    pb = p >= threshold
    tp = int(np.count_nonzero(yb & pb))
    tn = int(np.count_nonzero(~yb & ~pb))
    fp = int(np.count_nonzero(~yb & pb))
    fn = int(np.count_nonzero(yb & ~pb))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


@dataclass
class SegMetrics:
    mrc: float
    msp: float
    miou: float
    mrc_std: float
    msp_std: float
    miou_std: float
    per_image: list = field(default_factory=list)  # (recall, specificity, iou)

    def as_dict(self) -> dict:
        return {
            "mRc": {"mean": self.mrc, "std": self.mrc_std},
            "mSp": {"mean": self.msp, "std": self.msp_std},
            "mIoU": {"mean": self.miou, "std": self.miou_std},
        }


def seg_metrics(mask_pairs, threshold: float = 0.5) -> SegMetrics:
    """Mean +/- std of per-image recall / specificity / IoU over a dataset of
    (ground_truth, prediction) pairs."""
    rows = []
    for y, p in mask_pairs:
        c = seg_confusion(y, p, threshold)
        rows.append((c.recall, c.specificity, c.iou))
    if not rows:
        raise ValueError("seg_metrics needs at least one image")
    arr = np.array(rows)
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    return SegMetrics(mrc=float(mean[0]), msp=float(mean[1]), miou=float(mean[2]),
                      mrc_std=float(std[0]), msp_std=float(std[1]),
                      miou_std=float(std[2]), per_image=rows)


# -- classification ----------------------------------------------------------


def cls_confusion(preds, truths, num_classes: int) -> np.ndarray:
    """Confusion matrix, rows = predicted class, cols = actual class."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("empty prediction list")
    if preds.shape != truths.shape:
        raise ValueError("preds and truths differ in length")
    if np.any((preds < 0) | (preds >= num_classes)) or np.any(
            (truths < 0) | (truths >= num_classes)):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (preds, truths), 1)
    return conf


@dataclass
class ClsMetrics:
    confusion: np.ndarray          # rows = predicted, cols = actual
    recall: np.ndarray             # per class
    precision: np.ndarray
    f1: np.ndarray
    support: np.ndarray            # actual counts per class
    weighted_recall: float
    weighted_precision: float
    weighted_f1: float
    accuracy: float
    zero_denominator_flags: list = field(default_factory=list)

    def as_dict(self, class_names: Optional[Sequence[str]] = None) -> dict:
        names = (list(class_names) if class_names
                 else [f"class{i}" for i in range(len(self.recall))])
        per_class = {
            names[i]: {
                "recall": float(self.recall[i]),
                "precision": float(self.precision[i]),
                "f1": float(self.f1[i]),
                "support": int(self.support[i]),
            }
            for i in range(len(names))
        }
        return {
            "per_class": per_class,
            "weighted_avg": {
                "recall": self.weighted_recall,
                "precision": self.weighted_precision,
                "f1": self.weighted_f1,
            },
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "zero_denominator_flags": list(self.zero_denominator_flags),
        }


def metrics_from_confusion(confusion) -> ClsMetrics:
    conf = np.asarray(confusion, dtype=np.int64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {conf.shape}")
    c = conf.shape[0]
    total = conf.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=0).astype(np.float64)        # actual per class
    predicted = conf.sum(axis=1).astype(np.float64)      # predicted per class

    flags = []
    recall = np.zeros(c)
    precision = np.zeros(c)
    f1 = np.zeros(c)
    for i in range(c):
        if support[i] > 0:
            recall[i] = diag[i] / support[i]
        else:
            flags.append((i, "recall"))
        if predicted[i] > 0:
            precision[i] = diag[i] / predicted[i]
        else:
            flags.append((i, "precision"))
        if recall[i] + precision[i] > 0:
            f1[i] = 2 * recall[i] * precision[i] / (recall[i] + precision[i])
        else:
            flags.append((i, "f1"))

    w = support / total
    return ClsMetrics(
        confusion=conf,
        recall=recall, precision=precision, f1=f1,
        support=support.astype(np.int64),
        weighted_recall=float((w * recall).sum()),
        weighted_precision=float((w * precision).sum()),
        weighted_f1=float((w * f1).sum()),
        accuracy=float(diag.sum() / total),
        zero_denominator_flags=flags,
    )


def cls_metrics(preds, truths, num_classes: int) -> ClsMetrics:
    return metrics_from_confusion(cls_confusion(preds, truths, num_classes))


# -- ROC / AUC ----------------------------------------------------------------


def roc_auc(scores, truths):
    """ROC points via a threshold sweep over the unique scores, AUC by the
    trapezoid rule.  Requires at least one positive and one negative."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truths)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError("scores/truths must be equal-length vectors")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("truths must be binary")
    pos = int(t.sum())
    neg = int(t.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(1 - t_sorted)
    # keep the last index of each tied score block
    last_of_block = np.append(s_sorted[1:] != s_sorted[:-1], True)
    tpr = np.concatenate([[0.0], tp[last_of_block] / pos])
    fpr = np.concatenate([[0.0], fp[last_of_block] / neg])
    points = list(zip(fpr.tolist(), tpr.tolist()))
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return points, auc


def roc_auc_one_vs_rest(prob_matrix, truths, num_classes: int):
    """Per-class one-vs-rest ROC/AUC plus macro-average AUC.

    Classes absent from the truths are skipped and reported in the flags.
    """
    probs = np.asarray(prob_matrix, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != num_classes:
        raise ValueError(f"prob matrix must be [B,{num_classes}]")
    curves = {}
    aucs = {}
    skipped = []
    for c in range(num_classes):
        binary = (truths == c).astype(np.int64)
        if binary.sum() in (0, len(binary)):
            skipped.append(c)
            continue
        pts, auc = roc_auc(probs[:, c], binary)
        curves[c] = pts
        aucs[c] = auc
    if not aucs:
        raise ValueError("no class has both positives and negatives")
    macro = float(np.mean(list(aucs.values())))
    return curves, aucs, macro, skipped


# -- aggregate report -----------------------------------------------------------


@dataclass
class EvalReport:
    """Aggregate evaluation outcome; segmentation and classification parts
    are each optional depending on the evaluation mode."""

    seg: Optional[SegMetrics] = None
    cls: Optional[ClsMetrics] = None
    roc: Optional[dict] = None            # class name -> [(fpr, tpr), ...]
    auc: Optional[dict] = None            # class name -> auc, plus "macro"
    class_names: Optional[tuple] = None
    degenerate_mask_ids: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out: dict = {}
        if self.seg is not None:
            out.update(self.seg.as_dict())
        if self.cls is not None:
            out.update(self.cls.as_dict(self.class_names))
        if self.roc is not None:
            out["roc"] = {name: [[float(a), float(b)] for a, b in pts]
                          for name, pts in self.roc.items()}
        if self.auc is not None:
            out["auc"] = {name: float(v) for name, v in self.auc.items()}
        out["degenerate_masks"] = {
            "count": len(self.degenerate_mask_ids),
            "ids": list(self.degenerate_mask_ids),
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        """Flat metric,value summary (curves and matrices are JSON-only)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        d = self.as_dict()
        for key in ("mRc", "mSp", "mIoU"):
            if key in d:
                writer.writerow([f"{key}_mean", f"{d[key]['mean']:.6f}"])
                writer.writerow([f"{key}_std", f"{d[key]['std']:.6f}"])
        if "accuracy" in d:
            writer.writerow(["accuracy", f"{d['accuracy']:.6f}"])
        for name, vals in d.get("per_class", {}).items():
            for metric in ("recall", "precision", "f1"):
                writer.writerow([f"{name}_{metric}", f"{vals[metric]:.6f}"])
            writer.writerow([f"{name}_support", vals["support"]])
        for metric, value in d.get("weighted_avg", {}).items():
            writer.writerow([f"weighted_{metric}", f"{value:.6f}"])
        for name, value in d.get("auc", {}).items():
            writer.writerow([f"auc_{name}", f"{value:.6f}"])
        writer.writerow(["degenerate_masks", d["degenerate_masks"]["count"]])
        return buf.getvalue()

    @classmethod
    def from_parts(cls, seg=None, cls_part=None, prob_matrix=None, truths=None,
                   class_names=None, degenerate_mask_ids=(), extra=None):
        roc = auc_d = None
        if prob_matrix is not None and truths is not None:
            n = len(class_names)
            curves, aucs, macro, skipped = roc_auc_one_vs_rest(
                prob_matrix, truths, n)
            roc = {class_names[c]: pts for c, pts in curves.items()}
            auc_d = {class_names[c]: v for c, v in aucs.items()}
            auc_d["macro"] = macro
            extra = dict(extra or {})
            if skipped:
                extra["roc_skipped_classes"] = [class_names[c] for c in skipped]
        return cls(seg=seg, cls=cls_part, roc=roc, auc=auc_d,
                   class_names=tuple(class_names) if class_names else None,
                   degenerate_mask_ids=list(degenerate_mask_ids),
                   extra=extra or {})
