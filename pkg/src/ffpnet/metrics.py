"""Confusion matrices, OA/AA/Kappa, F1/IoU, boundary erosion and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, UsageError
from .fileio import colorize, write_ppm


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predictions; classes are 1-based
    outside, 0-based inside ``counts``."""

    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_labels, pred_labels, valid_mask=None) -> "ConfusionMatrix":
        t = np.asarray(true_labels).reshape(-1)
        p = np.asarray(pred_labels).reshape(-1)
        if t.shape != p.shape:
            raise UsageError(f"true {np.shape(true_labels)} and predicted {np.shape(pred_labels)} labels differ in shape")
        mask = np.ones_like(t, dtype=bool) if valid_mask is None else np.asarray(valid_mask, dtype=bool).reshape(-1)
        t, p = t[mask], p[mask]
        k = self.num_classes
        for name, arr in (("true", t), ("predicted", p)):
            if arr.size and (arr.min() < 1 or arr.max() > k):
                raise UsageError(f"{name} label outside [1, {k}] under the mask")
        self.counts += np.bincount((t - 1) * k + (p - 1), minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def _require_total(cm) -> np.ndarray:
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    if counts.sum() <= 0:
        raise DegenerateInputError("confusion matrix is empty; metrics are undefined")
    return counts


def overall_metrics(cm) -> dict[str, float]:
    c = _require_total(cm)
    total = c.sum()
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    po = np.trace(c) / total
    present = rows > 0
    aa = float(np.mean(np.diag(c)[present] / rows[present]))
    pe = float((rows * cols).sum() / total**2)
    kappa = 1.0 if pe == 1.0 else (po - pe) / (1.0 - pe)
    return {"oa": float(po), "aa": aa, "kappa": float(kappa)}


def per_class_metrics(cm) -> dict:
    c = _require_total(cm)
    tp = np.diag(c)
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(cols > 0, tp / cols, 0.0)
        recall = np.where(rows > 0, tp / rows, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
        union = rows + cols - tp
        iou = np.where(union > 0, tp / union, 0.0)
    present = rows > 0
    return {
        "f1": f1.tolist(),
        "iou": iou.tolist(),
        "mean_f1": float(f1[present].mean()),
        "miou": float(iou[present].mean()),
    }


def erode_boundary_mask(labels: np.ndarray, radius: int = 3) -> np.ndarray:
    """Valid pixels: labelled and no different label (0 included) within
    Chebyshev distance ``radius``."""
    if radius < 0:
        raise UsageError(f"erosion radius must be >= 0, got {radius}")
    labels = np.asarray(labels)
    valid = labels != 0
    if radius == 0:
        return valid
    size = 2 * radius + 1
    # "nearest" clamps out-of-image taps onto pixels already in the window
    hi = ndimage.maximum_filter(labels, size=size, mode="nearest")
    lo = ndimage.minimum_filter(labels, size=size, mode="nearest")
    return valid & (hi == labels) & (lo == labels)


def evaluate(true_labels, pred_labels, num_classes: int, valid_mask=None):
    cm = ConfusionMatrix.empty(num_classes).accumulate(true_labels, pred_labels, valid_mask)
    return cm, {**overall_metrics(cm), **per_class_metrics(cm)}


def metrics_record(cm: ConfusionMatrix, class_names: list[str]) -> dict:
    overall = overall_metrics(cm)
    pc = per_class_metrics(cm)
    per_class = {
        name: {"f1": pc["f1"][i], "iou": pc["iou"][i], "support": int(cm.counts[i].sum())}
        for i, name in enumerate(class_names)
    }
    return {**overall, "mean_f1": pc["mean_f1"], "miou": pc["miou"], "per_class": per_class}


def confusion_heatmap(cm: ConfusionMatrix, cell: int = 8) -> np.ndarray:
    """Row-normalised grayscale image, each nonzero row peaking at 255."""
    c = cm.counts.astype(np.float64)
    peak = c.max(axis=1, keepdims=True)
    norm = np.divide(c, peak, out=np.zeros_like(c), where=peak > 0)
    gray = np.round(norm * 255).astype(np.uint8)
    big = np.kron(gray, np.ones((cell, cell), dtype=np.uint8))
    return np.repeat(big[..., None], 3, axis=2)


def write_confusion_csv(path, cm: ConfusionMatrix, class_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, cm.counts):
            writer.writerow([name, *(int(v) for v in row)])


def read_confusion_csv(path) -> tuple[ConfusionMatrix, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts), names


def emit_reports(cm: ConfusionMatrix, class_names: list[str], out_dir, classmap=None, palette=None) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_confusion_csv(out / "confusion.csv", cm, class_names)
        record = metrics_record(cm, class_names)
        (out / "metrics.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        write_ppm(out / "confusion.ppm", confusion_heatmap(cm))
        if classmap is not None:
            write_ppm(out / "classmap.ppm", colorize(classmap, palette))
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc.strerror or exc}") from exc
    return record
