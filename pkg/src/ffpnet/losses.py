"""Cross-entropy and boundary-aware cross-entropy on 1-based labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import ops
from .errors import ConfigError, UsageError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ce"
    ba_radius: int = 2
    ba_weight: float = 2.0
    ignore_label: int = 0

    def __post_init__(self):
        if self.kind not in ("ce", "ba"):
            raise ConfigError(f"loss.kind must be 'ce' or 'ba', got {self.kind!r}")
        if self.ba_radius < 0:
            raise ConfigError(f"loss.ba_radius must be >= 0, got {self.ba_radius}")
        if self.ba_weight < 1:
            raise ConfigError(f"loss.ba_weight must be >= 1, got {self.ba_weight}")


def _check_labels(logits: Tensor, labels: np.ndarray, ignore_label: int) -> np.ndarray:
    labels = np.asarray(labels)
    n, k = logits.shape[:2]
    if labels.shape != (n,) + logits.shape[2:]:
        raise UsageError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != ignore_label
    bad = valid & ((labels < 1) | (labels > k))
    if bad.any():
        raise UsageError(f"label {labels[bad].flat[0]} outside [1, {k}]")
    if not valid.any():
        raise UsageError("every position is ignored; the mean loss is undefined")
    return valid


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """-sum(w * log p[true]) / sum(w). ``weights`` is zero at ignored positions."""
    k = logits.shape[1]
    logp = ops.log_softmax(logits, axis=1)
    target = np.clip(np.asarray(labels) - 1, 0, k - 1)
    onehot = np.moveaxis(np.eye(k, dtype=logp.dtype)[target], -1, 1)
    w = np.asarray(weights, dtype=logp.dtype)
    coeff = onehot * np.expand_dims(w / w.sum(), 1)
    return -ops.sum(logp * coeff)


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_label: int = 0) -> Tensor:
    valid = _check_labels(logits, labels, ignore_label)
    return weighted_cross_entropy(logits, labels, valid.astype(np.float64))


def boundary_band(labels: np.ndarray, radius: int, ignore_label: int = 0) -> np.ndarray:
    """Labelled pixels that have a differently labelled, non-ignored pixel
    within Chebyshev distance ``radius``. Works on H x W or N x H x W."""
    labels = np.asarray(labels)
    valid = labels != ignore_label
    if radius == 0:
        return np.zeros(labels.shape, dtype=bool)
    size = [1] * (labels.ndim - 2) + [2 * radius + 1] * 2
    # ignored pixels must not count, so push them out of the max/min range
    labels = labels.astype(np.int64)
    low = np.where(valid, labels, labels.min() - 1)
    high = np.where(valid, labels, labels.max() + 1)
    larger = ndimage.maximum_filter(low, size=size, mode="nearest") > labels
    smaller = ndimage.minimum_filter(high, size=size, mode="nearest") < labels
    return valid & (larger | smaller)


def ba_loss(logits: Tensor, labels: np.ndarray, cfg: LossConfig = LossConfig(kind="ba")) -> Tensor:
    """Cross-entropy with pixels near a label boundary weighted by beta."""
    valid = _check_labels(logits, labels, cfg.ignore_label)
    if logits.ndim != 4:
        raise UsageError(f"ba_loss needs N x K x H x W logits, got {logits.shape}")
    band = boundary_band(labels, cfg.ba_radius, cfg.ignore_label)
    weights = np.where(valid, np.where(band, cfg.ba_weight, 1.0), 0.0)
    return weighted_cross_entropy(logits, labels, weights)


def compute_loss(logits: Tensor, labels: np.ndarray, cfg: LossConfig) -> Tensor:
    if cfg.kind == "ba" and logits.ndim == 4:
        return ba_loss(logits, labels, cfg)
    return cross_entropy(logits, labels, cfg.ignore_label)
