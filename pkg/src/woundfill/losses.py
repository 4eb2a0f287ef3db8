"""Imbalance-aware segmentation losses and evaluation metrics.

All losses take an M x C probability tensor and integer labels, and are
mean-reduced over nodes.  Class 1 is the wound class.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

PROB_CLAMP = 1e-7
LOSS_KINDS = ("focal", "dice", "cross_entropy", "weighted_cross_entropy")


class UnsupportedConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    kind: str = "cross_entropy"
    alpha: float | None = 0.25  # weight of class 1; None disables class balancing
    gamma: float = 2.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _labels(P: Tensor, labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) != P.shape[0]:
        raise ValueError(f"{len(y)} labels for {P.shape[0]} rows")
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise ValueError(f"label out of range for {P.shape[1]} classes")
    return y


def _clamped(P: Tensor) -> Tensor:
    return ag.clip(P, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _binary(P: Tensor, name: str) -> None:
    if P.shape[1] != 2:
        raise UnsupportedConfigError(f"{name} is defined for two classes, got C={P.shape[1]}")


def focal_loss(P, labels, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig(kind="focal")
    P = ag.as_tensor(P)
    y = _labels(P, labels)
    p_t = ag.getitem(_clamped(P), (np.arange(len(y)), y))
    if cfg.alpha is None:
        alpha_t = np.ones(len(y), dtype=P.dtype)
    else:
        alpha_t = np.where(y == 1, cfg.alpha, 1.0 - cfg.alpha).astype(P.dtype)
    per_node = -alpha_t * ag.power(1.0 - p_t, cfg.gamma) * ag.log(p_t)
    return ag.mean(per_node)


def dice_loss(P, labels, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig(kind="dice")
    P = ag.as_tensor(P)
    _binary(P, "dice loss")
    y = (_labels(P, labels) == 1).astype(P.dtype)
    p = ag.getitem(P, (slice(None), 1))
    num = 2.0 * ag.sum(p * y) + cfg.epsilon
    den = ag.sum(p * p) + float((y * y).sum()) + cfg.epsilon
    return 1.0 - num / den


def ce_loss(P, labels, cfg: LossConfig | None = None) -> Tensor:
    P = ag.as_tensor(P)
    y = _labels(P, labels)
    p_true = ag.getitem(_clamped(P), (np.arange(len(y)), y))
    return -ag.mean(ag.log(p_true))


def positive_weight(labels) -> float:
    """(N - N_pos) / N_pos from ground truth; 1.0 with a warning when N_pos = 0."""
    r = np.asarray(labels).reshape(-1) == 1
    n_pos = int(r.sum())
    if n_pos == 0:
        warnings.warn("no positive labels in batch; weighted cross-entropy falls back to w = 1",
                      RuntimeWarning, stacklevel=3)
        return 1.0
    return (len(r) - n_pos) / n_pos


def weighted_ce_loss(P, labels, cfg: LossConfig | None = None, w: float | None = None) -> Tensor:
    P = ag.as_tensor(P)
    _binary(P, "weighted cross-entropy")
    y = _labels(P, labels)
    r = (y == 1).astype(P.dtype)
    if w is None:
        w = positive_weight(y)
    p = ag.getitem(_clamped(P), (slice(None), 1))
    terms = (w * r) * ag.log(p) + (1.0 - r) * ag.log(1.0 - p)
    return -ag.mean(terms)


_LOSSES = {
    "focal": focal_loss,
    "dice": dice_loss,
    "cross_entropy": ce_loss,
    "weighted_cross_entropy": weighted_ce_loss,
}


def compute_loss(cfg: LossConfig, P, labels) -> Tensor:
    return _LOSSES[cfg.kind](P, labels, cfg)


# metrics -------------------------------------------------------------------

@dataclass
class MetricsReport:
    miou: float
    per_class_iou: list[float | None]
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(pred, true, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    if len(pred) != len(true):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(true)} labels")
    return np.bincount(true * num_classes + pred, minlength=num_classes**2).reshape(num_classes, num_classes)


def miou_from_confusion(cm: np.ndarray) -> MetricsReport:
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - np.diag(cm)
    per_class: list[float | None] = [float(t / u) if u > 0 else None for t, u in zip(tp, union)]
    present = [v for v in per_class if v is not None]
    total = cm.sum()
    return MetricsReport(
        miou=float(np.mean(present)) if present else 1.0,
        per_class_iou=per_class,
        accuracy=float(tp.sum() / total) if total else 1.0,
    )


def miou(pred, true, num_classes: int = 2) -> MetricsReport:
    """Mean IoU over classes; classes absent from both sides are left out."""
    return miou_from_confusion(confusion(pred, true, num_classes))


def vertex_accuracy(v_pred, v_gt, total_vertices: int) -> float:
    """Per-vertex binary agreement between two vertex index sets."""
    a = np.unique(np.asarray(list(v_pred) if not isinstance(v_pred, np.ndarray) else v_pred, dtype=np.int64))
    b = np.unique(np.asarray(list(v_gt) if not isinstance(v_gt, np.ndarray) else v_gt, dtype=np.int64))
    for s in (a, b):
        if s.size and (s.min() < 0 or s.max() >= total_vertices):
            raise ValueError(f"vertex index outside 0..{total_vertices - 1}")
    mismatched = len(np.setxor1d(a, b, assume_unique=True))
    return (total_vertices - mismatched) / total_vertices
