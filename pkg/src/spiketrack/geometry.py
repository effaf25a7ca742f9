"""Box geometry: Gaussian embedding, Wasserstein distance, NWD similarity and IoU.

Boxes are in center form ``(cx, cy, w, h)`` in pixels. A box is embedded as the
2D Gaussian ``N((cx, cy), diag((w/2)^2, (h/2)^2))``.

Scalar functions take :class:`BBox`; the ``*_batch`` / ``pairwise_*`` variants take
``(N, 4)`` arrays and are what the tracker and the training loop use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

DEFAULT_LAMBDA = 0.8
# Fallback normalization when a batch carries no ground truth: lambda * 16 px.
DEFAULT_C_B = 12.8
MIN_C_B = 1e-6


class InvalidBoxError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def validate(self) -> "BBox":
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {self}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box needs positive width and height, got {self}")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "BBox":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_tlwh(cls, x, y, w, h) -> "BBox":
        return cls(float(x) + float(w) / 2, float(y) + float(h) / 2, float(w), float(h))

    def tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)


@dataclass(frozen=True)
class GaussianBox:
    mean: np.ndarray
    sqrt_cov_diag: np.ndarray

    def covariance(self) -> np.ndarray:
        return np.diag(self.sqrt_cov_diag ** 2)

    def to_bbox(self) -> BBox:
        return BBox(float(self.mean[0]), float(self.mean[1]),
                    float(2 * self.sqrt_cov_diag[0]), float(2 * self.sqrt_cov_diag[1]))


@dataclass(frozen=True)
class BatchNormFactor:
    c_b: float
    n: int
    lam: float

    def __float__(self) -> float:
        return self.c_b


NormLike = Union[BatchNormFactor, float]


def _c(c_b: NormLike) -> float:
    return max(float(c_b), MIN_C_B)


def box_to_gaussian(b: BBox) -> GaussianBox:
    b.validate()
    return GaussianBox(np.array([b.cx, b.cy]), np.array([b.w / 2, b.h / 2]))


def wasserstein2_squared(a: GaussianBox | BBox, b: GaussianBox | BBox) -> float:
    """Squared 2-Wasserstein distance between two axis-aligned box Gaussians."""
    if isinstance(a, BBox):
        a = box_to_gaussian(a)
    if isinstance(b, BBox):
        b = box_to_gaussian(b)
    dm = a.mean - b.mean
    ds = a.sqrt_cov_diag - b.sqrt_cov_diag
    return float(dm @ dm + ds @ ds)


def wasserstein2_squared_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise W2^2 for broadcastable ``(..., 4)`` box arrays."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return d[..., 0] ** 2 + d[..., 1] ** 2 + 0.25 * (d[..., 2] ** 2 + d[..., 3] ** 2)


def batch_norm_factor(gt_boxes: Iterable[BBox] | np.ndarray,
                      lam: float = DEFAULT_LAMBDA) -> BatchNormFactor:
    """``lam * sqrt(mean(w_i * h_i))`` over the ground-truth boxes of one batch."""
    if isinstance(gt_boxes, np.ndarray):
        wh = gt_boxes.reshape(-1, 4)[:, 2:4].astype(np.float64)
    else:
        wh = np.array([[b.w, b.h] for b in gt_boxes], dtype=np.float64).reshape(-1, 2)
    n = len(wh)
    if n == 0:
        raise EmptyBatchError("normalization factor is undefined for a batch without ground truth")
    c_b = lam * math.sqrt(float(np.mean(wh[:, 0] * wh[:, 1])))
    return BatchNormFactor(max(c_b, MIN_C_B), n, lam)


def nwd_similarity(a: BBox, b: BBox, c_b: NormLike) -> float:
    w2 = wasserstein2_squared(box_to_gaussian(a), box_to_gaussian(b))
    return math.exp(-math.sqrt(w2 / _c(c_b)))


def nwd_similarity_batch(a: np.ndarray, b: np.ndarray, c_b: NormLike) -> np.ndarray:
    return np.exp(-np.sqrt(wasserstein2_squared_batch(a, b) / _c(c_b)))


def pairwise_nwd(a: np.ndarray, b: np.ndarray, c_b: NormLike) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    return nwd_similarity_batch(a[:, None, :], b[None, :, :], c_b)


def asa_nwd_loss(pred: BBox, gt: BBox, c_b: NormLike) -> float:
    return 1.0 - nwd_similarity(pred, gt, c_b)


def asa_nwd_loss_grad(pred: BBox, gt: BBox, c_b: NormLike) -> np.ndarray:
    """Gradient of ``1 - NWD`` with respect to ``(cx, cy, w, h)`` of ``pred``.

    Defined as zero where the two boxes coincide (the square root is not
    differentiable there).
    """
    grad = asa_nwd_loss_grad_batch(pred.as_array()[None], gt.as_array()[None], c_b)
    return grad[0]


def asa_nwd_loss_batch(pred: np.ndarray, gt: np.ndarray, c_b: NormLike) -> np.ndarray:
    return 1.0 - nwd_similarity_batch(pred, gt, c_b)


def asa_nwd_loss_grad_batch(pred: np.ndarray, gt: np.ndarray, c_b: NormLike) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    d = pred - np.asarray(gt, dtype=np.float64)
    c = _c(c_b)
    w2 = wasserstein2_squared_batch(pred, gt)
    dw2 = d * np.array([2.0, 2.0, 0.5, 0.5])
    # dL/dW2 = exp(-sqrt(W2/c)) / (2 sqrt(c W2))
    safe = np.where(w2 > 0, w2, 1.0)
    coef = np.where(w2 > 0, np.exp(-np.sqrt(safe / c)) / (2.0 * np.sqrt(c * safe)), 0.0)
    return coef[..., None] * dw2


def to_corners(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:4] / 2
    return np.concatenate([boxes[..., 0:2] - half, boxes[..., 0:2] + half], axis=-1)


def from_corners(corners: np.ndarray) -> np.ndarray:
    corners = np.asarray(corners, dtype=np.float64)
    wh = corners[..., 2:4] - corners[..., 0:2]
    return np.concatenate([corners[..., 0:2] + wh / 2, wh], axis=-1)


def iou(a: BBox, b: BBox) -> float:
    return float(pairwise_iou(a.as_array(), b.as_array())[0, 0])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between ``(N, 4)`` and ``(M, 4)`` center-form boxes."""
    ca = to_corners(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cb = to_corners(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    lt = np.maximum(ca[:, None, :2], cb[None, :, :2])
    rb = np.minimum(ca[:, None, 2:], cb[None, :, 2:])
    inter = np.prod(np.clip(rb - lt, 0, None), axis=-1)
    area_a = np.prod(ca[:, 2:] - ca[:, :2], axis=-1)
    area_b = np.prod(cb[:, 2:] - cb[:, :2], axis=-1)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)
