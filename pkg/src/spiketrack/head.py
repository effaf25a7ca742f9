"""Decoupled spiking detection head, anchor-free decoding and tag-preserving NMS."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, from_corners, pairwise_iou, to_corners
from .spiking import (D_MAX, ConvSpec, ShapeError, SpikeTensor, conv_time, ilif,
                      init_conv)

STRIDES = (8, 16, 32)
TAU_HIGH = 0.6
TAU_LOW = 0.1
NMS_IOU = 0.7


class Source(enum.Enum):
    HIGH = "high"
    LOW = "low"
    SUPPRESSED = "suppressed"


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    class_id: int = 0
    source: Source = Source.HIGH


@dataclass
class LevelOutput:
    stride: int
    cls_logits: np.ndarray  # (B, C_cls, H, W)
    box_raw: np.ndarray     # (B, 4, H, W)
    obj_logit: np.ndarray   # (B, 1, H, W)


@dataclass
class HeadOutput:
    levels: list[LevelOutput]

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ShapeError("head output needs exactly three scale levels")


@dataclass
class LevelHeadWeights:
    stem: ConvSpec
    cls_convs: list[ConvSpec]
    cls_pred: ConvSpec
    reg_convs: list[ConvSpec]
    box_pred: ConvSpec
    obj_pred: ConvSpec


@dataclass
class HeadWeights:
    levels: list[LevelHeadWeights]
    num_classes: int = 1


def init_head(rng: np.random.Generator, in_channels: Sequence[int], hidden: int = 16,
              num_classes: int = 1) -> HeadWeights:
    levels = []
    for c in in_channels:
        levels.append(LevelHeadWeights(
            stem=init_conv(rng, "pointwise", c, hidden),
            cls_convs=[init_conv(rng, "standard", hidden, hidden, 3) for _ in range(2)],
            cls_pred=init_conv(rng, "pointwise", hidden, num_classes, bn=False, bias=True),
            reg_convs=[init_conv(rng, "standard", hidden, hidden, 3) for _ in range(2)],
            box_pred=init_conv(rng, "pointwise", hidden, 4, bn=False, bias=True),
            obj_pred=init_conv(rng, "pointwise", hidden, 1, bn=False, bias=True),
        ))
    return HeadWeights(levels, num_classes)


def spike_conv(spec: ConvSpec, x: np.ndarray, d_max: int = D_MAX) -> np.ndarray:
    """I-LIF followed by conv (+ folded BN when the spec carries one)."""
    return conv_time(spec, ilif(x, d_max))


def head_forward(features: Sequence, weights: HeadWeights, d_max: int = D_MAX) -> HeadOutput:
    if len(features) != len(weights.levels):
        raise ShapeError("one feature map per head level is required")
    out = []
    for feat, lw, stride in zip(features, weights.levels, STRIDES):
        x = feat.data if isinstance(feat, SpikeTensor) else np.asarray(feat)
        if x.ndim != 5 or x.shape[2] != lw.stem.in_channels:
            raise ShapeError(f"feature {x.shape} does not match stem with {lw.stem.in_channels} channels")
        x = spike_conv(lw.stem, x, d_max)
        c = x
        for spec in lw.cls_convs:
            c = spike_conv(spec, c, d_max)
        r = x
        for spec in lw.reg_convs:
            r = spike_conv(spec, r, d_max)
        # rate readout: average the real-valued emitters over outer timesteps
        out.append(LevelOutput(
            stride=stride,
            cls_logits=spike_conv(lw.cls_pred, c, d_max).mean(axis=0),
            box_raw=spike_conv(lw.box_pred, r, d_max).mean(axis=0),
            obj_logit=spike_conv(lw.obj_pred, r, d_max).mean(axis=0),
        ))
    return HeadOutput(out)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def decode_boxes(box_raw: np.ndarray, stride: int) -> np.ndarray:
    """``(4, H, W)`` raw regression -> ``(H*W, 4)`` center boxes, row-major cell order."""
    _, H, W = box_raw.shape
    gy, gx = np.mgrid[0:H, 0:W]
    raw = box_raw.reshape(4, -1).astype(np.float64)
    cx = (gx.ravel() + raw[0]) * stride
    cy = (gy.ravel() + raw[1]) * stride
    w = np.exp(raw[2]) * stride
    h = np.exp(raw[3]) * stride
    return np.stack([cx, cy, w, h], axis=1)


def encode_box(box: BBox, cell: tuple[int, int], stride: int) -> np.ndarray:
    """Inverse of :func:`decode_boxes` for one cell ``(gx, gy)``."""
    gx, gy = cell
    return np.array([box.cx / stride - gx, box.cy / stride - gy,
                     np.log(box.w / stride), np.log(box.h / stride)])


def clip_box(box: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    W, H = image_size
    c = to_corners(box)
    c[..., [0, 2]] = np.clip(c[..., [0, 2]], 0, W)
    c[..., [1, 3]] = np.clip(c[..., [1, 3]], 0, H)
    return from_corners(c)


def decode_predictions(h: HeadOutput, conf_thresholds: tuple[float, float] = (TAU_HIGH, TAU_LOW),
                       image_size: Optional[tuple[int, int]] = None,
                       batch_index: int = 0) -> list[Detection]:
    """Decode all levels of one image into tagged candidates (pre-NMS).

    Candidates below the low threshold are dropped. Output order is level,
    then row-major cell, which is the tie-breaking order used by :func:`nms`.
    """
    tau_h, tau_l = conf_thresholds
    if not 0 <= tau_l < tau_h <= 1:
        raise ValueError("thresholds must satisfy 0 <= tau_low < tau_high <= 1")
    dets = []
    for lvl in h.levels:
        boxes = decode_boxes(lvl.box_raw[batch_index], lvl.stride)
        cls = lvl.cls_logits[batch_index].reshape(lvl.cls_logits.shape[1], -1)
        obj = lvl.obj_logit[batch_index].reshape(-1)
        class_id = cls.argmax(axis=0)
        score = _sigmoid(obj) * _sigmoid(cls.max(axis=0))
        if image_size is not None:
            boxes = clip_box(boxes, image_size)
        for i in np.flatnonzero(score >= tau_l):
            b = boxes[i]
            if b[2] <= 0 or b[3] <= 0:
                continue
            src = Source.HIGH if score[i] >= tau_h else Source.LOW
            dets.append(Detection(BBox.from_array(b), float(score[i]), int(class_id[i]), src))
    return dets


def nms(dets: Sequence[Detection], iou_thresh: float = NMS_IOU) -> tuple[list[Detection], list[Detection]]:
    """Greedy per-class NMS. Suppressed boxes are returned, re-tagged, not dropped."""
    if not 0 < iou_thresh < 1:
        raise ValueError("iou_thresh must lie in (0, 1)")
    n = len(dets)
    if n == 0:
        return [], []
    boxes = np.array([d.box.as_array() for d in dets])
    scores = np.array([d.score for d in dets])
    classes = np.array([d.class_id for d in dets])
    order = np.argsort(-scores, kind="stable")
    ious = pairwise_iou(boxes, boxes)
    keep_mask = np.zeros(n, bool)
    dead = np.zeros(n, bool)
    for i in order:
        if dead[i]:
            continue
        keep_mask[i] = True
        dead |= (ious[i] > iou_thresh) & (classes == classes[i])
        dead[i] = True
    kept = [dets[i] for i in order if keep_mask[i]]
    suppressed = [replace(dets[i], source=Source.SUPPRESSED) for i in order if not keep_mask[i]]
    return kept, suppressed


def partition_detections(dets: Sequence[Detection], tau_high: float = TAU_HIGH,
                         tau_low: float = TAU_LOW, nms_iou: float = NMS_IOU):
    """Threshold, run NMS, and split into ``(high, low, suppressed)`` lists."""
    cand = [d for d in dets if d.score >= tau_low]
    kept, suppressed = nms(cand, nms_iou)
    high = [replace(d, source=Source.HIGH) for d in kept if d.score >= tau_high]
    low = [replace(d, source=Source.LOW) for d in kept if d.score < tau_high]
    return high, low, suppressed
