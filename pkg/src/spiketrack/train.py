"""Toy spiking box regressor trained with the batch-adaptive NWD loss.

Three weight layers with I-LIF between them::

    x (direct-coded over T) -> W1 -> ILIF -> W2 -> ILIF -> W3 -> mean over T

The input is the anchor-free encoding of a box relative to its stride cell
(offset inside the cell, log size in stride units); the output is decoded the
same way the detection head decodes ``box_raw``. Hidden activations are
integers in ``[0, D]``, so localization precision is limited by the spike
budget ``T * D``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import (DEFAULT_LAMBDA, asa_nwd_loss_grad_batch, batch_norm_factor,
                       nwd_similarity_batch)
from .spiking import D_MAX, DEFAULT_TIMESTEPS, ilif, surrogate_grad

INPUT_SCALE = 2.0


def stride_for(boxes: np.ndarray) -> np.ndarray:
    size = np.sqrt(boxes[:, 2] * boxes[:, 3])
    return np.where(size < 32, 8.0, np.where(size < 64, 16.0, 32.0))


def encode(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boxes ``(N, 4)`` -> (features ``(N, 4)``, grid ``(N, 3)`` of cell x, cell y, stride)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    s = stride_for(boxes)
    gx = np.floor(boxes[:, 0] / s)
    gy = np.floor(boxes[:, 1] / s)
    feats = np.stack([boxes[:, 0] / s - gx, boxes[:, 1] / s - gy,
                      np.log(boxes[:, 2] / s), np.log(boxes[:, 3] / s)], axis=1)
    return feats * INPUT_SCALE, np.stack([gx, gy, s], axis=1)


def decode(raw: np.ndarray, grid: np.ndarray) -> np.ndarray:
    s = grid[:, 2]
    return np.stack([(grid[:, 0] + raw[:, 0]) * s, (grid[:, 1] + raw[:, 1]) * s,
                     s * np.exp(raw[:, 2]), s * np.exp(raw[:, 3])], axis=1)


def random_boxes(rng: np.random.Generator, n: int, min_size: float = 8.0, max_size: float = 96.0,
                 canvas: tuple[float, float] = (256.0, 256.0)) -> np.ndarray:
    """Log-uniform sizes, mild aspect jitter, centers fully inside the canvas."""
    W, H = canvas
    w = np.exp(rng.uniform(np.log(min_size), np.log(max_size), n))
    h = w * np.exp(rng.uniform(-0.3, 0.3, n))
    cx = rng.uniform(w / 2, W - w / 2)
    cy = rng.uniform(h / 2, H - h / 2)
    return np.stack([cx, cy, w, h], axis=1)


@dataclass
class RegressorConfig:
    hidden: int = 256
    timesteps: int = DEFAULT_TIMESTEPS
    d_max: int = D_MAX
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-3
    lam: float = DEFAULT_LAMBDA
    # When set, every batch uses this constant instead of the per-batch factor.
    fixed_c: Optional[float] = None
    surrogate_window: float = 0.5
    seed: int = 0


class SpikingRegressor:
    def __init__(self, hidden: int = 256, timesteps: int = DEFAULT_TIMESTEPS, d_max: int = D_MAX,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.T, self.D, self.H = timesteps, d_max, hidden
        self.params = {
            "W1": rng.normal(0.0, 1.0, (4, hidden)),
            "b1": rng.uniform(0.0, d_max, hidden),
            # layer 2 is scaled by 1/sqrt(H) in the forward pass so Adam steps on W2
            # do not move all of its inputs at once and saturate the neurons
            "W2": rng.normal(0.0, 1.0, (hidden, hidden)),
            "b2": np.full(hidden, 0.5),
            "W3": rng.normal(0.0, 0.01 / np.sqrt(hidden), (hidden, 4)),
            # start at the middle of the cell with a size of one stride
            "b3": np.array([0.5, 0.5, 1.0, 1.0]),
        }

    def forward(self, x: np.ndarray, cache: bool = False):
        p, T = self.params, self.T
        a1 = np.broadcast_to(x @ p["W1"] + p["b1"], (T,) + (len(x), self.H))
        s1, u1 = ilif(np.ascontiguousarray(a1), self.D, return_membrane=True)
        a2 = s1 @ p["W2"] / np.sqrt(self.H) + p["b2"]
        s2, u2 = ilif(a2, self.D, return_membrane=True)
        out = (s2 @ p["W3"]).mean(axis=0) / self.H + p["b3"]
        if cache:
            return out, (x, s1, u1, s2, u2)
        return out

    def backward(self, dout: np.ndarray, cache, window: float = 0.5) -> dict[str, np.ndarray]:
        """Surrogate-gradient backprop; the soft-reset path is treated as constant."""
        p, T, H = self.params, self.T, self.H
        x, s1, u1, s2, u2 = cache
        g = {"b3": dout.sum(0), "W3": s2.sum(0).T @ dout / (T * H)}
        da2 = (dout @ p["W3"].T / (T * H))[None] * surrogate_grad(u2, window, self.D)
        g["W2"] = s1.reshape(-1, H).T @ da2.reshape(-1, H) / np.sqrt(H)
        g["b2"] = da2.sum((0, 1))
        da1 = (da2 @ p["W2"].T / np.sqrt(H)) * surrogate_grad(u1, window, self.D)
        da1 = da1.sum(0)
        g["W1"] = x.T @ da1
        g["b1"] = da1.sum(0)
        return g

    def predict(self, boxes_in: np.ndarray) -> np.ndarray:
        feats, grid = encode(boxes_in)
        return decode(self.forward(feats), grid)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr: Optional[float] = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class TrainResult:
    model: SpikingRegressor
    step_loss: list[float]
    epoch_loss: list[float]
    seconds: float
    config: RegressorConfig = field(default_factory=RegressorConfig)


def mean_nwd(model: SpikingRegressor, boxes: np.ndarray, lam: float = DEFAULT_LAMBDA) -> float:
    pred = model.predict(boxes)
    return float(nwd_similarity_batch(pred, boxes, batch_norm_factor(boxes, lam)).mean())


def grouped_loss(model: SpikingRegressor, groups: Sequence[np.ndarray], lam: float = DEFAULT_LAMBDA) -> float:
    """Mean adaptive NWD loss where each group is one batch with its own factor."""
    losses = []
    for boxes in groups:
        pred = model.predict(boxes)
        losses.append(1.0 - nwd_similarity_batch(pred, boxes, batch_norm_factor(boxes, lam)))
    return float(np.concatenate(losses).mean())


def fixed_normalizer(boxes: np.ndarray) -> float:
    """Dataset-wide average absolute size, ``mean(sqrt(w * h))``."""
    return float(np.mean(np.sqrt(boxes[:, 2] * boxes[:, 3])))


def train_regressor(boxes: np.ndarray, config: Optional[RegressorConfig] = None,
                    batches: Optional[Callable[[np.random.Generator], np.ndarray]] = None,
                    log_every: int = 0, log: Callable[[str], None] = print) -> TrainResult:
    """Fit the regressor to reproduce ``boxes`` under the batch-adaptive NWD loss.

    ``batches`` optionally draws index arrays (e.g. one scene per batch);
    the default is uniform sampling without replacement.
    """
    cfg = config or RegressorConfig()
    rng = np.random.default_rng([cfg.seed, 7])
    model = SpikingRegressor(cfg.hidden, cfg.timesteps, cfg.d_max, cfg.seed)
    feats, grid = encode(boxes)
    opt = Adam(model.params, cfg.lr)
    n = len(boxes)
    steps_per_epoch = max(1, n // cfg.batch_size)
    step_loss: list[float] = []
    epoch_loss: list[float] = []
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        idx = batches(rng) if batches else rng.choice(n, min(cfg.batch_size, n), replace=False)
        gt = boxes[idx]
        out, cache = model.forward(feats[idx], cache=True)
        pred = decode(out, grid[idx])
        c = cfg.fixed_c if cfg.fixed_c is not None else batch_norm_factor(gt, cfg.lam).c_b
        loss = 1.0 - nwd_similarity_batch(pred, gt, c)
        dpred = asa_nwd_loss_grad_batch(pred, gt, c) / len(idx)
        s = grid[idx, 2]
        # chain through decode: centers scale by stride, sizes are exponential
        dout = dpred * np.stack([s, s, pred[:, 2], pred[:, 3]], axis=1)
        grads = model.backward(dout, cache, cfg.surrogate_window)
        lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * step / cfg.steps))
        opt.step(model.params, grads, lr)
        step_loss.append(float(loss.mean()))
        if step % steps_per_epoch == 0:
            epoch_loss.append(float(np.mean(step_loss[-steps_per_epoch:])))
        if log_every and step % log_every == 0:
            log(f"step {step:5d}  loss {np.mean(step_loss[-log_every:]):.4f}")
    return TrainResult(model, step_loss, epoch_loss, time.perf_counter() - t0, cfg)
