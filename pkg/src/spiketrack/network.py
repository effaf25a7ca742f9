"""Toy-width spiking detector: stem, four meta-block stages, decoupled head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .head import HeadOutput, HeadWeights, head_forward, init_head, spike_conv
from .spiking import (D_MAX, DEFAULT_TIMESTEPS, ConvSpec, SepConvSpec, conv_time, encode_direct,
                      flatten_params, init_ch_conv1, init_ch_conv2, init_conv, init_sep_conv,
                      load_checkpoint, load_params, meta_block, save_checkpoint)


@dataclass
class DetectorConfig:
    widths: tuple[int, ...] = (8, 16, 24, 32)
    stem_width: int = 8
    head_hidden: int = 16
    num_classes: int = 1
    sep_kernel: int = 7
    timesteps: int = DEFAULT_TIMESTEPS
    d_max: int = D_MAX
    seed: int = 0


@dataclass
class Stage:
    down: ConvSpec
    token_mixer: SepConvSpec
    channel_mixer: object  # ChConv1Spec for shallow stages, ChConv2Spec for deep ones


@dataclass
class DetectorWeights:
    stem: ConvSpec
    stages: list[Stage]
    head: HeadWeights


class SpikeDetector:
    """Direct-coded input -> stride 8/16/32 features -> :class:`HeadOutput`.

    The first two stages use the Block-1 channel mixer, the last two the
    re-parameterizable Block-2 mixer.
    """

    def __init__(self, config: Optional[DetectorConfig] = None, weights: Optional[DetectorWeights] = None):
        self.config = config or DetectorConfig()
        self.weights = weights or self._init(np.random.default_rng(self.config.seed))

    def _init(self, rng) -> DetectorWeights:
        cfg = self.config
        stem = init_conv(rng, "standard", 3, cfg.stem_width, 3, stride=2)
        stages, c_prev = [], cfg.stem_width
        for i, c in enumerate(cfg.widths):
            mixer = init_ch_conv1(rng, c) if i < len(cfg.widths) // 2 else init_ch_conv2(rng, c)
            stages.append(Stage(init_conv(rng, "standard", c_prev, c, 3, stride=2),
                                init_sep_conv(rng, c, cfg.sep_kernel), mixer))
            c_prev = c
        head = init_head(rng, cfg.widths[1:], cfg.head_hidden, cfg.num_classes)
        return DetectorWeights(stem, stages, head)

    def features(self, images: np.ndarray) -> list[np.ndarray]:
        """``images``: ``(B, 3, H, W)`` floats in [0, 1]."""
        cfg = self.config
        x = conv_time(self.weights.stem, encode_direct(images, cfg.timesteps))
        feats = []
        for st in self.weights.stages:
            x = spike_conv(st.down, x, cfg.d_max)
            x = meta_block(x, st.token_mixer, st.channel_mixer, cfg.d_max)
            feats.append(x)
        return feats[1:]

    def __call__(self, images: np.ndarray) -> HeadOutput:
        return head_forward(self.features(images), self.weights.head, self.config.d_max)

    def save(self, path) -> None:
        meta = asdict(self.config)
        save_checkpoint(path, flatten_params(self.weights), meta)

    @classmethod
    def load(cls, path) -> "SpikeDetector":
        arrays, meta = load_checkpoint(path)
        meta["widths"] = tuple(meta["widths"])
        det = cls(DetectorConfig(**meta))
        load_params(det.weights, arrays)
        return det
