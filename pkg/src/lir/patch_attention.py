"""Patch Attention: one sigmoid gain per non-overlapping patch."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import functional as F
from .nn import MLP, Conv2d, Module
from .tensor import Tensor, mul, reshape, sigmoid


@dataclass(frozen=True)
class PatchAttentionConfig:
    ph: int = 8
    pw: int = 8
    c_scale: int = 16
    min_hidden: int = 16

    def __post_init__(self):
        if self.ph not in (2, 4, 8) or self.pw not in (2, 4, 8):
            raise ValueError(f"patch size ({self.ph}, {self.pw}) must use sides from {{2, 4, 8}}")

    def reduced(self, channels: int) -> int:
        if channels % self.c_scale:
            raise ValueError(f"{channels} channels not divisible by c_scale={self.c_scale}")
        return channels // self.c_scale

    def row_length(self, channels: int) -> int:
        return self.ph * self.pw * self.reduced(channels)

    def hidden(self, channels: int) -> int:
        return max(self.min_hidden, self.row_length(channels) // 2)


class PatchAttention(Module):
    def __init__(self, channels: int, cfg: PatchAttentionConfig = PatchAttentionConfig(),
                 rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.channels = channels
        self.reduce = Conv2d(channels, cfg.reduced(channels), 1, rng=rng)
        length = cfg.row_length(channels)
        self.mlp = MLP(length, cfg.hidden(channels), 1, rng=rng)

    def weights(self, x: Tensor) -> Tensor:
        """Per-patch gains in (0, 1), shape ``(N, H/ph, W/pw)``."""
        n, c, h, w = x.shape
        ph, pw = self.cfg.ph, self.cfg.pw
        if h % ph or w % pw:
            raise ValueError(f"patch grid {ph}x{pw} does not divide feature map {h}x{w}")
        rows = F.patchify(self.reduce(x), ph, pw)
        return reshape(sigmoid(self.mlp(rows)), (n, h // ph, w // pw))

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        n, c, h, w = x.shape
        ph, pw = self.cfg.ph, self.cfg.pw
        gains = reshape(self.weights(x), (n, 1, h // ph, 1, w // pw, 1))
        blocks = reshape(x, (n, c, h // ph, ph, w // pw, pw))
        y = reshape(mul(blocks, gains), (n, c, h, w))
        return reshape(y, y.shape[1:]) if squeeze else y


def pa_cost(cfg: PatchAttentionConfig, channels: int, h: int, w: int) -> int:
    """Multiply-accumulates of the 1x1 reduction, the MLP and the gain product."""
    reduced = cfg.reduced(channels)
    patches = (h * w) // (cfg.ph * cfg.pw)
    length = cfg.row_length(channels)
    hidden = cfg.hidden(channels)
    return channels * reduced * h * w + patches * (length * hidden + hidden) + channels * h * w


def pa_params(cfg: PatchAttentionConfig, channels: int) -> int:
    reduced = cfg.reduced(channels)
    length = cfg.row_length(channels)
    hidden = cfg.hidden(channels)
    return channels * reduced + reduced + length * hidden + hidden + hidden + 1


def self_attention_lower_bound(channels: int, h: int, w: int) -> int:
    """MACs of one ``QK^T`` product over all ``H*W`` tokens."""
    return (h * w) ** 2 * channels
