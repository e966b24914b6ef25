"""Decoder with spatially-modulated normalization.

Each upsampling stage is a residual block whose normalization output is
rescaled per pixel: gamma and beta maps are produced by a small conv stack
from the conditioning map (the fused branch features), resized to the
block's working resolution with nearest-neighbor interpolation.
"""

from __future__ import annotations

import torch.nn as nn
import torch.nn.functional as F

from .blocks import group_count

__all__ = ["SpadeNorm", "SpadeResBlock", "SpadeDecoder"]


class SpadeNorm(nn.Module):
    def __init__(self, channels: int, cond_channels: int, hidden: int = 32):
        super().__init__()
        self.norm = nn.GroupNorm(group_count(channels), channels, affine=False)
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x, cond):
        cond = F.interpolate(cond, size=x.shape[-2:], mode="nearest")
        a = F.gelu(self.shared(cond))
        return self.norm(x) * (1.0 + self.gamma(a)) + self.beta(a)


class SpadeResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, cond_channels: int):
        super().__init__()
        self.norm1 = SpadeNorm(in_channels, cond_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = SpadeNorm(out_channels, cond_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()
        )

    def forward(self, x, cond):
        h = self.conv1(F.gelu(self.norm1(x, cond)))
        h = self.conv2(F.gelu(self.norm2(h, cond)))
        return self.skip(x) + h


class SpadeDecoder(nn.Module):
    """(B, C'', H/4, W/4) -> (B, 1, H, W) through two x2 upsampling stages."""

    def __init__(self, in_channels: int, widths: tuple[int, int] = (32, 16)):
        super().__init__()
        self.block1 = SpadeResBlock(in_channels, widths[0], in_channels)
        self.block2 = SpadeResBlock(widths[0], widths[1], in_channels)
        self.head = nn.Conv2d(widths[1], 1, 3, padding=1)

    def forward(self, fp):
        x = F.interpolate(fp, scale_factor=2, mode="nearest")
        x = self.block1(x, fp)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.block2(x, fp)
        return self.head(x)
