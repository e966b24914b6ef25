"""Dense/conv primitives, UNet encoders, positional codes, cross-attention."""

from __future__ import annotations

import functools
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "dense",
    "conv3x3",
    "gelu",
    "maxpool4",
    "group_count",
    "positional_embedding",
    "cross_attention",
    "UNetEncoder",
    "UNetBaseline",
    "SmallUNetAux",
]


def dense(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    return F.linear(x, weight, bias)


def conv3x3(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None, stride: int = 1):
    if weight.shape[-2:] != (3, 3):
        raise ValueError(f"expected a 3x3 kernel, got {tuple(weight.shape[-2:])}")
    return F.conv2d(x, weight, bias, stride=stride, padding=1)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def maxpool4(x: torch.Tensor) -> torch.Tensor:
    """Non-overlapping 4x4 max pooling; spatial dims must divide by 4."""
    h, w = x.shape[-2], x.shape[-1]
    if h % 4 or w % 4:
        raise ValueError(f"maxpool4 needs spatial dims divisible by 4, got {h}x{w}")
    return F.max_pool2d(x, 4)


def group_count(channels: int, target_size: int = 8) -> int:
    """Largest group count <= channels/target_size that divides channels."""
    best = 1
    for g in range(1, max(1, channels // target_size) + 1):
        if channels % g == 0:
            best = g
    return best


@functools.lru_cache(maxsize=32)
def _positional_embedding_f64(channels: int, height: int, width: int) -> torch.Tensor:
    half = channels // 2
    pe = torch.zeros(channels, height, width, dtype=torch.float64)
    row = torch.arange(height, dtype=torch.float64)[:, None].expand(height, width)
    col = torch.arange(width, dtype=torch.float64)[None, :].expand(height, width)
    for block, pos in ((0, row), (half, col)):
        for c in range(half):
            div = 10000.0 ** (2 * (c // 2) / half)
            pe[block + c] = torch.sin(pos / div) if c % 2 == 0 else torch.cos(pos / div)
    return pe


def positional_embedding(channels: int, height: int, width: int) -> torch.Tensor:
    """Fixed 2D sinusoidal code, (channels, height, width); half the channels
    encode the row index and half the column index. Parameter-free."""
    if channels % 2:
        raise ValueError(f"positional embedding needs an even channel count, got {channels}")
    return _positional_embedding_f64(channels, height, width).clone()


def cross_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Single-head scaled dot-product attention over (L, C) or (B, L, C) tokens.

    The scale divisor is sqrt(C), C being the feature dimension.
    """
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape or q.shape[:-2] != k.shape[:-2]:
        raise ValueError(f"incompatible attention shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    for name, t in (("q", q), ("k", k), ("v", v)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite values in attention input {name}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = torch.matmul(q, k.transpose(-2, -1)) * scale
    return torch.matmul(torch.softmax(scores, dim=-1), v)


class ConvBlock(nn.Module):
    """conv3x3 -> group norm -> gelu -> conv3x3 -> gelu."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(group_count(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, x):
        x = F.gelu(self.norm(self.conv1(x)))
        return F.gelu(self.conv2(x))


class UNetEncoder(nn.Module):
    """Two stride-2 blocks mapping (B, in, H, W) -> (B, C, H/4, W/4)."""

    def __init__(self, in_channels: int, latent_channels: int):
        super().__init__()
        if latent_channels % 2:
            raise ValueError("latent channel count must be even")
        self.down1 = ConvBlock(in_channels, latent_channels // 2, stride=2)
        self.down2 = ConvBlock(latent_channels // 2, latent_channels, stride=2)

    def forward(self, x):
        if x.shape[-2] % 4 or x.shape[-1] % 4:
            raise ValueError(f"encoder needs spatial dims divisible by 4, got {tuple(x.shape[-2:])}")
        return self.down2(self.down1(x))


class UNetBaseline(nn.Module):
    """Plain 3-level encoder-decoder with skip connections, full-res output."""

    def __init__(self, in_channels: int, base: int = 32):
        super().__init__()
        self.enc1 = ConvBlock(in_channels, base)
        self.enc2 = ConvBlock(base, base * 2)
        self.enc3 = ConvBlock(base * 2, base * 4)
        self.dec2 = ConvBlock(base * 4 + base * 2, base * 2)
        self.dec1 = ConvBlock(base * 2 + base, base)
        self.head = nn.Conv2d(base, 1, 3, padding=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([F.interpolate(e3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return self.head(d1)


class SmallUNetAux(nn.Module):
    """UNet alternative to the spectral auxiliary branch: 1xHxW -> 1xH/4xW/4."""

    def __init__(self, base: int = 16):
        super().__init__()
        self.enc1 = ConvBlock(1, base)
        self.enc2 = ConvBlock(base, base * 2)
        self.dec1 = ConvBlock(base * 2 + base, base)
        self.head = nn.Conv2d(base, 1, 3, padding=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        d1 = self.dec1(torch.cat([F.interpolate(e2, scale_factor=2, mode="nearest"), e1], dim=1))
        return maxpool4(self.head(d1))
