"""Spectral convolution and Fourier layers over the real-input half spectrum.

Mode retention is symmetric: the first axis keeps the F1 frequencies of
lowest magnitude counting both signs (0, +1, -1, +2, ...), the second axis
keeps the first F2 columns of the half spectrum. Each retained mode carries
its own complex channel-mixing matrix; everything else is zeroed before the
inverse transform, so the operator is a low-pass filter with learned mixing.
"""

from __future__ import annotations

import functools

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["symmetric_row_order", "SpectralConv2d", "FourierLayer", "AuxBranch", "FNOBaseline"]


@functools.lru_cache(maxsize=64)
def symmetric_row_order(n: int) -> tuple[int, ...]:
    """FFT row indices ordered by |frequency|, positive sign first.

    For n = 4: (0, 1, 3, 2) i.e. frequencies 0, +1, -1, -2.
    """
    signed = [(k if k <= n // 2 else k - n) for k in range(n)]
    order = sorted(range(n), key=lambda k: (abs(signed[k]), signed[k] < 0))
    return tuple(order)


class SpectralConv2d(nn.Module):
    def __init__(self, channels: int, modes1: int, modes2: int):
        super().__init__()
        self.channels = channels
        self.modes1 = modes1
        self.modes2 = modes2
        # complex weights stored as trailing real/imaginary pairs
        self.weight = nn.Parameter(torch.zeros(modes1, modes2, channels, channels, 2))
        self.reset_parameters(torch.Generator().manual_seed(0))

    def reset_parameters(self, generator: torch.Generator):
        scale = 1.0 / (self.channels**2)
        with torch.no_grad():
            self.weight.uniform_(0.0, scale, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x[None]
        _, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        wr = w // 2 + 1
        if self.modes1 > h or self.modes2 > wr:
            raise ValueError(
                f"retained modes ({self.modes1}, {self.modes2}) exceed representable ({h}, {wr})"
            )
        rows = torch.tensor(symmetric_row_order(h)[: self.modes1], device=x.device)
        x_ft = torch.fft.rfft2(x)
        sel = x_ft[:, :, rows, : self.modes2]  # (B, C, F1, F2)
        weight = torch.view_as_complex(self.weight)
        mixed = torch.einsum("fgij,bjfg->bifg", weight, sel)
        out_ft = torch.zeros_like(x_ft)
        cols = torch.arange(self.modes2, device=x.device)
        out_ft[:, :, rows[:, None], cols[None, :]] = mixed
        out = torch.fft.irfft2(out_ft, s=(h, w))
        return out[0] if squeeze else out


class FourierLayer(nn.Module):
    """u' = gelu(W u + K(u)) with a learnable 1x1 local path W."""

    def __init__(self, channels: int, modes1: int, modes2: int):
        super().__init__()
        self.spectral = SpectralConv2d(channels, modes1, modes2)
        self.local = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return F.gelu(self.local(x) + self.spectral(x))


class _FourierStack(nn.Module):
    """Lift -> N Fourier layers -> two-step projection to one channel."""

    def __init__(self, in_channels: int, width: int, modes1: int, modes2: int, n_layers: int = 4):
        super().__init__()
        self.fc0 = nn.Conv2d(in_channels, width, 1)
        self.layers = nn.ModuleList(FourierLayer(width, modes1, modes2) for _ in range(n_layers))
        self.fc1 = nn.Conv2d(width, width // 2, 1)
        self.fc2 = nn.Conv2d(width // 2, 1, 1)

    def forward(self, x):
        u = self.fc0(x)
        for layer in self.layers:
            u = layer(u)
        return self.fc2(F.gelu(self.fc1(u)))


class AuxBranch(nn.Module):
    """Spectral encoding of the target pseudo-field, (B, 1, H, W) -> (B, 1, H/4, W/4)."""

    def __init__(self, width: int = 32, modes1: int = 12, modes2: int = 12, n_layers: int = 4):
        super().__init__()
        self.stack = _FourierStack(1, width, modes1, modes2, n_layers)

    def forward(self, x):
        from .blocks import maxpool4

        return maxpool4(self.stack(x))


class FNOBaseline(nn.Module):
    """Resolution-preserving spectral baseline (no pooling)."""

    def __init__(self, in_channels: int, width: int = 32, modes1: int = 12, modes2: int = 12, n_layers: int = 4):
        super().__init__()
        self.stack = _FourierStack(in_channels, width, modes1, modes2, n_layers)

    def forward(self, x):
        return self.stack(x)
