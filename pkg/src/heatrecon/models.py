"""Reconstruction model assembly: the dual-branch network and its baselines.

The dual-branch reconstructor pairs an implicit branch (cross-attention from
the target pseudo-field latents over reference pseudo-field latents into
reference field latents) with a spectral auxiliary branch over the target
pseudo-field alone; the concatenated features drive the modulated decoder.
Baselines map a single pseudo-field to the full-resolution field with either
a UNet or a spectral stack. Everything works in normalized field units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoding import NormStats
from .nn import (
    AuxBranch,
    FNOBaseline,
    SmallUNetAux,
    SpadeDecoder,
    SpectralConv2d,
    UNetBaseline,
    UNetEncoder,
    cross_attention,
    load_checkpoint,
    positional_embedding,
    save_checkpoint,
)

__all__ = [
    "ARCHS",
    "IPTR_VARIANTS",
    "ModelState",
    "IPTRNet",
    "build_model",
    "init_parameters",
    "save_state",
    "load_state",
    "input_channels",
]

ARCHS = ("iptr", "vor_unet", "vor_fno", "mask_unet", "mask_fno", "vor_identity")
IPTR_VARIANTS = ("full", "no_aux", "no_implicit", "unet_aux")

DEFAULT_HPARAMS = {
    "latent_channels": 32,
    "lift_channels": 32,
    "modes1": 12,
    "modes2": 12,
    "unet_base": 32,
}


def input_channels(arch: str) -> int:
    return 2 if arch.startswith("mask") else 1


class IPTRNet(nn.Module):
    """g(V_t, V_s, T_s) -> normalized field estimate, (B, 1, H, W).

    Variants drop one branch entirely (its parameters are absent from the
    module) or swap the spectral auxiliary encoder for a small UNet.
    """

    def __init__(
        self,
        latent_channels: int = 32,
        lift_channels: int = 32,
        modes1: int = 12,
        modes2: int = 12,
        variant: str = "full",
    ):
        super().__init__()
        if variant not in IPTR_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {IPTR_VARIANTS}")
        self.variant = variant
        self.latent_channels = latent_channels
        c = latent_channels
        decoder_channels = 0
        if variant != "no_implicit":
            self.monitor_encoder = UNetEncoder(1, c)  # shared between target and reference
            self.field_encoder = UNetEncoder(1, c)
            decoder_channels += c
        if variant != "no_aux":
            self.aux = SmallUNetAux() if variant == "unet_aux" else AuxBranch(lift_channels, modes1, modes2)
            decoder_channels += 1
        self.decoder = SpadeDecoder(decoder_channels)

    def forward(self, v_t: torch.Tensor, v_s: torch.Tensor, t_s: torch.Tensor) -> torch.Tensor:
        parts = []
        if self.variant != "no_implicit":
            q_lat = self.monitor_encoder(v_t)
            k_lat = self.monitor_encoder(v_s)
            val_lat = self.field_encoder(t_s)
            b, c, h4, w4 = q_lat.shape
            pos = positional_embedding(c, h4, w4).to(dtype=q_lat.dtype, device=q_lat.device)
            pos_tokens = pos.flatten(1).transpose(0, 1)  # (L, C)
            q = q_lat.flatten(2).transpose(1, 2) + pos_tokens
            k = k_lat.flatten(2).transpose(1, 2) + pos_tokens
            v = val_lat.flatten(2).transpose(1, 2)
            i_p = cross_attention(q, k, v).transpose(1, 2).reshape(b, c, h4, w4)
            parts.append(i_p)
        if self.variant != "no_aux":
            parts.append(self.aux(v_t))
        f_p = torch.cat(parts, dim=1) if len(parts) > 1 else parts[0]
        return self.decoder(f_p)


@dataclass
class ModelState:
    """A reconstruction model plus everything needed to use it."""

    arch: str
    module: nn.Module | None
    hparams: dict
    stats: NormStats | None = None
    variant: str = "full"
    seed: int = 0
    resolution: int = 64

    def parameter_names(self) -> list[str]:
        if self.module is None:
            return []
        return [name for name, _ in self.module.state_dict().items()]


def init_parameters(module: nn.Module, seed: int):
    """Deterministic re-initialization: fan-in-scaled uniform weights, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, SpectralConv2d):
                m.reset_parameters(gen)
            elif isinstance(m, nn.GroupNorm) and m.affine:
                m.weight.fill_(1.0)
                m.bias.zero_()


def build_model(
    arch: str,
    variant: str = "full",
    seed: int = 0,
    stats: NormStats | None = None,
    resolution: int = 64,
    **hparams,
) -> ModelState:
    hp = {**DEFAULT_HPARAMS, **hparams}
    # spectral modes cannot exceed what the working resolution represents
    hp["modes1"] = min(hp["modes1"], resolution)
    hp["modes2"] = min(hp["modes2"], resolution // 2 + 1)
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    if arch == "vor_identity":
        return ModelState(arch, None, hp, stats, "full", seed, resolution)
    if arch == "iptr":
        module: nn.Module = IPTRNet(
            hp["latent_channels"], hp["lift_channels"], hp["modes1"], hp["modes2"], variant
        )
    elif arch in ("vor_unet", "mask_unet"):
        module = UNetBaseline(input_channels(arch), hp["unet_base"])
    else:
        module = FNOBaseline(input_channels(arch), hp["lift_channels"], hp["modes1"], hp["modes2"])
    init_parameters(module, seed)
    return ModelState(arch, module, hp, stats, variant if arch == "iptr" else "full", seed, resolution)


def save_state(state: ModelState, directory):
    if state.module is None:
        raise ValueError(f"architecture {state.arch!r} has no parameters to checkpoint")
    meta = {
        "arch": state.arch,
        "variant": state.variant,
        "hparams": state.hparams,
        "seed": state.seed,
        "resolution": state.resolution,
        "stats": state.stats.to_dict() if state.stats is not None else None,
    }
    return save_checkpoint(directory, state.module, meta)


def load_state(directory) -> ModelState:
    manifest, tensors = load_checkpoint(directory)
    stats = NormStats.from_dict(manifest["stats"]) if manifest.get("stats") else None
    state = build_model(
        manifest["arch"],
        variant=manifest.get("variant", "full"),
        seed=manifest.get("seed", 0),
        stats=stats,
        resolution=manifest.get("resolution", 64),
        **manifest["hparams"],
    )
    state.module.load_state_dict(tensors)
    return state


def iptr_forward(state: ModelState, v_t, v_s, t_s):
    """Pseudo-field-level forward for the dual-branch model.

    v_t, v_s are normalized voronoi pseudo-fields; t_s is the normalized
    reference field. Returns a normalized ScalarField.
    """
    from .domain import ScalarField

    if state.arch != "iptr":
        raise ValueError(f"iptr_forward called on architecture {state.arch!r}")
    grids = {v_t.grid, v_s.grid, t_s.grid}
    if len(grids) != 1:
        raise ValueError("target and reference resolutions must match")
    state.module.eval()
    with torch.no_grad():
        out = state.module(
            torch.as_tensor(v_t.values, dtype=torch.float32)[None, None],
            torch.as_tensor(v_s.values, dtype=torch.float32)[None, None],
            torch.as_tensor(t_s.values, dtype=torch.float32)[None, None],
        )
    return ScalarField(v_t.grid, out[0, 0].numpy().astype(float), units="norm")


def baseline_forward(state: ModelState, pf):
    """Pseudo-field-level forward for the single-input baselines."""
    from .domain import ScalarField

    if state.arch not in ("vor_unet", "vor_fno", "mask_unet", "mask_fno"):
        raise ValueError(f"baseline_forward called on architecture {state.arch!r}")
    expected = {1: "voronoi", 2: "mask"}[input_channels(state.arch)]
    if pf.kind != expected:
        raise ValueError(f"{state.arch} expects a {expected} pseudo-field, got {pf.kind}")
    state.module.eval()
    with torch.no_grad():
        out = state.module(torch.as_tensor(pf.channels(), dtype=torch.float32)[None])
    return ScalarField(pf.grid, out[0, 0].numpy().astype(float), units="norm")
