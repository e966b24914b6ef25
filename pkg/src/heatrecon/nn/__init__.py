from .blocks import (
    UNetEncoder,
    UNetBaseline,
    SmallUNetAux,
    conv3x3,
    cross_attention,
    dense,
    gelu,
    group_count,
    maxpool4,
    positional_embedding,
)
from .spectral import AuxBranch, FNOBaseline, FourierLayer, SpectralConv2d, symmetric_row_order
from .spade import SpadeDecoder, SpadeNorm, SpadeResBlock
from .checkpoint import load_checkpoint, save_checkpoint, CheckpointError

__all__ = [
    "UNetEncoder",
    "UNetBaseline",
    "SmallUNetAux",
    "conv3x3",
    "cross_attention",
    "dense",
    "gelu",
    "group_count",
    "maxpool4",
    "positional_embedding",
    "AuxBranch",
    "FNOBaseline",
    "FourierLayer",
    "SpectralConv2d",
    "symmetric_row_order",
    "SpadeDecoder",
    "SpadeNorm",
    "SpadeResBlock",
    "load_checkpoint",
    "save_checkpoint",
    "CheckpointError",
]
