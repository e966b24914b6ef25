"""Parameter checkpoints: params.json manifest plus one float32 binary blob.

The manifest records names, shapes, dtype, format version and arbitrary
caller metadata; the blob concatenates the state-dict tensors in manifest
order as little-endian float32 and is integrity-checked by sha256.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(directory, module: torch.nn.Module, meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "float32",
        "params": entries,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        **meta,
    }
    (directory / "params.bin").write_bytes(blob)
    (directory / "params.json").write_text(json.dumps(manifest, indent=1))
    return directory


def load_checkpoint(directory) -> tuple[dict, dict[str, torch.Tensor]]:
    """Returns (manifest, state_dict); the caller rebuilds the module."""
    directory = Path(directory)
    manifest_path = directory / "params.json"
    if not manifest_path.exists():
        raise CheckpointError(f"missing checkpoint manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = (directory / "params.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checkpoint blob checksum mismatch")
    state = {}
    offset = 0
    for entry in manifest["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset += count * 4
        state[entry["name"]] = torch.from_numpy(arr.copy())
    if offset != len(blob):
        raise CheckpointError(f"checkpoint blob has {len(blob) - offset} trailing bytes")
    return manifest, state
