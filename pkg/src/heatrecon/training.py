"""Loss, optimization schedule, training loop, fine-tuning, and metrics.

Training minimizes the mean absolute error in normalized field units with
Adam, step-decay at epoch milestones, global-norm gradient clipping, and
best-validation checkpoint retention. Everything is seeded: shuffling comes
from a numpy generator and parameter init from the model seed, so identical
configs reproduce identical histories bit for bit.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datagen import PairingStrategy, generate, make_pairs, scenario_template, select_test_reference
from .domain import ReferencePair, Sample, ScalarField
from .encoding import NormStats, denormalize, mask_encode, normalize, voronoi_encode
from .models import ModelState, build_model

__all__ = [
    "TrainConfig",
    "EvalResult",
    "TrainingError",
    "mae",
    "max_ae",
    "train",
    "finetune",
    "finetune_defaults",
    "evaluate",
    "predict_fields",
    "sensor_sweep",
    "write_history",
]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 1.5e-4
    milestones: tuple[int, ...] = (100,)
    decay: float = 0.1
    seed: int = 0
    pairing: PairingStrategy = field(default_factory=PairingStrategy)
    loss: str = "l1"
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss != "l1":
            raise ValueError(f"unsupported loss {self.loss!r}")
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.epochs for m in ms):
            raise ValueError(f"milestones {ms} must increase strictly and stay below epochs={self.epochs}")
        object.__setattr__(self, "milestones", ms)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-indexed epoch; decays after each milestone epoch."""
        return self.lr * self.decay ** sum(1 for m in self.milestones if m < epoch)


def finetune_defaults(seed: int = 0, epochs: int = 100) -> TrainConfig:
    milestones = (70,) if epochs > 70 else ()
    return TrainConfig(epochs=epochs, batch_size=1, milestones=milestones, seed=seed)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, ScalarField) else np.asarray(x)


def mae(t, t_hat) -> float:
    a, b = _values(t), _values(t_hat)
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def max_ae(t, t_hat) -> float:
    a, b = _values(t), _values(t_hat)
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True)
class EvalResult:
    per_sample_mae: tuple[float, ...]
    per_sample_maxae: tuple[float, ...]
    mae: float
    maxae: float
    reference_ids: dict[str, int]

    def __post_init__(self):
        for m, mx in zip(self.per_sample_mae, self.per_sample_maxae):
            if mx < m:
                raise ValueError("per-sample Max-AE below MAE violates the norm inequality")


def _encode_target(sample: Sample, arch: str, stats: NormStats) -> np.ndarray:
    """Normalized model input channels for one sample, shape (C_in, H, W)."""
    grid = sample.field.grid
    if arch.startswith("mask"):
        pf = mask_encode(sample.readings, grid)
        return np.stack([normalize(pf.values, stats), pf.mask])
    pf = voronoi_encode(sample.readings, grid)
    return normalize(pf.values, stats)[None]


def _iptr_arrays(pairs: list[ReferencePair], stats: NormStats):
    v_t = np.stack([_encode_target(p.target, "iptr", stats) for p in pairs])
    v_s = np.stack([_encode_target(p.reference, "iptr", stats) for p in pairs])
    t_s = np.stack([normalize(p.reference.field.values, stats)[None] for p in pairs])
    y = np.stack([normalize(p.target.field.values, stats)[None] for p in pairs])
    return [torch.as_tensor(a, dtype=torch.float32) for a in (v_t, v_s, t_s)], torch.as_tensor(
        y, dtype=torch.float32
    )


def _baseline_arrays(pairs: list[ReferencePair], arch: str, stats: NormStats):
    x = np.stack([_encode_target(p.target, arch, stats) for p in pairs])
    y = np.stack([normalize(p.target.field.values, stats)[None] for p in pairs])
    return [torch.as_tensor(x, dtype=torch.float32)], torch.as_tensor(y, dtype=torch.float32)


def _forward(state: ModelState, inputs: list[torch.Tensor], idx=None) -> torch.Tensor:
    xs = [t if idx is None else t[idx] for t in inputs]
    if state.arch == "iptr":
        return state.module(*xs)
    return state.module(xs[0])


def predict_fields(
    state: ModelState, samples: list[Sample], reference: Sample | dict[str, Sample] | None = None
) -> list[ScalarField]:
    """Reconstructed Kelvin fields for a list of samples.

    The reference may be a single sample, or a per-condition mapping when the
    test set mixes conditions. Baselines ignore it; the identity baseline
    returns the target's own pseudo-field.
    """
    if not samples:
        return []
    grid = samples[0].field.grid
    if state.arch == "vor_identity":
        return [
            ScalarField(grid, voronoi_encode(s.readings, grid).values) for s in samples
        ]
    stats = state.stats
    if stats is None:
        raise TrainingError("model state carries no normalization stats; fit or load first")

    def _ref_for(s: Sample) -> Sample:
        if isinstance(reference, dict):
            if s.condition_id not in reference:
                raise ValueError(f"no reference for condition {s.condition_id!r}")
            return reference[s.condition_id]
        if reference is None:
            raise ValueError("the dual-branch model needs a reference sample")
        return reference

    state.module.eval()
    out_fields = []
    with torch.no_grad():
        for s in samples:
            if state.arch == "iptr":
                # encoded directly so a sample may serve as its own reference
                ref = _ref_for(s)
                arrays = [
                    _encode_target(s, "iptr", stats),
                    _encode_target(ref, "iptr", stats),
                    normalize(ref.field.values, stats)[None],
                ]
                inputs = [torch.as_tensor(a[None], dtype=torch.float32) for a in arrays]
            else:
                inputs = [
                    torch.as_tensor(_encode_target(s, state.arch, stats)[None], dtype=torch.float32)
                ]
            pred = _forward(state, inputs).numpy()[0, 0].astype(float)
            out_fields.append(ScalarField(grid, denormalize(pred, stats)))
    return out_fields


def train(
    state: ModelState,
    pairs: list[ReferencePair],
    val_samples: list[Sample],
    cfg: TrainConfig,
    val_reference: Sample | dict[str, Sample] | None = None,
) -> tuple[ModelState, list[dict]]:
    """Optimize the model on reference pairs; returns (state, per-epoch history).

    The best-validation parameters are restored at the end when a validation
    set is given.
    """
    if not pairs:
        raise TrainingError("no training pairs")
    if state.module is None:
        raise TrainingError(f"architecture {state.arch!r} is not trainable")
    stats = state.stats
    if stats is None:
        raise TrainingError("model state carries no normalization stats")

    if state.arch == "iptr":
        inputs, targets = _iptr_arrays(pairs, stats)
    else:
        inputs, targets = _baseline_arrays(pairs, state.arch, stats)

    module = state.module
    module.train()
    opt = torch.optim.Adam(module.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    history: list[dict] = []
    best = (math.inf, None)

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(perm[start : start + cfg.batch_size])
            pred = _forward(state, inputs, idx)
            loss = torch.mean(torch.abs(pred - targets[idx]))
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (lr={lr:.2e}, batch start {start})"
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(module.parameters(), cfg.clip_norm)
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        record = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss / n}
        if val_samples:
            res = evaluate(state, val_samples, val_reference)
            record["val_mae_K"] = res.mae
            record["val_maxae_K"] = res.maxae
            if res.mae < best[0]:
                best = (res.mae, copy.deepcopy(module.state_dict()))
            module.train()
        else:
            record["val_mae_K"] = None
            record["val_maxae_K"] = None
        history.append(record)

    if best[1] is not None:
        module.load_state_dict(best[1])
    module.eval()
    return state, history


def finetune(
    state: ModelState,
    pairs: list[ReferencePair],
    val_samples: list[Sample],
    cfg: TrainConfig | None = None,
    val_reference: Sample | dict[str, Sample] | None = None,
) -> tuple[ModelState, list[dict]]:
    """Adapt a pretrained state to few-shot pairs; every parameter updates."""
    cfg = cfg if cfg is not None else finetune_defaults()
    return train(state, pairs, val_samples, cfg, val_reference)


def evaluate(
    state: ModelState,
    samples: list[Sample],
    reference: Sample | dict[str, Sample] | None = None,
) -> EvalResult:
    if not samples:
        raise ValueError("empty evaluation set")
    preds = predict_fields(state, samples, reference)
    per_mae = tuple(mae(s.field, p) for s, p in zip(samples, preds))
    per_max = tuple(max_ae(s.field, p) for s, p in zip(samples, preds))
    refs: dict[str, int] = {}
    if isinstance(reference, Sample):
        refs[reference.condition_id] = reference.seed
    elif isinstance(reference, dict):
        refs = {cid: r.seed for cid, r in reference.items()}
    return EvalResult(
        per_sample_mae=per_mae,
        per_sample_maxae=per_max,
        mae=float(np.mean(per_mae)),
        maxae=float(np.max(per_max)),
        reference_ids=refs,
    )


def sensor_sweep(
    scenario: str,
    counts=(9, 16, 25),
    cfg: TrainConfig | None = None,
    arch: str = "iptr",
    n_train: int = 64,
    n_val: int = 8,
    n_test: int = 16,
    resolution: int = 64,
    master_seed: int = 0,
) -> list[dict]:
    """Train and evaluate one model per sensor count, identical seeds otherwise."""
    cfg = cfg if cfg is not None else TrainConfig(epochs=30, milestones=(25,))
    rows = []
    for k in counts:
        spec = scenario_template(scenario, resolution=resolution, sensor_count=k)
        ds = generate(
            spec,
            n_train + n_val + n_test,
            master_seed,
            {"train": n_train, "val": n_val, "test": n_test},
        )
        pairs = make_pairs(ds, cfg.pairing)
        state = build_model(arch, seed=cfg.seed, stats=ds.stats, resolution=resolution)
        ref = select_test_reference(ds, spec.name, cfg.seed)
        state, _ = train(state, pairs, ds.split("val"), cfg, ref)
        res = evaluate(state, ds.split("test"), ref)
        identity = evaluate(build_model("vor_identity", stats=ds.stats), ds.split("test"))
        rows.append(
            {
                "sensor_count": k,
                "mae_K": res.mae,
                "maxae_K": res.maxae,
                "identity_mae_K": identity.mae,
                "identity_maxae_K": identity.maxae,
            }
        )
    return rows


def write_history(history: list[dict], path) -> Path:
    """Line-delimited JSON training log."""
    path = Path(path)
    with path.open("w") as fh:
        for record in history:
            fh.write(json.dumps(record) + "\n")
    return path
