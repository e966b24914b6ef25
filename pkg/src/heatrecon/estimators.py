"""Scikit-learn style estimator facade over the reconstruction models.

`FieldReconstructor` exposes the usual fit / predict / get_params / set_params
surface so the models compose with sklearn tooling (clone, grid search over
hyperparameters, pipelines that end in a regressor). fit consumes a Dataset
and builds reference pairs internally; predict maps sparse readings to full
Kelvin fields.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .datagen import Dataset, PairingStrategy, make_pairs, select_test_reference
from .domain import Readings, Sample
from .models import ARCHS, IPTR_VARIANTS, build_model, load_state, save_state
from .training import TrainConfig, evaluate, predict_fields, train

__all__ = ["FieldReconstructor", "check_fitted", "check_dataset", "check_readings"]


def check_dataset(ds) -> Dataset:
    if not isinstance(ds, Dataset):
        raise TypeError(f"expected a Dataset, got {type(ds).__name__}")
    if len(ds.split("train")) < 2:
        raise ValueError("training split needs at least 2 samples to form reference pairs")
    return ds


def check_readings(x) -> list[Readings | Sample]:
    items = x if isinstance(x, (list, tuple)) else [x]
    for item in items:
        if not isinstance(item, (Readings, Sample)):
            raise TypeError(f"predict expects Readings or Sample inputs, got {type(item).__name__}")
    return list(items)


def check_fitted(est, attrs=("model_",)):
    for a in attrs:
        if not hasattr(est, a):
            raise NotFittedError(
                f"{type(est).__name__} is not fitted yet; call fit or load before predicting"
            )


class FieldReconstructor(BaseEstimator, RegressorMixin):
    """Sparse-readings-to-field reconstructor with a sklearn estimator API.

    Parameters
    ----------
    arch : one of {"iptr", "vor_unet", "vor_fno", "mask_unet", "mask_fno",
        "vor_identity"}. The identity entry returns the voronoi pseudo-field
        itself and trains nothing.
    variant : dual-branch ablation flag, one of {"full", "no_aux",
        "no_implicit", "unet_aux"}; only meaningful for arch="iptr".
    pairing : "sliding" pairs each training sample with its successor
        (wrapping); "fixed" pairs everything against one shared reference.
    """

    def __init__(
        self,
        arch: str = "iptr",
        variant: str = "full",
        latent_channels: int = 32,
        lift_channels: int = 32,
        modes1: int = 12,
        modes2: int = 12,
        unet_base: int = 32,
        epochs: int = 150,
        batch_size: int = 16,
        lr: float = 1.5e-4,
        milestones: tuple[int, ...] = (100,),
        decay: float = 0.1,
        clip_norm: float = 1.0,
        pairing: str = "sliding",
        fixed_reference_index: int = 0,
        reference_seed: int = 0,
        seed: int = 0,
    ):
        self.arch = arch
        self.variant = variant
        self.latent_channels = latent_channels
        self.lift_channels = lift_channels
        self.modes1 = modes1
        self.modes2 = modes2
        self.unet_base = unet_base
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.milestones = milestones
        self.decay = decay
        self.clip_norm = clip_norm
        self.pairing = pairing
        self.fixed_reference_index = fixed_reference_index
        self.reference_seed = reference_seed
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            milestones=tuple(self.milestones),
            decay=self.decay,
            seed=self.seed,
            pairing=PairingStrategy(self.pairing, self.fixed_reference_index),
            clip_norm=self.clip_norm,
        )

    def fit(self, X, y=None):
        """Train on a Dataset's training split, validating on its val split."""
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.variant not in IPTR_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {IPTR_VARIANTS}")
        ds = check_dataset(X)
        state = build_model(
            self.arch,
            variant=self.variant,
            seed=self.seed,
            stats=ds.stats,
            resolution=ds.scenario.resolution,
            latent_channels=self.latent_channels,
            lift_channels=self.lift_channels,
            modes1=self.modes1,
            modes2=self.modes2,
            unet_base=self.unet_base,
        )
        self.reference_ = select_test_reference(ds, ds.scenario.name, self.reference_seed)
        self.grid_ = ds.grid
        if self.arch == "vor_identity":
            self.model_ = state
            self.history_ = []
            return self
        cfg = self._train_config()
        pairs = make_pairs(ds, cfg.pairing)
        val = ds.split("val")
        self.model_, self.history_ = train(state, pairs, val, cfg, self.reference_)
        return self

    def warm_start_from(self, directory):
        """Install pretrained parameters; fit afterwards fine-tunes them."""
        self.pretrained_ = load_state(directory)
        return self

    def finetune(self, X, cfg: TrainConfig | None = None):
        """Fine-tune the warm-started (or fitted) model on a new Dataset."""
        from .training import finetune, finetune_defaults

        ds = check_dataset(X)
        state = getattr(self, "pretrained_", None) or getattr(self, "model_", None)
        if state is None:
            raise NotFittedError("finetune needs warm_start_from(...) or a previous fit")
        state.stats = ds.stats  # adopt the new scenario's normalization span
        cfg = cfg if cfg is not None else finetune_defaults(seed=self.seed)
        self.reference_ = select_test_reference(ds, ds.scenario.name, self.reference_seed)
        self.grid_ = ds.grid
        pairs = make_pairs(ds, PairingStrategy(self.pairing, self.fixed_reference_index))
        self.model_, self.history_ = finetune(state, pairs, ds.split("val"), cfg, self.reference_)
        return self

    def predict(self, X, reference: Sample | None = None):
        """Reconstruct Kelvin fields from Readings or Samples.

        Returns a single ScalarField for a single input, else a list.
        """
        check_fitted(self)
        items = check_readings(X)
        ref = reference if reference is not None else getattr(self, "reference_", None)
        samples = [self._as_sample(item) for item in items]
        fields = predict_fields(self.model_, samples, ref)
        return fields[0] if not isinstance(X, (list, tuple)) else fields

    def _as_sample(self, item):
        if isinstance(item, Sample):
            return item
        # Readings only: wrap with a placeholder field for grid bookkeeping
        placeholder = np.zeros((self.grid_.ny, self.grid_.nx), dtype=np.float32)
        from .domain import BoundarySpec, ScalarField

        return Sample(
            condition_id="query",
            sources=(),
            boundary=BoundarySpec.all_dirichlet(),
            field=ScalarField(self.grid_, placeholder),
            readings=item,
            seed=-1,
        )

    def evaluate(self, samples: list[Sample], reference: Sample | None = None):
        check_fitted(self)
        ref = reference if reference is not None else getattr(self, "reference_", None)
        return evaluate(self.model_, samples, ref)

    def score(self, X, y=None):
        """Negative Kelvin MAE over a list of Samples (higher is better)."""
        return -self.evaluate(list(X)).mae

    def save(self, directory) -> Path:
        check_fitted(self)
        return Path(save_state(self.model_, directory))

    def load(self, directory):
        """Install a fitted state from a checkpoint directory."""
        self.model_ = load_state(directory)
        from .domain import Grid

        res = self.model_.resolution
        self.grid_ = Grid(res, res, 0.1, 0.1)
        self.history_ = []
        return self
