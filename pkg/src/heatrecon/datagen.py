"""Scenario catalog, dataset synthesis, reference pairing, and persistence.

Datasets are bit-reproducible: every sample draws its sources from an RNG
derived from (master_seed, sample_index), so generation is independent of
scheduling and re-runs are byte-identical. Fields are stored as float32 both
in memory and on disk so the save/load round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import (
    BoundarySpec,
    ConductivityModel,
    Grid,
    HeatSource,
    Readings,
    ReferencePair,
    Sample,
    ScalarField,
    SensorLayout,
    SideSpec,
    sample_at_sensors,
    uniform_sensor_layout,
)
from .encoding import NormStats
from .solver import SolveOptions, SolverError, solve_steady

__all__ = [
    "ScenarioSpec",
    "SourceRanges",
    "Dataset",
    "PairingStrategy",
    "DataFormatError",
    "SCENARIO_NAMES",
    "scenario_template",
    "generate",
    "make_pairs",
    "select_test_reference",
    "save_dataset",
    "load_dataset",
]

log = logging.getLogger(__name__)

MAGIC = b"TFRD"
FORMAT_VERSION = 1
SCENARIO_NAMES = ("HSink", "ADlet", "DSine", "NewScenario")


class DataFormatError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceRanges:
    """Sampling ranges for random source layouts."""

    count_min: int = 3
    count_max: int = 8
    q_min: float = 5000.0
    q_max: float = 50000.0
    side_min: float = 0.01
    side_max: float = 0.02
    sigma_g: float = 1.0

    def to_dict(self) -> dict:
        return {
            "count_min": self.count_min,
            "count_max": self.count_max,
            "q_min": self.q_min,
            "q_max": self.q_max,
            "side_min": self.side_min,
            "side_max": self.side_max,
            "sigma_g": self.sigma_g,
        }

    @staticmethod
    def from_dict(d: dict) -> "SourceRanges":
        return SourceRanges(**d)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    boundary: BoundarySpec
    source_kind: str  # "uniform" | "gaussian"
    conductivity: ConductivityModel
    sensor_count: int = 25
    resolution: int = 64
    lx: float = 0.1
    ly: float = 0.1
    ranges: SourceRanges = SourceRanges()

    def grid(self) -> Grid:
        return Grid(self.resolution, self.resolution, self.lx, self.ly)

    def layout(self) -> SensorLayout:
        return uniform_sensor_layout(self.grid(), self.sensor_count)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "boundary": self.boundary.to_dict(),
            "source_kind": self.source_kind,
            "conductivity": self.conductivity.to_dict(),
            "sensor_count": self.sensor_count,
            "resolution": self.resolution,
            "lx": self.lx,
            "ly": self.ly,
            "ranges": self.ranges.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ScenarioSpec":
        return ScenarioSpec(
            name=d["name"],
            boundary=BoundarySpec.from_dict(d["boundary"]),
            source_kind=d["source_kind"],
            conductivity=ConductivityModel.from_dict(d["conductivity"]),
            sensor_count=int(d["sensor_count"]),
            resolution=int(d["resolution"]),
            lx=float(d["lx"]),
            ly=float(d["ly"]),
            ranges=SourceRanges.from_dict(d["ranges"]),
        )


def scenario_template(name: str, resolution: int = 64, sensor_count: int = 25) -> ScenarioSpec:
    """Catalog of the four simulated conditions.

    HSink: one 298 K sink side, three adiabatic sides, uniform sources.
    ADlet: all-dirichlet box, one sine side, gaussian sources.
    DSine: one sine dirichlet side, three adiabatic sides, gaussian sources.
    NewScenario: sink side plus temperature-dependent conductivity
    lambda(T) = 1 + 0.05 (T - 298), gaussian sources.
    """
    sink = SideSpec("dirichlet", t0=298.0)
    adia = SideSpec("neumann")
    sine = SideSpec("dirichlet", profile="sine", t0=298.0, amplitude=25.0)
    const_lam = ConductivityModel("constant", 1.0)
    if name == "HSink":
        bc = BoundarySpec(left=sink, right=adia, bottom=adia, top=adia)
        return ScenarioSpec(name, bc, "uniform", const_lam, sensor_count, resolution)
    if name == "ADlet":
        bc = BoundarySpec(left=sink, right=sink, bottom=sink, top=sine)
        return ScenarioSpec(name, bc, "gaussian", const_lam, sensor_count, resolution)
    if name == "DSine":
        bc = BoundarySpec(left=adia, right=adia, bottom=adia, top=sine)
        return ScenarioSpec(name, bc, "gaussian", const_lam, sensor_count, resolution)
    if name == "NewScenario":
        bc = BoundarySpec(left=sink, right=adia, bottom=adia, top=adia)
        affine = ConductivityModel("affine", 1.0, 0.05)
        return ScenarioSpec(name, bc, "gaussian", affine, sensor_count, resolution)
    raise ValueError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIO_NAMES)}")


@dataclass(frozen=True)
class PairingStrategy:
    kind: str = "sliding"  # "sliding" | "fixed"
    fixed_reference_index: int = 0

    def __post_init__(self):
        if self.kind not in ("sliding", "fixed"):
            raise ValueError(f"unknown pairing strategy {self.kind!r}")


@dataclass(frozen=True)
class Dataset:
    scenario: ScenarioSpec
    samples: tuple[Sample, ...]
    splits: dict[str, tuple[int, ...]]  # split name -> indices into samples
    stats: NormStats
    master_seed: int

    def split(self, name: str) -> list[Sample]:
        return [self.samples[i] for i in self.splits.get(name, ())]

    @property
    def grid(self) -> Grid:
        return self.scenario.grid()


def _draw_sources(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[HeatSource, ...]:
    r = spec.ranges
    count = int(rng.integers(r.count_min, r.count_max + 1))
    sources = []
    for _ in range(count):
        w = float(rng.uniform(r.side_min, r.side_max))
        h = float(rng.uniform(r.side_min, r.side_max))
        x_lo = float(rng.uniform(0.0, spec.lx - w))
        y_lo = float(rng.uniform(0.0, spec.ly - h))
        q = float(rng.uniform(r.q_min, r.q_max))
        center = (x_lo + w / 2.0, y_lo + h / 2.0)
        sources.append(
            HeatSource(
                kind=spec.source_kind,
                region=(x_lo, y_lo, x_lo + w, y_lo + h),
                q=q,
                center=center,
                radius=min(w, h) / 2.0,
                sigma_g=r.sigma_g,
            )
        )
    return tuple(sources)


def _synthesize_sample(spec: ScenarioSpec, seed_key: tuple[int, ...], opts: SolveOptions) -> Sample:
    grid = spec.grid()
    layout = spec.layout()
    for retry in range(5):
        rng = np.random.default_rng(list(seed_key) + [retry])
        sources = _draw_sources(spec, rng)
        try:
            fld, report = solve_steady(grid, sources, spec.boundary, spec.conductivity, opts)
        except SolverError:
            report = None
        if report is not None and report.converged:
            field32 = ScalarField(grid, fld.values.astype(np.float32))
            readings = sample_at_sensors(field32, layout)
            return Sample(
                condition_id=spec.name,
                sources=sources,
                boundary=spec.boundary,
                field=field32,
                readings=readings,
                seed=seed_key[1],
            )
        log.warning("sample seed=%s retry=%d did not converge; redrawing", seed_key, retry)
    raise SolverError(f"sample {seed_key} failed to converge after 5 retries")


def generate(
    spec: ScenarioSpec,
    n: int,
    master_seed: int,
    splits: dict[str, int] | None = None,
    opts: SolveOptions = SolveOptions(nonlinear_tol=1e-10),
) -> Dataset:
    """Synthesize n samples; `splits` maps split names to sizes summing to n.

    Defaults to everything in the training split. Normalization stats come
    from the training split only.
    """
    if n < 2:
        raise ValueError("need at least 2 samples (pairing requires a reference)")
    if splits is None:
        splits = {"train": n}
    if sum(splits.values()) != n:
        raise ValueError(f"split sizes {splits} do not sum to n={n}")
    if splits.get("train", 0) < 1:
        raise ValueError("training split must be nonempty")

    samples = tuple(
        _synthesize_sample(spec, (master_seed, index), opts) for index in range(n)
    )
    split_idx: dict[str, tuple[int, ...]] = {}
    cursor = 0
    for name, count in splits.items():
        split_idx[name] = tuple(range(cursor, cursor + count))
        cursor += count

    train_vals = np.stack([samples[i].field.values for i in split_idx["train"]])
    stats = NormStats(float(train_vals.min()), float(train_vals.max()))
    return Dataset(spec, samples, split_idx, stats, master_seed)


def make_pairs(ds: Dataset, strategy: PairingStrategy) -> list[ReferencePair]:
    """Training reference pairs: sliding wraps modulo N, fixed shares one reference."""
    train = ds.split("train")
    n = len(train)
    if n < 2:
        raise ValueError("pairing needs a training split with at least 2 samples")
    if strategy.kind == "sliding":
        return [ReferencePair(train[i], train[(i + 1) % n]) for i in range(n)]
    ref_idx = strategy.fixed_reference_index
    if not (0 <= ref_idx < n):
        raise ValueError(f"fixed reference index {ref_idx} outside training split of size {n}")
    ref = train[ref_idx]
    return [ReferencePair(t, ref) for i, t in enumerate(train) if i != ref_idx]


def select_test_reference(ds: Dataset, condition_id: str, rng_seed: int) -> Sample:
    """Seeded uniform draw of a training sample with the requested condition."""
    train = ds.split("train")
    matching = [s for s in train if s.condition_id == condition_id]
    if not matching:
        raise ValueError(f"no training sample with condition {condition_id!r}")
    rng = np.random.default_rng(rng_seed)
    return matching[int(rng.integers(len(matching)))]


# ---------------------------------------------------------------------------
# Persistence
#
# Directory layout: manifest.json plus one binary file per split. Each binary
# file starts with a 16-byte header (magic "TFRD", version u32, count u32,
# reserved u32, little-endian) followed per sample by the field values
# (ny * nx float32, row-major), the sensor coordinates (m pairs float32) and
# the readings (m float32).
# ---------------------------------------------------------------------------


def _pack_split(ds: Dataset, indices) -> bytes:
    spec = ds.scenario
    out = [struct.pack("<4sIII", MAGIC, FORMAT_VERSION, len(indices), 0)]
    for i in indices:
        s = ds.samples[i]
        out.append(np.ascontiguousarray(s.field.values, dtype="<f4").tobytes())
        coords = np.asarray(s.readings.layout.positions, dtype="<f4")
        out.append(coords.tobytes())
        out.append(np.asarray(s.readings.values, dtype="<f4").tobytes())
    return b"".join(out)


def save_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layouts = {s.readings.layout for s in ds.samples}
    if len(layouts) != 1:
        raise DataFormatError("dataset format supports a single shared sensor layout")
    (layout,) = layouts
    manifest: dict = {
        "format_version": FORMAT_VERSION,
        "scenario": ds.scenario.to_dict(),
        "master_seed": ds.master_seed,
        "normalization": ds.stats.to_dict(),
        "counts": {name: len(idx) for name, idx in ds.splits.items()},
        # exact float64 coordinates; the split binaries carry the f32 copies
        "layout": [[x, y] for x, y in layout.positions],
        "splits": {},
    }
    for name, idx in ds.splits.items():
        blob = _pack_split(ds, idx)
        fname = f"{name}.bin"
        (directory / fname).write_bytes(blob)
        manifest["splits"][name] = {
            "file": fname,
            "count": len(idx),
            "sha256": hashlib.sha256(blob).hexdigest(),
            "samples": [
                {
                    "condition_id": ds.samples[i].condition_id,
                    "seed": ds.samples[i].seed,
                    "sources": [src.to_dict() for src in ds.samples[i].sources],
                }
                for i in idx
            ],
        }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return directory


def _unpack_split(spec: ScenarioSpec, blob: bytes, entry: dict, layout: SensorLayout):
    if len(blob) < 16:
        raise DataFormatError(f"{entry['file']}: truncated header")
    magic, version, count, _ = struct.unpack("<4sIII", blob[:16])
    if magic != MAGIC:
        raise DataFormatError(f"{entry['file']}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{entry['file']}: unsupported version {version}")
    if count != entry["count"]:
        raise DataFormatError(f"{entry['file']}: header count {count} != manifest {entry['count']}")
    grid = spec.grid()
    m = layout.m
    per_sample = (grid.ny * grid.nx + 3 * m) * 4
    if len(blob) != 16 + count * per_sample:
        raise DataFormatError(f"{entry['file']}: size {len(blob)} does not match {count} samples")
    expected_coords = np.asarray(layout.positions, dtype="<f4")
    samples = []
    off = 16
    for meta in entry["samples"]:
        nfield = grid.ny * grid.nx
        field = np.frombuffer(blob, dtype="<f4", count=nfield, offset=off).reshape(grid.ny, grid.nx)
        off += nfield * 4
        coords = np.frombuffer(blob, dtype="<f4", count=2 * m, offset=off).reshape(m, 2)
        off += 2 * m * 4
        readings = np.frombuffer(blob, dtype="<f4", count=m, offset=off)
        off += m * 4
        if not np.array_equal(coords, expected_coords):
            raise DataFormatError(f"{entry['file']}: stored coordinates disagree with manifest layout")
        samples.append(
            Sample(
                condition_id=meta["condition_id"],
                sources=tuple(HeatSource.from_dict(d) for d in meta["sources"]),
                boundary=spec.boundary,
                field=ScalarField(grid, field.copy()),
                readings=Readings(layout, tuple(float(v) for v in readings)),
                seed=meta["seed"],
            )
        )
    return samples


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataFormatError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"unsupported manifest version {manifest.get('format_version')}")
    spec = ScenarioSpec.from_dict(manifest["scenario"])
    layout = SensorLayout(tuple((float(x), float(y)) for x, y in manifest["layout"]))

    samples: list[Sample] = []
    splits: dict[str, tuple[int, ...]] = {}
    for name, entry in manifest["splits"].items():
        path = directory / entry["file"]
        if not path.exists():
            raise DataFormatError(f"missing split file: {path}")
        blob = path.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise DataFormatError(f"{entry['file']}: checksum mismatch")
        start = len(samples)
        samples.extend(_unpack_split(spec, blob, entry, layout))
        splits[name] = tuple(range(start, len(samples)))

    return Dataset(
        scenario=spec,
        samples=tuple(samples),
        splits=splits,
        stats=NormStats.from_dict(manifest["normalization"]),
        master_seed=int(manifest["master_seed"]),
    )
