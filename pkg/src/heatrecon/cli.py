"""Command-line experiment drivers.

Every command resolves its configuration from defaults, an optional JSON
config file, explicit flags, and repeated dotted --set overrides (in that
order), then snapshots the result plus input content hashes into the output
directory so runs are reproducible byte for byte. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric failure.

The HEATRECON_DETERMINISTIC environment variable (default on) pins torch to
a single thread with deterministic kernels; set it to 0 to trade exact
repeatability for speed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import click
import numpy as np
import torch

from .datagen import (
    DataFormatError,
    PairingStrategy,
    SCENARIO_NAMES,
    generate,
    load_dataset,
    make_pairs,
    save_dataset,
    scenario_template,
    select_test_reference,
)
from .domain import ReferencePair
from .estimators import FieldReconstructor
from .models import IPTR_VARIANTS, build_model, load_state, save_state
from .nn import CheckpointError
from .solver import SolverError
from .training import (
    TrainConfig,
    TrainingError,
    evaluate,
    finetune_defaults,
    predict_fields,
    sensor_sweep,
    train,
    write_history,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CSV_HEADER = ["method", "scenario", "n_train", "mae_K", "maxae_K", "seed"]

DESK = {"res": 64, "n": 200, "epochs": 30, "batch": 8, "lr": 1e-3, "milestones": "24"}
FULL_SCALE = {"res": 200, "n": 1000, "epochs": 150, "batch": 16, "lr": 1.5e-4, "milestones": "100"}


def _setup_determinism():
    if os.environ.get("HEATRECON_DETERMINISTIC", "1") != "0":
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _resolve_config(ctx: click.Context, config_path, sets) -> dict:
    """defaults < config file < explicit CLI flags < --set overrides."""
    cfg = {
        name: value
        for name, value in ctx.params.items()
        if name not in ("config", "set_", "out")
    }
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config {config_path}: {exc}")
        for key, value in file_cfg.items():
            if key not in cfg:
                raise click.UsageError(f"config key {key!r} is not a parameter of this command")
            if ctx.get_parameter_source(key) != click.core.ParameterSource.COMMANDLINE:
                cfg[key] = value
    for item in sets:
        if "=" not in item:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in cfg:
            raise click.UsageError(f"--set key {key!r} is not a parameter of this command")
        cfg[key] = _parse_value(raw)
    return cfg


def _hash_inputs(paths) -> dict:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "manifest.json" if (p / "manifest.json").exists() else p / "params.json"
        if p.exists():
            hashes[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
    return hashes


def _snapshot(out_dir: Path, cfg: dict, inputs=()) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = dict(cfg)
    snap["input_hashes"] = _hash_inputs(inputs)
    (out_dir / "config.json").write_text(json.dumps(snap, indent=1, default=str))
    return out_dir


def _write_csv(rows: list[dict], path: Path):
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_HEADER})


def _guarded(out_dir: Path | None):
    """Context manager mapping failures to exit codes and a FAILED marker."""

    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None:
                return False
            if isinstance(exc, click.ClickException):
                return False
            if out_dir is not None and out_dir.exists():
                (out_dir / "FAILED").write_text(
                    "".join(traceback.format_exception(exc_type, exc, tb))
                )
            if isinstance(exc, (DataFormatError, CheckpointError, FileNotFoundError)):
                click.echo(f"data error: {exc}", err=True)
                sys.exit(EXIT_DATA)
            if isinstance(exc, (TrainingError, SolverError, FloatingPointError)):
                click.echo(f"numeric failure: {exc}", err=True)
                sys.exit(EXIT_NUMERIC)
            if isinstance(exc, (ValueError, TypeError, KeyError)):
                click.echo(f"config error: {exc}", err=True)
                sys.exit(EXIT_CONFIG)
            return False

    return _Guard()


def _parse_milestones(raw: str, epochs: int) -> tuple[int, ...]:
    if not str(raw).strip():
        return ()
    ms = tuple(int(x) for x in str(raw).split(",") if x.strip())
    return tuple(m for m in ms if m < epochs)


@click.group()
def main():
    """Sparse-sensor temperature field reconstruction toolkit."""
    _setup_determinism()


def _common_train_options(fn):
    for opt in reversed(
        [
            click.option("--epochs", type=int, default=DESK["epochs"], show_default=True),
            click.option("--batch", type=int, default=DESK["batch"], show_default=True),
            click.option("--lr", type=float, default=DESK["lr"], show_default=True),
            click.option("--milestones", default=DESK["milestones"], show_default=True,
                         help="comma-separated decay epochs"),
            click.option("--seed", type=int, default=0, show_default=True),
            click.option("--paper-scale", is_flag=True, help="use full-scale training settings"),
            click.option("--config", type=click.Path(), default=None, help="JSON config file"),
            click.option("--set", "set_", multiple=True, help="override: key=value"),
        ]
    ):
        fn = opt(fn)
    return fn


def _apply_full_scale(cfg: dict):
    if cfg.get("paper_scale"):
        cfg["epochs"] = FULL_SCALE["epochs"]
        cfg["batch"] = FULL_SCALE["batch"]
        cfg["lr"] = FULL_SCALE["lr"]
        cfg["milestones"] = FULL_SCALE["milestones"]


@main.command("gen-data")
@click.option("--scenario", required=True, help=f"one of {', '.join(SCENARIO_NAMES)} (case-insensitive)")
@click.option("--n", type=int, default=DESK["n"], show_default=True, help="training samples")
@click.option("--val", type=int, default=0, show_default=True)
@click.option("--test", type=int, default=0, show_default=True)
@click.option("--res", type=int, default=DESK["res"], show_default=True)
@click.option("--sensors", type=int, default=25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--paper-scale", is_flag=True)
@click.option("--config", type=click.Path(), default=None)
@click.option("--set", "set_", multiple=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_gen_data(ctx, scenario, n, val, test, res, sensors, seed, paper_scale, config, set_, out):
    """Synthesize and persist a dataset directory."""
    cfg = _resolve_config(ctx, config, set_)
    if cfg.get("paper_scale"):
        cfg["res"] = FULL_SCALE["res"]
        cfg["n"] = FULL_SCALE["n"]
    out_dir = Path(out)
    with _guarded(out_dir):
        name = _canonical_scenario(cfg["scenario"])
        spec = scenario_template(name, resolution=cfg["res"], sensor_count=cfg["sensors"])
        total = cfg["n"] + cfg["val"] + cfg["test"]
        splits = {"train": cfg["n"]}
        if cfg["val"]:
            splits["val"] = cfg["val"]
        if cfg["test"]:
            splits["test"] = cfg["test"]
        ds = generate(spec, total, cfg["seed"], splits)
        _snapshot(out_dir, {"command": "gen-data", **cfg})
        save_dataset(ds, out_dir)
        click.echo(f"wrote {total} samples ({splits}) to {out_dir}")


def _canonical_scenario(name: str) -> str:
    for candidate in SCENARIO_NAMES:
        if candidate.lower() == str(name).lower():
            return candidate
    raise ValueError(f"unknown scenario {name!r}; valid scenarios: {', '.join(SCENARIO_NAMES)}")


@main.command("train")
@click.option("--model", "arch", default="iptr", show_default=True)
@click.option("--variant", default="full", show_default=True,
              help=f"dual-branch variant, one of {', '.join(IPTR_VARIANTS)}")
@click.option("--data", required=True, type=click.Path(exists=False))
@click.option("--pairs", "pairing", default="sliding", show_default=True,
              type=click.Choice(["sliding", "fixed"]))
@_common_train_options
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_train(ctx, arch, variant, data, pairing, epochs, batch, lr, milestones, seed,
              paper_scale, config, set_, out):
    """Train a model from scratch on a dataset directory."""
    cfg = _resolve_config(ctx, config, set_)
    _apply_full_scale(cfg)
    out_dir = Path(out)
    with _guarded(out_dir):
        ds = load_dataset(cfg["data"])
        est = FieldReconstructor(
            arch=cfg["arch"],
            variant=cfg["variant"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch"],
            lr=cfg["lr"],
            milestones=_parse_milestones(cfg["milestones"], cfg["epochs"]),
            pairing=cfg["pairing"],
            seed=cfg["seed"],
            reference_seed=cfg["seed"],
        )
        _snapshot(out_dir, {"command": "train", **cfg}, [cfg["data"]])
        est.fit(ds)
        write_history(est.history_, out_dir / "history.jsonl")
        if est.model_.module is not None:
            est.save(out_dir / "checkpoint")
        click.echo(f"trained {cfg['arch']} on {len(ds.split('train'))} samples -> {out_dir}")


@main.command("finetune")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--shots", type=int, default=10, show_default=True)
@click.option("--val-shots", type=int, default=4, show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", type=click.Path(), default=None)
@click.option("--set", "set_", multiple=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_finetune(ctx, checkpoint, data, shots, val_shots, epochs, seed, config, set_, out):
    """Few-shot adaptation of a pretrained checkpoint to a new dataset."""
    cfg = _resolve_config(ctx, config, set_)
    out_dir = Path(out)
    with _guarded(out_dir):
        ds = load_dataset(cfg["data"])
        state = load_state(cfg["checkpoint"])
        _snapshot(out_dir, {"command": "finetune", **cfg}, [cfg["data"], cfg["checkpoint"]])
        train_split = ds.split("train")
        if cfg["shots"] > len(train_split):
            raise ValueError(f"--shots {cfg['shots']} exceeds the {len(train_split)} training samples")
        rng = np.random.default_rng(cfg["seed"])
        order = rng.permutation(len(train_split))
        subset = [train_split[i] for i in order[: cfg["shots"]]]
        val_pool = ds.split("val") or [train_split[i] for i in order[cfg["shots"]:]]
        val = val_pool[: cfg["val_shots"]]
        state.stats = ds.stats
        pairs = [
            ReferencePair(subset[i], subset[(i + 1) % len(subset)])
            for i in range(len(subset))
        ]
        ref = select_test_reference(ds, ds.scenario.name, cfg["seed"])
        ft_cfg = finetune_defaults(seed=cfg["seed"], epochs=cfg["epochs"])
        state, history = train(state, pairs, val, ft_cfg, ref)
        write_history(history, out_dir / "history.jsonl")
        save_state(state, out_dir / "checkpoint")
        click.echo(f"fine-tuned on {cfg['shots']} shots -> {out_dir}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(), default=None,
              help="omit with --model vor_identity")
@click.option("--model", "arch", default=None, help="identity baseline or sanity overrides")
@click.option("--data", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="reference selection seed")
@click.option("--config", type=click.Path(), default=None)
@click.option("--set", "set_", multiple=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_eval(ctx, checkpoint, arch, data, split, seed, config, set_, out):
    """Evaluate a checkpoint (or the identity baseline) on a dataset split."""
    cfg = _resolve_config(ctx, config, set_)
    out_dir = Path(out)
    with _guarded(out_dir):
        ds = load_dataset(cfg["data"])
        samples = ds.split(cfg["split"])
        if not samples:
            raise DataFormatError(f"dataset has no {cfg['split']!r} split")
        if cfg["arch"] == "vor_identity":
            state = build_model("vor_identity", stats=ds.stats)
            method = "vor_identity"
        else:
            if not cfg["checkpoint"]:
                raise ValueError("--checkpoint is required unless --model vor_identity")
            state = load_state(cfg["checkpoint"])
            method = state.arch if state.variant == "full" else f"{state.arch}:{state.variant}"
        inputs = [p for p in (cfg["data"], cfg["checkpoint"]) if p]
        _snapshot(out_dir, {"command": "eval", **cfg}, inputs)
        ref = select_test_reference(ds, ds.scenario.name, cfg["seed"])
        result = evaluate(state, samples, ref)
        row = {
            "method": method,
            "scenario": ds.scenario.name,
            "n_train": len(ds.split("train")),
            "mae_K": result.mae,
            "maxae_K": result.maxae,
            "seed": cfg["seed"],
        }
        _write_csv([row], out_dir / "results.csv")
        click.echo(f"MAE={result.mae} MaxAE={result.maxae}")


@main.command("ablate")
@click.option("--data", required=True, type=click.Path())
@click.option("--what", default="all", show_default=True,
              type=click.Choice(["variants", "pairing", "all"]))
@click.option("--variant", "only_variant", default=None,
              help="restrict the variants study to a single variant")
@_common_train_options
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_ablate(ctx, data, what, only_variant, epochs, batch, lr, milestones, seed,
               paper_scale, config, set_, out):
    """Dual-branch variant study and pairing-strategy comparison."""
    cfg = _resolve_config(ctx, config, set_)
    _apply_full_scale(cfg)
    out_dir = Path(out)
    with _guarded(out_dir):
        ds = load_dataset(cfg["data"])
        _snapshot(out_dir, {"command": "ablate", **cfg}, [cfg["data"]])
        ms = _parse_milestones(cfg["milestones"], cfg["epochs"])
        rows = []

        def _fit_eval(variant: str, pairing: str, method: str):
            est = FieldReconstructor(
                arch="iptr",
                variant=variant,
                epochs=cfg["epochs"],
                batch_size=cfg["batch"],
                lr=cfg["lr"],
                milestones=ms,
                pairing=pairing,
                seed=cfg["seed"],
                reference_seed=cfg["seed"],
            )
            est.fit(ds)
            est.save(out_dir / method / "checkpoint")
            write_history(est.history_, out_dir / method / "history.jsonl")
            res = est.evaluate(ds.split("test") or ds.split("val") or ds.split("train"))
            rows.append(
                {
                    "method": method,
                    "scenario": ds.scenario.name,
                    "n_train": len(ds.split("train")),
                    "mae_K": res.mae,
                    "maxae_K": res.maxae,
                    "seed": cfg["seed"],
                }
            )

        if cfg["what"] in ("variants", "all"):
            variants = [cfg["only_variant"]] if cfg.get("only_variant") else list(IPTR_VARIANTS)
            for variant in variants:
                _fit_eval(variant, "sliding", f"iptr:{variant}")
        if cfg["what"] in ("pairing", "all"):
            _fit_eval("full", "sliding", "pairing:sliding")
            _fit_eval("full", "fixed", "pairing:fixed")
        _write_csv(rows, out_dir / "ablation.csv")
        for row in rows:
            click.echo(f"{row['method']}: MAE={row['mae_K']} MaxAE={row['maxae_K']}")


@main.command("sweep")
@click.option("--scenario", default="NewScenario", show_default=True)
@click.option("--counts", default="9,16,25", show_default=True)
@click.option("--n-train", type=int, default=64, show_default=True)
@click.option("--n-val", type=int, default=8, show_default=True)
@click.option("--n-test", type=int, default=16, show_default=True)
@click.option("--res", type=int, default=DESK["res"], show_default=True)
@_common_train_options
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_sweep(ctx, scenario, counts, n_train, n_val, n_test, res, epochs, batch, lr,
              milestones, seed, paper_scale, config, set_, out):
    """Sensor-count sweep: one model per count, identical seeds otherwise."""
    cfg = _resolve_config(ctx, config, set_)
    _apply_full_scale(cfg)
    out_dir = Path(out)
    with _guarded(out_dir):
        name = _canonical_scenario(cfg["scenario"])
        count_list = tuple(int(c) for c in str(cfg["counts"]).split(","))
        _snapshot(out_dir, {"command": "sweep", **cfg})
        tc = TrainConfig(
            epochs=cfg["epochs"],
            batch_size=cfg["batch"],
            lr=cfg["lr"],
            milestones=_parse_milestones(cfg["milestones"], cfg["epochs"]),
            seed=cfg["seed"],
        )
        rows = sensor_sweep(
            name,
            count_list,
            tc,
            n_train=cfg["n_train"],
            n_val=cfg["n_val"],
            n_test=cfg["n_test"],
            resolution=cfg["res"],
            master_seed=cfg["seed"],
        )
        with (out_dir / "sweep.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        for row in rows:
            click.echo(f"sensors={row['sensor_count']}: MAE={row['mae_K']} MaxAE={row['maxae_K']}")


@main.command("plot")
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--model", "arch", default=None)
@click.option("--data", type=click.Path(), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--n-panels", type=int, default=4, show_default=True)
@click.option("--curves", type=click.Path(), default=None,
              help="CSV of method,scenario,n_train,mae_K,maxae_K,seed rows")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_plot(checkpoint, arch, data, split, n_panels, curves, seed, out):
    """Render reconstruction panels and/or metric-vs-samples curves."""
    from .plotting import save_field_panel, save_metric_curves

    out_dir = Path(out)
    with _guarded(out_dir):
        wrote = []
        out_dir.mkdir(parents=True, exist_ok=True)
        if data:
            ds = load_dataset(data)
            samples = ds.split(split)
            if not samples:
                raise DataFormatError(f"dataset has no {split!r} split")
            if arch == "vor_identity" or (arch and not checkpoint):
                state = build_model("vor_identity", stats=ds.stats)
            elif checkpoint:
                state = load_state(checkpoint)
            else:
                raise ValueError("provide --checkpoint or --model vor_identity with --data")
            ref = select_test_reference(ds, ds.scenario.name, seed)
            chosen = samples[: n_panels]
            preds = predict_fields(state, chosen, ref)
            for i, (s, p) in enumerate(zip(chosen, preds)):
                wrote.append(save_field_panel(s.field, p, out_dir / f"panel_{i:03d}.png"))
        if curves:
            with open(curves, newline="") as fh:
                rows = list(csv.DictReader(fh))
            if not rows:
                raise DataFormatError(f"no rows in {curves}")
            xs = save_metric_curves(rows, out_dir / "curves.png")
            wrote.append(out_dir / "curves.png")
            click.echo(f"curve x values: {xs}")
        if not wrote:
            raise ValueError("nothing to plot: pass --data and/or --curves")
        click.echo(f"wrote {len(wrote)} image(s) to {out_dir}")


if __name__ == "__main__":
    main()
