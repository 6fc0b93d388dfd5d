# cli.py

"""
Command-line interface: train, edit, evaluate and analyse latent editors.

    python main.py train --config configs/desk.conf --out desk.ckpt
    python main.py eval --ckpt desk.ckpt --n 1000 --csv eval.csv
    python main.py analyze-topk --ckpt desk.ckpt --k-list 2,13,32 --intensities 1,5,20 --csv topk.csv --svg topk.svg

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import functools
import logging
import math
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from checkpoint_store import load_checkpoint, read_latent, save_checkpoint, save_world, write_latent
from config import DEFAULT_SEED, TrainConfig, full_size_config, load_config
from editor_model import absmax_merge, edit_increments, edit_single
from errors import ConfigError, LabError, TrainingDivergedError, describe_error
from evaluation import (ablation_study, angle_frame, direction_recovery, evaluate, sparsity_ratio, sweep,
                        time_edit, write_csv)
from rng_streams import Purpose, stream
from synthetic_world import build_world, sample_wplus
from trainer import ablation_configs, train, verify_gradients

logger = logging.getLogger(__name__)
console = Console()

PROG_NAME = "idstyle-lab"
LOG_FORMAT = "%(asctime)s [%(name)s] %(message)s"
GRADCHECK_TOLERANCE = 1e-4


# =============================================================================
# Helpers
# =============================================================================

def handle_errors(command):
    """Turn lab failures and missing files into exit-1 click errors"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (LabError, FileNotFoundError) as e:
            logger.debug("command failed", exc_info=True)
            raise click.ClickException(describe_error(e))

    return wrapper


class AttrSpec(click.ParamType):
    """name=+1[,name=-1...]"""
    name = "attr-spec"

    def convert(self, value, param, ctx):
        if isinstance(value, dict):
            return value
        targets: Dict[str, int] = {}
        for part in value.split(","):
            name, sep, raw = part.strip().partition("=")
            if not sep or not name:
                self.fail(f"expected name=+1 or name=-1, got {part!r}", param, ctx)
            try:
                target = int(raw.strip())
            except ValueError:
                self.fail(f"target for {name!r} must be +1 or -1, got {raw!r}", param, ctx)
            if target not in (-1, 1):
                self.fail(f"target for {name!r} must be +1 or -1, got {target}", param, ctx)
            if name in targets:
                self.fail(f"attribute {name!r} given twice", param, ctx)
            targets[name] = target
        return targets


class NumberList(click.ParamType):
    """Comma-separated numbers"""
    name = "list"

    def __init__(self, cast):
        self.cast = cast

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return list(value)
        try:
            items = [self.cast(item.strip()) for item in value.split(",") if item.strip()]
        except ValueError:
            self.fail(f"expected a comma-separated list of numbers, got {value!r}", param, ctx)
        if not items:
            self.fail("list is empty", param, ctx)
        return items


def _frame_table(frame: pd.DataFrame, title: str) -> Table:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), justify="left" if frame[column].dtype == object else "right")
    for _, row in frame.iterrows():
        table.add_row(*[f"{value:.4f}" if isinstance(value, float) else str(value) for value in row])
    return table


def _load_config_or_default(path: Optional[str]) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


# =============================================================================
# Commands
# =============================================================================

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings and errors only")
def cli(verbose, quiet):
    """Latent-direction editing lab on a synthetic linear world."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="key=value run config")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint to write")
@click.option("--history", type=click.Path(dir_okay=False), default=None, help="Write the loss trajectory as CSV")
@handle_errors
def train_command(config_path, out, history):
    """Train an editor and save the checkpoint."""
    config = load_config(config_path)
    try:
        ckpt = train(config)
    except TrainingDivergedError as e:
        if e.last_good is not None:
            rescue = save_checkpoint(f"{out}.last_good", e.last_good)
            console.print(f"[yellow]Saved last good checkpoint to {rescue}[/yellow]")
        raise
    save_checkpoint(out, ckpt)
    if history:
        write_csv(pd.DataFrame([report.to_row() for report in ckpt.history]), history)
    console.print(f"✅ Trained {config.iterations} iterations: total loss "
                  f"{ckpt.metrics['initial_total']:.4f} -> {ckpt.metrics['final_total']:.4f}; saved {out}")


@cli.command("edit")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--latent", required=True, type=click.Path(dir_okay=False), help="Latent record file (L x d)")
@click.option("--attr", "attr_spec", required=True, type=AttrSpec(), help="name=+1[,name=-1...]")
@click.option("--multi", is_flag=True, help="Merge all requested edits by largest magnitude")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def edit_command(ckpt, latent, attr_spec, multi, out):
    """Edit one latent code toward the requested attribute targets."""
    checkpoint = load_checkpoint(ckpt)
    config = checkpoint.config
    unknown = [name for name in attr_spec if name not in config.attributes]
    if unknown:
        raise click.BadParameter(f"unknown attribute(s) {', '.join(unknown)}; "
                                 f"known: {', '.join(config.attributes)}", param_hint="--attr")
    w = read_latent(latent, (config.num_layers, config.latent_dim))
    arch = config.architecture()

    if multi:
        attrs = [float(attr_spec.get(name, 0)) for name in config.attributes]
        edited = w + absmax_merge(edit_increments(w, attrs, checkpoint.params, arch))
    else:
        if len(attr_spec) != 1:
            raise click.BadParameter("several attributes need --multi", param_hint="--attr")
        (name, target), = attr_spec.items()
        edited = edit_single(w, config.attribute_index(name), float(target), checkpoint.params, arch).edited

    write_latent(out, edited)
    labels = np.where(checkpoint.world.classify(checkpoint.world.generate(edited)) >= 0, "+1", "-1")
    console.print(f"✅ Edited latent saved to {out}; labels: "
                  + ", ".join(f"{n}={l}" for n, l in zip(config.attributes, labels)))


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n_samples", default=1000, show_default=True, type=int)
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--space", default="wplus", show_default=True, type=click.Choice(["wplus", "w"]))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@handle_errors
def eval_command(ckpt, n_samples, seed, space, csv_path):
    """Manipulation accuracy and identity similarity on held-out samples."""
    if n_samples <= 0:
        raise click.BadParameter("must be positive", param_hint="--n")
    checkpoint = load_checkpoint(ckpt)
    report = evaluate(checkpoint, n_samples, seed, space)
    frame = report.to_frame()
    recovery = direction_recovery(checkpoint)
    frame["direction_recovery"] = list(recovery) + [float(recovery.mean())]
    if csv_path:
        write_csv(frame, csv_path)
    console.print(_frame_table(frame, f"Evaluation ({space}, n={n_samples}, seed={seed})"))
    console.print(f"sparsity ratio (L1/L2): {sparsity_ratio(checkpoint.params):.4f}")


@cli.command("analyze-angles")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@handle_errors
def analyze_angles_command(ckpt, csv_path):
    """Pairwise angles (degrees) between the learned directions."""
    frame = angle_frame(load_checkpoint(ckpt))
    if csv_path:
        write_csv(frame, csv_path)
    console.print(_frame_table(frame, "Direction angles (degrees)"))


@cli.command("analyze-topk")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--k-list", "k_list", required=True, type=NumberList(int))
@click.option("--intensities", required=True, type=NumberList(float))
@click.option("--n", "n_samples", default=1000, show_default=True, type=int)
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), default=None)
@handle_errors
def analyze_topk_command(ckpt, k_list, intensities, n_samples, seed, csv_path, svg_path):
    """Accuracy / identity similarity over top-k filtering and edit intensity."""
    if n_samples <= 0:
        raise click.BadParameter("must be positive", param_hint="--n")
    checkpoint = load_checkpoint(ckpt)
    d = checkpoint.config.latent_dim
    bad_k = [k for k in k_list if not 0 <= k <= d]
    if bad_k:
        raise click.BadParameter(f"k must lie in [0, {d}], got {bad_k}", param_hint="--k-list")
    bad_intensity = [x for x in intensities if not (x > 0 and math.isfinite(x))]
    if bad_intensity:
        raise click.BadParameter(f"intensities must be positive, got {bad_intensity}", param_hint="--intensities")

    result = sweep(checkpoint, k_list, intensities, n_samples, seed)
    frame = result.to_frame()
    write_csv(frame, csv_path)
    if svg_path:
        from sweep_plots import plot_sweep

        plot_sweep(result, svg_path)
    console.print(_frame_table(frame, f"Top-k / intensity sweep (n={n_samples}, seed={seed})"))


@cli.command("world-build")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def world_build_command(config_path, out):
    """Build the synthetic world for a config and save it."""
    world = build_world(load_config(config_path).world_config())
    save_world(out, world)
    table = Table(title="World invariants")
    table.add_column("check")
    table.add_column("value", justify="right")
    for name, value in world.diagnostics.items():
        table.add_row(name, f"{value:.3e}")
    console.print(table)
    console.print(f"✅ World saved to {out}")


@cli.command("gradcheck")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--points", default=20, show_default=True, type=click.IntRange(min=1))
@handle_errors
def gradcheck_command(config_path, points):
    """Finite-difference check of the full objective's gradients."""
    config = load_config(config_path)
    errors = verify_gradients(config, points=points)
    worst = max(errors)
    console.print(f"max relative error over {points} points: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    if not worst < GRADCHECK_TOLERANCE:
        raise click.ClickException(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:.0e}")
    console.print("✅ Gradients match finite differences")


@cli.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n_samples", default=1000, show_default=True, type=int)
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--variants", default="A,B,C,D,E,F", show_default=True, help="Comma-separated ablation rows")
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def ablate_command(config_path, n_samples, seed, variants, csv_path):
    """Train and evaluate every ablation variant with the same seed."""
    chosen = [v.strip().upper() for v in variants.split(",") if v.strip()]
    config = load_config(config_path)
    try:
        ablation_configs(config, chosen)
    except ConfigError as e:
        raise click.BadParameter(e.message, param_hint="--variants")
    frame = ablation_study(config, n_samples, seed, chosen)
    write_csv(frame, csv_path)
    console.print(_frame_table(frame, "Ablation study"))


@cli.command("profile")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--repeats", default=5, show_default=True, type=click.IntRange(min=1))
@handle_errors
def profile_command(config_path, repeats):
    """Parameter counts and single-edit latency at config and full-size dims."""
    config = _load_config_or_default(config_path)
    rows = [dict(setting="config", **time_edit(config, repeats)),
            dict(setting="full size", **time_edit(full_size_config(config), repeats))]
    console.print(_frame_table(pd.DataFrame(rows), "Editor profile"))


@cli.command("sample-latent")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--index", default=0, show_default=True, type=click.IntRange(min=0), help="Held-out sample index")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def sample_latent_command(ckpt, seed, index, out):
    """Write one held-out W+ code (the same one eval uses at this seed and index)."""
    checkpoint = load_checkpoint(ckpt)
    latent = sample_wplus(checkpoint.world, stream(seed, Purpose.EVAL, index))
    write_latent(out, latent)
    console.print(f"✅ Latent {index} (seed {seed}) saved to {out}")


# =============================================================================
# Entry point
# =============================================================================

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Invoke the CLI and return its exit code instead of exiting."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name=PROG_NAME,
                          standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        console.print("Aborted.")
        return 1
    return result if isinstance(result, int) else 0
