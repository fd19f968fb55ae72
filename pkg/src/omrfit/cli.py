"""Command line interface.

Every subcommand maps package errors onto stable exit codes so scripts can
branch on failure class: 2 configuration/usage, 3 data/format problems,
4 numerical failures. ``--config FILE`` (JSON) supplies defaults for any
subcommand options, e.g. ``{"fit": {"method": "omr", "lr_q": 0.03}}``.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import default_spec, load_spec, run_compare
from .body_model import load_model, make_toy_model, save_model
from .data_synth import load_annotations, load_dataset, merge_annotations, synth_dataset
from .errors import (
    ConfigError, DataError, FormatError, IoError, NumericsError, OmrfitError, ScheduleError,
)
from .fitting import (
    FitConfig, annotate_dataset, default_pose_prior, load_fits, run_fit, save_fit,
)
from .losses import LossWeights
from .metrics import evaluate_fits, extreme_shape_filter
from .regressor import RegressorArch, load_alpha, pretrain, retrain, save_alpha

_EXIT_CODES = (
    (NumericsError, 4),
    (FormatError, 3),
    (DataError, 3),
    (IoError, 3),
    (ScheduleError, 2),
    (ConfigError, 2),
    (OmrfitError, 2),
)


def _run(fn):
    """Translate package errors to exit codes instead of tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OmrfitError as e:
            for cls, code in _EXIT_CODES:
                if isinstance(e, cls):
                    click.echo(f"error: {e}", err=True)
                    raise SystemExit(code)
            raise

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="omrfit")
@click.option("--config", "config_path", type=click.Path(exists=False), default=None,
              help="JSON file with per-subcommand option defaults.")
@click.pass_context
def main(ctx, config_path):
    """Toy human-mesh fitting: synthesis, training, fitting, evaluation."""
    if config_path is not None:
        try:
            raw = Path(config_path).read_text("ascii")
        except OSError as e:
            click.echo(f"error: cannot read config {config_path}: {e}", err=True)
            raise SystemExit(2)
        try:
            overlay = json.loads(raw)
        except json.JSONDecodeError as e:
            click.echo(f"error: config is not valid JSON: {e.msg}", err=True)
            raise SystemExit(2)
        if not isinstance(overlay, dict):
            click.echo("error: config must be a JSON object of subcommand defaults", err=True)
            raise SystemExit(2)
        ctx.default_map = overlay


@main.command("make-model")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--vertices", default=602, show_default=True)
@click.option("--joints", default=16, show_default=True)
@click.option("--shape-dims", default=10, show_default=True)
@_run
def make_model_cmd(out, seed, vertices, joints, shape_dims):
    """Build the procedural toy body model and write it as JSON."""
    model = make_toy_model(seed=seed, n_vertices=vertices, n_joints=joints, n_shape=shape_dims)
    save_model(model, out)
    click.echo(f"wrote model {model.name!r} ({model.n_vertices} vertices) to {out}")


@main.command("synth")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=100, show_default=True)
@click.option("--distribution", type=click.Choice(["normal", "obese"]), default="normal",
              show_default=True)
@click.option("--noise", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--resolution", default=64, show_default=True)
@click.option("--split", default="train", show_default=True)
@_run
def synth_cmd(model_path, out, n, distribution, noise, seed, resolution, split):
    """Generate a synthetic dataset directory."""
    model = load_model(model_path)
    ds = synth_dataset(model, n, out, distribution=distribution, noise=noise, seed=seed,
                       resolution=resolution, split=split)
    click.echo(f"wrote {len(ds)} samples to {out} (hash {ds.manifest['content_hash'][:12]})")


@main.command("pretrain")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=60, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--hidden", default="64,64", show_default=True,
              help="Comma-separated hidden layer widths.")
@_run
def pretrain_cmd(data_dir, out, epochs, lr, seed, batch_size, hidden):
    """Train the parameter regressor on a dataset's ground truth."""
    ds = load_dataset(data_dir)
    try:
        widths = tuple(int(h) for h in hidden.split(","))
    except ValueError:
        raise ConfigError(f"--hidden must be comma-separated integers, got {hidden!r}")
    arch = RegressorArch.for_model(ds.model, hidden=widths)
    arch, alpha, curve = pretrain(ds.model, ds, arch=arch, epochs=epochs, lr=lr, seed=seed,
                                  batch_size=batch_size)
    save_alpha(out, arch, alpha, seed=seed)
    click.echo(f"pretrained {epochs} epochs: loss {curve[0]:.5f} -> {curve[-1]:.5f}; wrote {out}")


def _fit_config(method, schedule, iters, iters_per_phase, lr_q, lr_p, gamma, sigma,
                lambda_shape, lambda_theta, lambda_beta, lambda_anchor, seed,
                freeze_cam, p_restart):
    weights = LossWeights(
        lambda_shape=lambda_shape, lambda_theta=lambda_theta,
        lambda_beta=lambda_beta, lambda_anchor=lambda_anchor, sigma=sigma,
    )
    return FitConfig(
        method=method, schedule=schedule, iters=iters, iters_per_phase=iters_per_phase,
        lr_q=lr_q, lr_p=lr_p, gamma=gamma, weights=weights, seed=seed,
        freeze_cam=freeze_cam, p_restart=p_restart,
    )


def _fit_options(fn):
    opts = [
        click.option("--method", type=click.Choice(["smplify", "eft", "omr"]), default="omr",
                     show_default=True),
        click.option("--schedule", default="5P4Q", show_default=True),
        click.option("--iters", default=20, show_default=True),
        click.option("--iters-per-phase", default=20, show_default=True),
        click.option("--lr-q", default=0.03, show_default=True),
        click.option("--lr-p", default=3e-3, show_default=True),
        click.option("--gamma", default=400.0, show_default=True),
        click.option("--sigma", default=0.78, show_default=True),
        click.option("--lambda-shape", default=1.0, show_default=True),
        click.option("--lambda-theta", default=1e-2, show_default=True),
        click.option("--lambda-beta", default=1e-3, show_default=True),
        click.option("--lambda-anchor", default=1.0, show_default=True),
        click.option("--seed", default=0, show_default=True),
        click.option("--freeze-cam/--no-freeze-cam", default=False, show_default=True),
        click.option("--p-restart/--no-p-restart", default=False, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@main.command("fit")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--sample", "sample_id", default=None, help="Fit only this sample id.")
@click.option("--regressor", "reg_path", default=None, type=click.Path())
@_fit_options
@_run
def fit_cmd(data_dir, out, sample_id, reg_path, **kw):
    """Fit dataset samples; writes one fit JSON per sample into --out."""
    ds = load_dataset(data_dir)
    config = _fit_config(**kw)
    arch = alpha = None
    if reg_path is not None:
        arch, alpha, _ = load_alpha(reg_path)
    elif config.method != "smplify":
        raise ConfigError(f"method {config.method!r} needs --regressor")
    samples = ds.samples if sample_id is None else [ds.sample(sample_id)]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    prior = default_pose_prior(ds.model, config.seed)
    for obs in samples:
        result = run_fit(ds.model, obs, config, arch=arch, alpha=alpha, prior=prior)
        save_fit(out_dir / f"{obs.sample_id}.json", result)
        click.echo(f"{obs.sample_id}: objective {result.final_losses['objective']:.6f} "
                   f"l2d {result.final_losses['l2d']:.6f}")
    click.echo(f"wrote {len(samples)} fits to {out}")


@main.command("annotate")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--regressor", "reg_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_fit_options
@_run
def annotate_cmd(data_dir, reg_path, out, **kw):
    """Fit every sample and store the results as annotation records."""
    ds = load_dataset(data_dir)
    config = _fit_config(**kw)
    arch, alpha, _ = load_alpha(reg_path)
    annotations, summary = annotate_dataset(ds.model, ds, config, arch=arch, alpha=alpha,
                                            out_dir=out)
    click.echo(f"annotated {summary['n_annotated']}/{summary['n_samples']} samples "
               f"({summary['n_failed']} failed) -> {out}")


@main.command("retrain")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--annotations", "ann_dir", required=True, type=click.Path())
@click.option("--regressor", "reg_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=60, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--mix", "mix_dir", default=None, type=click.Path(),
              help="Also train on this dataset's ground truth.")
@click.option("--force", is_flag=True, help="Overwrite annotations already merged.")
@_run
def retrain_cmd(data_dir, ann_dir, reg_path, out, epochs, lr, seed, batch_size, mix_dir, force):
    """Continue regressor training on fitted annotations."""
    ds = load_dataset(data_dir)
    anns = load_annotations(ann_dir)
    n = merge_annotations(ds, anns, force=force)
    arch, alpha, _ = load_alpha(reg_path)
    mix = load_dataset(mix_dir) if mix_dir else None
    arch, alpha, curve = retrain(ds.model, ds, arch, alpha, epochs=epochs, lr=lr, seed=seed,
                                 batch_size=batch_size, mix=mix)
    save_alpha(out, arch, alpha, seed=seed)
    click.echo(f"retrained on {n} annotations: loss {curve[0]:.5f} -> {curve[-1]:.5f}; wrote {out}")


@main.command("eval")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--fits", "fits_dir", required=True, type=click.Path())
@click.option("--report", required=True, type=click.Path(), help="CSV output path.")
@click.option("--json", "json_path", default=None, type=click.Path())
@click.option("--filter-extreme-mm", default=None, type=float,
              help="Evaluate only samples at least this far (PVE-T mm) from the mean shape.")
@_run
def eval_cmd(data_dir, fits_dir, report, json_path, filter_extreme_mm):
    """Score fit files against dataset ground truth; writes a CSV table."""
    ds = load_dataset(data_dir)
    fits = load_fits(fits_dir)
    if filter_extreme_mm is not None:
        keep = {o.sample_id for o in extreme_shape_filter(ds.model, ds.samples, filter_extreme_mm)}
        fits = {sid: p for sid, p in fits.items() if sid in keep}
        if not fits:
            raise DataError("extreme-shape filter removed every fitted sample")
    rep = evaluate_fits(ds.model, ds, fits)
    rep.to_csv(report)
    if json_path:
        rep.to_json(json_path)
    mean = rep.aggregate
    click.echo(f"evaluated {len(rep.per_sample)} fits: "
               f"mpjpe {mean.get('mpjpe_mm', float('nan')):.2f}mm "
               f"pve_t {mean.get('pve_t_mm', float('nan')):.2f}mm "
               f"miou {mean.get('miou', float('nan')):.4f}")


@main.command("compare")
@click.option("--spec", "spec_path", default=None, type=click.Path(),
              help="Bench spec JSON; defaults to the packaged spec.")
@click.option("--seed", required=True, type=int, help="Master seed for the whole run.")
@click.option("--out", required=True, type=click.Path(), help="CSV output path.")
@_run
def compare_cmd(spec_path, seed, out):
    """Run every cell of a bench spec and write the comparison table."""
    spec = load_spec(spec_path) if spec_path else default_spec()
    result = run_compare(spec, seed, progress=lambda r: click.echo(
        f"{r['cell']:>14}: l2d {r['mean_final_l2d']:.6f} "
        f"mpjpe {r['mean_mpjpe_mm']:7.2f}mm pve_t {r['mean_pve_t_mm']:6.2f}mm"))
    result.to_csv(out)
    click.echo(f"wrote comparison table to {out}")


if __name__ == "__main__":
    main()
