"""Command line entry points tying the pipeline stages together.

Fine-grained subcommands exist so the human review step can happen
asynchronously: ``train-seed`` and ``gen-candidates`` prepare work,
``review-serve`` hosts the selection API, and ``recurse`` (or ``run``)
consumes the outcome. ``run`` with automatic selection needs no network and
no human, which is the CI path.

Any config field can be overridden by appending ``--key=value`` tokens with
dotted paths, e.g. ``recseg run -c cfg.json --train.seed_epochs=40``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ExperimentConfig, apply_overrides
from .pipeline import (
    build_controller,
    evaluate,
    report_from_per_slice,
    run_experiment,
    stage_plan,
)
from .synth import generate_dataset


def _load_config(config_path: str, overrides: tuple[str, ...]) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(config_path)
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    return cfg


_OVERRIDE_SETTINGS = dict(ignore_unknown_options=True, allow_extra_args=True)


@click.group()
def main():
    """Recursive semi-supervised segmentation pipeline."""


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--n-pix", default=8, show_default=True)
@click.option("--n-img", default=64, show_default=True)
@click.option("--n-test", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=64, show_default=True)
def synth(out_dir, n_pix, n_img, n_test, seed, size):
    """Generate a synthetic blob dataset with manifests."""
    paths = generate_dataset(out_dir, n_pix=n_pix, n_img=n_img, n_test=n_test, seed=seed, size=size)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@main.command(context_settings=_OVERRIDE_SETTINGS)
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dry-run", is_flag=True, help="Validate the config and print the stage plan.")
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
def run(config_path, dry_run, overrides):
    """Full pipeline: seed training, selection, recursion, evaluation, report."""
    cfg = _load_config(config_path, overrides)
    if dry_run:
        for line in stage_plan(cfg):
            click.echo(line)
        return
    stage = "pipeline"
    try:
        run_experiment(cfg)
        if cfg.test_manifests:
            stage = "evaluation"
            paths = evaluate(cfg)
            click.echo(f"report: {paths['table']}")
    except Exception as exc:
        click.echo(f"run failed during {stage}: {exc}", err=True)
        sys.exit(1)
    click.echo("run complete")


@main.command("train-seed", context_settings=_OVERRIDE_SETTINGS)
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
def train_seed(config_path, overrides):
    """Stage 1 only: train the seed model on the pixel-labeled pool."""
    cfg = _load_config(config_path, overrides)
    controller = build_controller(cfg)
    controller.acquire_lock()
    try:
        controller.run_stage1()
    finally:
        controller.release_lock()
    click.echo(f"seed checkpoint: {Path(cfg.experiment_dir) / 'r0' / 'checkpoint.pt'}")


@main.command("gen-candidates", context_settings=_OVERRIDE_SETTINGS)
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
def gen_candidates(config_path, overrides):
    """Publish stage-2 candidates for review without starting selection."""
    cfg = _load_config(config_path, overrides)
    controller = build_controller(cfg)
    if not controller.state.stage1_done:
        raise click.ClickException("stage 1 has not run; use train-seed first")
    controller.acquire_lock()
    try:
        count = controller.publish_stage2_candidates()
    finally:
        controller.release_lock()
    click.echo(f"wrote {count} candidates to r0/candidates")


@main.command("review-serve")
@click.option("--experiment-dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
@click.option("--token", default=None, help="Shared bearer token required on every request.")
def review_serve(experiment_dir, host, port, token):
    """Serve the human review API over an experiment directory."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(experiment_dir, token=token), host=host, port=port)


@main.command(context_settings=_OVERRIDE_SETTINGS)
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
def recurse(config_path, overrides):
    """Run (or resume) the pipeline without the evaluation step."""
    cfg = _load_config(config_path, overrides)
    try:
        state = run_experiment(cfg)
    except Exception as exc:
        click.echo(f"recursion failed: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"stopped after recursion {state.recursion_index} "
        f"with {len(state.accepted)} accepted samples"
    )


@main.command("eval", context_settings=_OVERRIDE_SETTINGS)
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.option("--before", "before_ckpt", default=None, type=click.Path(exists=True))
@click.option("--after", "after_ckpt", default=None, type=click.Path(exists=True))
@click.option("--manifest", "manifests", multiple=True, type=click.Path(exists=True))
@click.option("--out-dir", default=None, type=click.Path())
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
def eval_cmd(config_path, before_ckpt, after_ckpt, manifests, out_dir, overrides):
    """Evaluate before/after checkpoints on the test manifests."""
    cfg = _load_config(config_path, overrides)
    try:
        paths = evaluate(
            cfg,
            before_checkpoint=before_ckpt,
            after_checkpoint=after_ckpt,
            manifests=list(manifests) or None,
            out_dir=out_dir,
        )
    except Exception as exc:
        click.echo(f"eval failed: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))


@main.command()
@click.option("--per-slice", "per_slice_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
def report(per_slice_path, out_dir):
    """Re-render report files from a per-slice results file."""
    paths = report_from_per_slice(per_slice_path, out_dir)
    click.echo(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))


if __name__ == "__main__":
    main()
