"""Config-driven command line entry point.

    difscil run --config cfg.yaml [--seed N] [--out DIR]
    difscil prepare-backbone --kind toy --out backbone.pt
    difscil learn-prompts --config cfg.yaml --out prompts.pt
    difscil train --config cfg.yaml --out DIR
    difscil eval --checkpoint ck.pt --config cfg.yaml --out DIR
    difscil ablate PRESET [--seed N] [--out DIR]

Exit codes: 0 success, 2 invalid configuration, 1 runtime failure.
The feature-cache directory may be pointed elsewhere via DIFSCIL_CACHE.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import ConfigError, load_config, preset_config, toy_run_config
from .evaluation import emit, evaluate_session, summarize
from .runner import (
    build_trainer,
    echo_resolved_config,
    prepare_backbone,
    run_experiment,
    session_test_data,
)


def _load_cfg(config, seed, out, workers):
    try:
        overrides = {"seed": seed, "out_dir": out}
        if config is None:
            cfg = toy_run_config()
            for k, v in overrides.items():
                if v is not None:
                    setattr(cfg, k, v)
            return cfg.validate()
        return load_config(config, overrides)
    except ConfigError as exc:
        for problem in exc.problems:
            click.echo(f"config error: {problem}", err=True)
        sys.exit(2)


@click.group()
def main():
    """Few-shot class-incremental learning on a frozen diffusion backbone."""


@main.command("prepare-backbone")
@click.option("--kind", type=click.Choice(["mock", "toy"]), default="toy")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def prepare_backbone_cmd(kind, seed, out):
    """Train (toy) or construct (mock) a backbone checkpoint."""
    prepare_backbone(kind, seed=seed, path=out, progress=True)
    click.echo(f"backbone written to {out}")


@main.command("learn-prompts")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--workers", type=int, default=1)
def learn_prompts_cmd(config, seed, out, workers):
    """Optimize class-specific prompts for every session and store them."""
    cfg = _load_cfg(config, seed, None, workers)
    trainer = build_trainer(cfg)
    for spec in trainer.sessions:
        trainer._learn_prompts(spec)
    trainer.prompts.save(out)
    click.echo(f"prompt store written to {out}")


@main.command("train")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--workers", type=int, default=1)
def train_cmd(config, seed, out, workers):
    """Run base + incremental sessions and save a resumable checkpoint."""
    cfg = _load_cfg(config, seed, out, workers)
    try:
        summary, trainer = run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001 - surfaced as exit 1 per contract
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(1)
    out_dir = Path(cfg.out_dir)
    echo_resolved_config(cfg, out_dir)
    trainer.save_checkpoint(out_dir / "checkpoint.pt")
    emit(summary, out_dir)
    click.echo(f"final acc {summary.acc:.1f}, AA {summary.aa:.1f} -> {out_dir}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def eval_cmd(checkpoint, config, seed, out):
    """Evaluate a saved checkpoint on all encountered classes."""
    cfg = _load_cfg(config, seed, out, 1)
    trainer = build_trainer(cfg)
    trainer.load_checkpoint(checkpoint)
    result = evaluate_session(
        trainer, trainer.current_session,
        session_test_data(trainer, trainer.current_session),
    )
    summary = summarize([result], trainer.sessions[0].class_ids, seed=cfg.seed)
    emit(summary, cfg.out_dir)
    click.echo(f"session {result.session} acc {result.accuracy:.1f} -> {cfg.out_dir}")


@main.command("run")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--workers", type=int, default=1)
def run_cmd(config, seed, out, workers):
    """All-in-one: prepare, prompts, train, evaluate, emit."""
    cfg = _load_cfg(config, seed, out, workers)
    try:
        summary, _ = run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(1)
    out_dir = Path(cfg.out_dir)
    echo_resolved_config(cfg, out_dir)
    emit(summary, out_dir)
    click.echo(f"final acc {summary.acc:.1f}, AA {summary.aa:.1f} -> {out_dir}")


@main.command("ablate")
@click.argument("preset")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
def ablate_cmd(preset, seed, out):
    """Run one of the bundled ablation presets on the toy benchmark."""
    try:
        cfg = preset_config(preset)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    cfg.seed = seed
    cfg.out_dir = out or f"runs/{preset}_seed{seed}"
    try:
        summary, _ = run_experiment(cfg, run_id=preset)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(1)
    echo_resolved_config(cfg, cfg.out_dir)
    emit(summary, cfg.out_dir)
    click.echo(
        f"{preset}: AA {summary.aa:.1f} Acc {summary.acc:.1f} "
        f"Base {summary.base_acc:.1f} Inc {summary.inc_acc:.1f}"
    )


if __name__ == "__main__":
    main()
