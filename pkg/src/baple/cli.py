"""Config-driven command-line front end.

Exit codes: 0 success, 1 runtime failure (stage named), 2 config/schema
violation (field path named).
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .artifacts import load_artifact, save_artifact
from .config import fingerprint, load_config
from .errors import BapleError, ConfigurationError
from .evaluation import AblationGrid, run_ablation, run_target_sweep
from .pipeline import (
    build_datasets,
    execute_run,
    load_bundle,
    out_root_for,
    pretrain_encoder,
    render_report,
    run_experiment,
    write_metrics_csv,
)


def _load(config_path, overrides):
    try:
        return load_config(config_path, list(overrides))
    except ConfigurationError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


def _guard(stage: str, fn):
    try:
        return fn()
    except ConfigurationError as exc:
        click.echo(f"config error in stage {stage}: {exc}", err=True)
        sys.exit(2)
    except BapleError as exc:
        click.echo(f"stage {stage} failed: {exc}", err=True)
        sys.exit(1)


config_opt = click.option("--config", "-c", "config_path", required=True,
                          type=click.Path(exists=True, dir_okay=False))
override_opt = click.option("--override", "-o", "overrides", multiple=True,
                            help="dotted config override, e.g. attack.epochs=10")


@click.group()
def main():
    """Backdoor-attack laboratory for a frozen toy dual-encoder classifier."""


@main.command()
@config_opt
@override_opt
def pretrain(config_path, overrides):
    """Pretrain the dual encoder and save its checkpoint."""
    cfg = _load(config_path, overrides)

    def run():
        enc = pretrain_encoder(cfg)
        out = out_root_for(cfg) / fingerprint(cfg) / "checkpoints" / "encoder"
        save_artifact(enc, out)
        click.echo(f"zero-shot accuracy: {enc.pretrain_accuracy}")
        click.echo(f"checkpoint: {out}")

    _guard("pretrain", run)


@main.command()
@config_opt
@override_opt
@click.option("--features/--no-features", default=False,
              help="also export clean/backdoored feature CSV")
def attack(config_path, overrides, features):
    """Run the configured attack mode end to end and write a bundle."""
    cfg = _load(config_path, overrides)

    def run():
        bundle = run_experiment(cfg, with_features=features)
        for row in bundle.metrics:
            click.echo(f"mode={row['mode']} seed={row['seed']} "
                       f"ca={row['ca']} ba={row['ba']}")
        click.echo(f"bundle: {bundle.path}")

    _guard("attack", run)


@main.command(name="eval")
@config_opt
@override_opt
@click.option("--bundle", "bundle_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="bundle directory from a previous attack run")
def eval_cmd(config_path, overrides, bundle_path):
    """Re-evaluate a stored attack result against the test split."""
    cfg = _load(config_path, overrides)

    def run():
        from .evaluation import backdoor_accuracy, clean_accuracy
        from .model import ClassPromptSet
        from .pipeline import build_patch, resolve_encoder
        from .triggers import make_injector

        result = load_artifact(Path(bundle_path) / "checkpoints" / "attack_result")
        enc = resolve_encoder(cfg)
        _, test = build_datasets(cfg)
        prompts = ClassPromptSet(enc, result.prompt)
        ca = clean_accuracy(enc, prompts, test)
        line = f"ca={ca!r}"
        if result.mode == "baple":
            patch = build_patch(cfg) if cfg.attack.use_patch else None
            noise = result.noise if cfg.attack.use_noise else None
            ba = backdoor_accuracy(enc, prompts, test,
                                   make_injector(noise, patch),
                                   cfg.poison.target_class,
                                   cfg.eval.exclude_target_from_ba)
            line += f" ba={ba!r}"
        click.echo(line)

    _guard("eval", run)


@main.command()
@config_opt
@override_opt
@click.option("--axis", required=True)
@click.option("--values", required=True,
              help="comma-separated axis values, e.g. 0,0.03137,0.1255")
@click.option("--seeds", default="0,1,2", show_default=True)
def ablate(config_path, overrides, axis, values, seeds):
    """Run one ablation axis, all other config fields fixed."""
    cfg = _load(config_path, overrides)

    def run():
        import yaml

        grid = AblationGrid(
            axis=axis,
            values=tuple(yaml.safe_load(v) for v in values.split(",")),
            seeds=tuple(int(s) for s in seeds.split(",")))
        rows = run_ablation(grid, cfg)
        out_dir = out_root_for(cfg) / fingerprint(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["axis,value,mode,seed,target_class,ca,ba,fingerprint"]
        for r in rows:
            lines.append(",".join(str(r[k]) for k in
                                  ("axis", "value", "mode", "seed",
                                   "target_class", "ca", "ba", "fingerprint")))
            click.echo(lines[-1])
        (out_dir / f"ablation_{axis}.csv").write_text("\n".join(lines) + "\n",
                                                      encoding="utf-8")

    _guard("ablate", run)


@main.command(name="sweep-targets")
@config_opt
@override_opt
def sweep_targets(config_path, overrides):
    """Run the attack once per target class and average CA/BA."""
    cfg = _load(config_path, overrides)

    def run():
        reports, mean_ca, mean_ba, failures = run_target_sweep(cfg)
        out_dir = out_root_for(cfg) / fingerprint(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "target_sweep.csv", [r.row() for r in reports])
        for r in reports:
            click.echo(f"target={r.target_class} ca={r.ca!r} ba={r.ba!r}")
        click.echo(f"mean ca={mean_ca!r} ba={mean_ba!r}")
        for target, err in failures:
            click.echo(f"warning: target {target} failed: {err}", err=True)

    _guard("sweep-targets", run)


@main.command(name="export-features")
@config_opt
@override_opt
def export_features_cmd(config_path, overrides):
    """Run the configured mode and export clean/backdoored features."""
    cfg = _load(config_path, overrides)

    def run():
        bundle = run_experiment(cfg, with_features=True)
        click.echo(f"features: {bundle.path / 'features.csv'}")

    _guard("export-features", run)


@main.command()
@click.argument("bundle_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default=None,
              type=click.Path(file_okay=False))
def report(bundle_dirs, out_dir):
    """Merge bundles into a Table-style comparison (markdown + CSV)."""

    def run():
        bundles = [load_bundle(p) for p in bundle_dirs]
        md, csv = render_report(bundles)
        target = Path(out_dir) if out_dir else Path(bundle_dirs[0])
        target.mkdir(parents=True, exist_ok=True)
        (target / "report.md").write_text(md, encoding="utf-8")
        (target / "report.csv").write_text(csv, encoding="utf-8")
        click.echo(md)

    _guard("report", run)


if __name__ == "__main__":
    main()
