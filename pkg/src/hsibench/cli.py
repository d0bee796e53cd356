"""Command-line entry point.

Exit codes: 0 on success, 1 on validation/usage failures (before any
training starts), 2 on asset integrity failures. The cache root defaults to
$HSIBENCH_CACHE. Flags override the experiment file; the effective resolved
values are echoed into every results record.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .cube import ValidationError
from .experiment import (
    Experiment,
    build_synthetic_benchmark,
    default_cache_dir,
    run_experiment,
)
from .ingest import FetchError, IntegrityError, LoadError, fetch_assets
from .registry import DatasetManifest, full_manifest
from .results import (
    ResultsStore,
    aggregate_and_rank,
    per_config_csv,
    report_csv,
    report_text,
    train_ratio_curve_csv,
)
from .splits import export_split

log = logging.getLogger(__name__)


def _load_manifest(manifest_path, synthetic_path, cache_dir) -> DatasetManifest:
    if synthetic_path:
        with open(synthetic_path) as fh:
            return build_synthetic_benchmark(yaml.safe_load(fh), cache_dir)
    if manifest_path:
        return DatasetManifest.load(manifest_path)
    return full_manifest()


@click.group()
@click.version_option(__version__)
def main():
    """Hyperspectral classification benchmark harness."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_id", required=True, help="configuration key")
@click.option("--cache", "cache_dir", type=click.Path(), default=None,
              help="asset cache root (default: $HSIBENCH_CACHE)")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
def download(config_id, cache_dir, manifest_path):
    """Fetch and verify the assets of one configuration."""
    cache = Path(cache_dir) if cache_dir else default_cache_dir()
    try:
        manifest = _load_manifest(manifest_path, None, cache)
        paths = fetch_assets(manifest, config_id, cache)
    except (KeyError, ValidationError) as err:
        click.echo(f"error: {err}", err=True)
        click.echo(f"usage hint: list keys with `hsibench report --list-configs`", err=True)
        sys.exit(1)
    except IntegrityError as err:
        click.echo(f"integrity error: {err}", err=True)
        sys.exit(2)
    except (FetchError, LoadError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")


@main.command()
@click.option("--config", "config_id", required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--cache", "cache_dir", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--synthetic", "synthetic_path", type=click.Path(exists=True), default=None,
              help="synthetic benchmark spec to generate instead of real assets")
def splits(config_id, out_path, cache_dir, manifest_path, synthetic_path):
    """Export a configuration's deterministic split as plain text."""
    from .experiment import DataPipeline

    cache = Path(cache_dir) if cache_dir else default_cache_dir()
    try:
        manifest = _load_manifest(manifest_path, synthetic_path, cache)
        pipeline = DataPipeline(manifest, cache)
        assignment = pipeline.assignment(config_id)
    except (KeyError, ValidationError, LoadError, FetchError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    except IntegrityError as err:
        click.echo(f"integrity error: {err}", err=True)
        sys.exit(2)
    with open(out_path, "w") as fh:
        lines = export_split(assignment, fh)
    click.echo(f"wrote {lines} lines to {out_path}")


def _run_with_overrides(experiment_file, config, model, seed, cache, out, synthetic,
                        require: str = ""):
    try:
        exp = Experiment.load(experiment_file)
        if config:
            exp.config_keys = [config]
            exp.doc["configs"] = [config]
        if model:
            exp.models = [model]
            exp.doc["models"] = [model]
        if seed is not None:
            exp.seeds = [seed]
            exp.doc["seeds"] = [seed]
        if cache:
            exp.doc["cache"] = str(Path(cache).resolve())
        if out:
            exp.doc["output"] = str(Path(out).resolve())
        if synthetic:
            with open(synthetic) as fh:
                exp.doc["synthetic"] = yaml.safe_load(fh)
        if require and not exp.doc.get(require):
            raise ValidationError(f"experiment file has no '{require}' section")
        results = run_experiment(exp)
    except (ValidationError, KeyError, FileNotFoundError, LoadError, FetchError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    except IntegrityError as err:
        click.echo(f"integrity error: {err}", err=True)
        sys.exit(2)
    for r in results:
        click.echo(f"{r.model_name} / {r.config_key} / seed {r.seed}: "
                   f"accuracy {r.accuracy:.4f} (best epoch {r.best_epoch})")


_COMMON_RUN_OPTIONS = [
    click.option("--config", default=None, help="override: single configuration key"),
    click.option("--model", default=None, help="override: single model name"),
    click.option("--seed", type=int, default=None, help="override: single seed"),
    click.option("--cache", type=click.Path(), default=None),
    click.option("--out", type=click.Path(), default=None, help="results store path"),
    click.option("--synthetic", type=click.Path(exists=True), default=None,
                 help="synthetic benchmark spec file"),
]


def _with_run_options(fn):
    for opt in reversed(_COMMON_RUN_OPTIONS):
        fn = opt(fn)
    return fn


@main.command()
@click.argument("experiment_file", type=click.Path(exists=True))
@_with_run_options
def run(experiment_file, config, model, seed, cache, out, synthetic):
    """Train the experiment's (config, model, seed) matrix."""
    _run_with_overrides(experiment_file, config, model, seed, cache, out, synthetic)


@main.command(name="pretrain")
@click.argument("experiment_file", type=click.Path(exists=True))
@_with_run_options
def pretrain_cmd(experiment_file, config, model, seed, cache, out, synthetic):
    """Run the experiment's multi-head pretraining plan."""
    _run_with_overrides(experiment_file, config, model, seed, cache, out, synthetic,
                        require="pretrain")


@main.command(name="finetune")
@click.argument("experiment_file", type=click.Path(exists=True))
@_with_run_options
def finetune_cmd(experiment_file, config, model, seed, cache, out, synthetic):
    """Fine-tune a pretrained checkpoint on the experiment's target."""
    _run_with_overrides(experiment_file, config, model, seed, cache, out, synthetic,
                        require="finetune")


@main.command()
@click.argument("results_path", type=click.Path())
@click.option("--csv-dir", type=click.Path(), default=None,
              help="also write leaderboard / per-config / ratio-curve CSVs here")
@click.option("--list-configs", "list_configs_flag", is_flag=True,
              help="print the built-in benchmark configuration keys and exit")
def report(results_path, csv_dir, list_configs_flag):
    """Aggregate a results store into leaderboard tables."""
    if list_configs_flag:
        for config in full_manifest().configs():
            click.echo(config.key)
        return
    store = ResultsStore(results_path)
    results, skipped = store.read()
    if not results:
        click.echo("error: results store is empty", err=True)
        sys.exit(1)
    if skipped:
        click.echo(f"warning: skipped {skipped} malformed record(s)", err=True)
    rep = aggregate_and_rank(results)
    click.echo(report_text(rep))
    if csv_dir:
        out = Path(csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "leaderboard.csv").write_text(report_csv(rep))
        (out / "per_config.csv").write_text(per_config_csv(rep))
        curve = train_ratio_curve_csv(results)
        if curve:
            (out / "train_ratio_curve.csv").write_text(curve)
        click.echo(f"CSV tables written to {out}")


if __name__ == "__main__":
    main()
