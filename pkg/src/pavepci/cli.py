"""Command line entry point: ``pavepci train|evaluate|predict|compare|visualize``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

import click

from .backbones import FAMILIES
from .config import OUTPUT_DIR_ENV, RunConfig, resolve
from .exceptions import ConfigurationError, PavePCIError, SpecMismatchError
from .training import LOSSES, MONITORS

log = logging.getLogger("pavepci")

_CHOICES = {"family": FAMILIES, "loss": LOSSES, "monitor_metric": MONITORS}


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, SpecMismatchError) as exc:
            raise click.UsageError(f"{type(exc).__name__}: {exc}") from exc
        except PavePCIError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def _run_config_options(fn):
    """Add one ``--key`` flag per RunConfig field (default None so the config file wins)."""
    hints = typing.get_type_hints(RunConfig)
    for f in reversed(fields(RunConfig)):
        flag = "--" + f.name.replace("_", "-")
        hint = hints[f.name]
        base = next((a for a in typing.get_args(hint) if a is not type(None)), hint)
        if f.name in _CHOICES:
            fn = click.option(flag, f.name, type=click.Choice(_CHOICES[f.name]), default=None)(fn)
        elif base is bool:
            fn = click.option(f"{flag}/--no-{flag[2:]}", f.name, default=None)(fn)
        else:
            fn = click.option(flag, f.name, type=base if base in (int, float) else str, default=None)(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Pavement Condition Index prediction from pavement images."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
              help="Flat key = value config file; flags override it.")
@_run_config_options
@_handle_errors
def train(manifest, config_file, **overrides):
    """Train a model on MANIFEST (CSV with image_path,pci)."""
    from .data import load_manifest
    from .pipeline import fit_records

    cfg = resolve(config_file, overrides)
    records = load_manifest(manifest)
    out = Path(cfg.output_dir)
    result = fit_records(records, cfg, out,
                         callback=lambda r: log.info("epoch %d val_mae %.3f", r.epoch, r.val_mae))
    click.echo(f"best epoch {result.log.best_epoch} "
               f"({result.checkpoint.state['monitor']} {result.checkpoint.best_metric:.4f}); artifacts in {out}")


def _default_out(output_dir):
    import os

    return Path(output_dir or os.environ.get(OUTPUT_DIR_ENV, "runs/latest"))


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--output-dir", default=None, help=f"Defaults to ${OUTPUT_DIR_ENV} or runs/latest.")
@click.option("--family", type=click.Choice(FAMILIES), default=None,
              help="Reject the checkpoint unless it holds this family.")
@click.option("--name", default=None, help="Model name recorded in metrics.json (default: family).")
@click.option("--batch-size", type=int, default=32)
@click.option("--mape-min-denominator", type=float, default=1.0)
@_handle_errors
def evaluate(checkpoint, manifest, output_dir, family, name, batch_size, mape_min_denominator):
    """Write predictions.csv and metrics.json for CHECKPOINT on MANIFEST."""
    from . import metrics
    from .checkpoint import load_checkpoint
    from .data import load_manifest
    from .pipeline import predict_records, write_predictions

    model, ckpt = load_checkpoint(checkpoint, expected=family)
    records = load_manifest(manifest)
    predicted = predict_records(model, records, ckpt.state.get("image_size", 224), batch_size)
    out = _default_out(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.csv", records, predicted)
    report = metrics.evaluate([r.pci for r in records], predicted, mape_min_denominator)
    payload = {"model": name or model.spec.family, **report.to_dict()}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(payload))


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("images", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--manifest", type=click.Path(dir_okay=False), default=None, help="Predict every image in a manifest.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="CSV file (default stdout).")
@_handle_errors
def predict(checkpoint, images, manifest, output):
    """Predict PCI for IMAGES (or a manifest) with CHECKPOINT."""
    import csv

    from .checkpoint import load_checkpoint
    from .data import SampleRecord, load_manifest
    from .pipeline import predict_records

    if not images and not manifest:
        raise ConfigurationError("give image paths or --manifest")
    model, ckpt = load_checkpoint(checkpoint)
    records = load_manifest(manifest) if manifest else []
    records += [SampleRecord(Path(p), 0.0, p) for p in images]
    predicted = predict_records(model, records, ckpt.state.get("image_size", 224))
    fh = open(output, "w", newline="", encoding="utf-8") if output else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["image_path", "predicted_pci"])
        for r, p in zip(records, predicted):
            w.writerow([r.source_id, f"{p:.4f}"])
    finally:
        if output:
            fh.close()


@main.command()
@click.argument("reports", nargs=-1, required=True)
@click.option("--output-json", type=click.Path(dir_okay=False), default=None)
@_handle_errors
def compare(reports, output_json):
    """Tabulate metrics.json REPORTS (optionally NAME=PATH) and mark the best value per column."""
    from .report import compare_reports, load_report, render_table

    loaded = [load_report(r) for r in reports]
    table = compare_reports(loaded)
    click.echo(render_table(table))
    if output_json:
        Path(output_json).write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--output-dir", default=None, help="Figures go to OUTPUT_DIR/figures.")
@click.option("--overlays/--no-overlays", default=None, help="Attention overlays (default: on for CBAM models).")
@click.option("--stage", type=click.IntRange(1, 4), default=4, show_default=True,
              help="Stage whose last spatial attention map is rendered.")
@click.option("--max-overlays", type=int, default=8, show_default=True)
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--gallery-k", type=int, default=3, show_default=True)
@click.option("--name", default=None, help="Model name used in plot file names (default: family).")
@_handle_errors
def visualize(checkpoint, manifest, output_dir, overlays, stage, max_overlays, alpha, gallery_k, name):
    """Render attention overlays, best/worst galleries and prediction plots."""
    from .report import render_figures

    index = render_figures(checkpoint, manifest, _default_out(output_dir) / "figures", overlays=overlays,
                           stage=stage, max_overlays=max_overlays, alpha=alpha, gallery_k=gallery_k, name=name)
    click.echo(f"wrote {index}")


@main.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("-n", "count", type=int, default=16, show_default=True)
@click.option("--size", type=int, default=96, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(directory, count, size, seed):
    """Write a synthetic crack-image fixture and its manifest into DIRECTORY."""
    from .synthetic import make_fixture

    click.echo(make_fixture(directory, count, seed, size))


if __name__ == "__main__":
    main()
