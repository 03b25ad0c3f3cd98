"""Model comparison tables and the figure set produced by ``pavepci visualize``."""
from __future__ import annotations

import json
from pathlib import Path

from .exceptions import ConfigurationError, UnsupportedModelError

COLUMNS = ("rmse", "mae", "mape", "r2")
_HIGHER_IS_BETTER = {"r2"}


def load_report(ref):
    """Load a metrics.json given as ``PATH`` or ``NAME=PATH``."""
    name, sep, path = ref.partition("=")
    if not sep:
        name, path = None, ref
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read report {path}: {exc}") from exc
    data["model"] = name or data.get("model") or path.parent.name
    return data


def compare_reports(reports):
    """One row per model, plus the name of the best model per metric column."""
    if len(reports) < 2:
        raise ConfigurationError(f"compare needs at least 2 reports, got {len(reports)}")
    names = [r["model"] for r in reports]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate model names: {', '.join(dupes)}")
    rows = [{"model": r["model"], **{c: r.get(c) for c in COLUMNS}} for r in reports]
    best = {}
    for c in COLUMNS:
        vals = [(row[c], row["model"]) for row in rows if row[c] is not None]
        if vals:
            pick = max if c in _HIGHER_IS_BETTER else min
            best[c] = pick(vals, key=lambda v: v[0])[1]
    return {"columns": list(COLUMNS), "rows": rows, "best": best}


def render_table(table):
    """Fixed-width text rendering; the best value in each column carries a ``*``."""
    header = ["Model", "RMSE", "MAE", "MAPE (%)", "R2"]
    lines = []
    body = []
    for row in table["rows"]:
        cells = [row["model"]]
        for c in table["columns"]:
            v = row[c]
            cell = "-" if v is None else f"{v:.4f}"
            if table["best"].get(c) == row["model"]:
                cell += "*"
            cells.append(cell)
        body.append(cells)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
    lines.append(fmt.format(*header))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt.format(*cells) for cells in body)
    return "\n".join(lines)


def render_figures(checkpoint, manifest, figure_dir, overlays=None, stage=4, max_overlays=8, alpha=0.5,
                   gallery_k=3, name=None):
    """Produce overlays, galleries, line/scatter plots and ``index.json`` under ``figure_dir``."""
    from . import interpret
    from .backbones import cbam_blocks
    from .checkpoint import file_sha256, load_checkpoint
    from .data import load_manifest, preprocess
    from .pipeline import predict_records

    model, ckpt = load_checkpoint(checkpoint)
    records = load_manifest(manifest)
    has_cbam = bool(cbam_blocks(model))
    if overlays and not has_cbam:
        raise UnsupportedModelError(f"attention overlays need a CBAM model, checkpoint holds {model.spec.family}")
    if overlays is None:
        overlays = has_cbam
    image_size = ckpt.state.get("image_size", 224)
    name = name or model.spec.family
    figure_dir = Path(figure_dir)
    figure_dir.mkdir(parents=True, exist_ok=True)

    y = [r.pci for r in records]
    p = predict_records(model, records, image_size)
    artifacts = []
    images = [r.image_path for r in records]
    k = min(gallery_k, len(records))
    for order in ("best", "worst"):
        path = figure_dir / f"gallery_{order}.png"
        interpret.gallery(images, y, p, k, order, path)
        artifacts.append((f"gallery_{order}", path))
    if len(records) >= 2:
        plots = interpret.prediction_plots(y, p, figure_dir, name)
        artifacts += [("line", plots["line"]), ("scatter", plots["scatter"])]
    if overlays:
        for r in records[:max_overlays]:
            trace = interpret.extract_attention(model, preprocess(r.image_path, image_size))
            amap = trace.stage_maps(stage)[-1][0, 0]
            path = figure_dir / "overlays" / f"{Path(r.source_id).stem}.png"
            interpret.overlay(r.image_path, amap, path, alpha)
            artifacts.append(("overlay", path))
    provenance = {"checkpoint_sha256": file_sha256(checkpoint), "manifest_sha256": file_sha256(manifest),
                  "model": name, "stage": stage if overlays else None}
    return interpret.write_index(figure_dir, artifacts, provenance)
