"""Attention extraction and the qualitative figures: overlays, galleries, prediction plots."""
from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
import torch.nn.functional as F  # noqa: E402
from PIL import Image  # noqa: E402

from . import metrics  # noqa: E402
from .backbones import cbam_blocks, predict  # noqa: E402
from .exceptions import ConfigurationError, InputError, UnsupportedModelError  # noqa: E402

# Blue/green (low attention) to yellow/red (high attention).
COLORMAP = "jet"

# Deterministic PNG output: no timestamps or version strings in the file.
_PNG_METADATA = {"Software": None}


@dataclass
class AttentionTrace:
    spatial: list = field(default_factory=list)  # (B, 1, H, W) per CBAM block
    channel: list = field(default_factory=list)  # (B, C) per CBAM block
    blocks: list = field(default_factory=list)  # "layerN.i" names
    prediction: torch.Tensor | None = None

    def __len__(self):
        return len(self.spatial)

    def stage_maps(self, stage):
        """Spatial maps of the blocks in ``layer<stage>``."""
        return [m for m, name in zip(self.spatial, self.blocks) if name.startswith(f"layer{stage}.")]


@contextmanager
def trace_attention(model):
    """Attach observers to every CBAM block; yields the trace being filled."""
    blocks = cbam_blocks(model)
    if not blocks:
        raise UnsupportedModelError(f"{model.spec.family} has no CBAM blocks to trace")
    names = {id(m): n.rsplit(".cbam", 1)[0] for n, m in model.named_modules() if m in blocks}
    trace = AttentionTrace()

    def observe(block, cmap, smap):
        trace.channel.append(cmap.reshape(cmap.shape[0], -1).detach().clone())
        trace.spatial.append(smap.detach().clone())
        trace.blocks.append(names[id(block)])

    for b in blocks:
        b.observer = observe
    try:
        yield trace
    finally:
        for b in blocks:
            b.observer = None


def extract_attention(model, image):
    """Run one inference pass recording every CBAM block's channel and spatial maps.

    ``image`` is a preprocessed ``(3, H, W)`` or ``(B, 3, H, W)`` tensor.
    """
    batch = image[None] if image.dim() == 3 else image
    with trace_attention(model) as trace:
        trace.prediction = predict(model, batch)
    return trace


def _to_uint8_image(image):
    if isinstance(image, (str, Path)):
        with Image.open(image) as im:
            return np.asarray(im.convert("RGB"))
    if isinstance(image, Image.Image):
        return np.asarray(image.convert("RGB"))
    if torch.is_tensor(image):
        arr = image.detach().cpu().numpy()
        if arr.ndim == 3 and arr.shape[0] == 3:
            arr = arr.transpose(1, 2, 0)
        return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    return arr


def upsample_map(amap, height, width):
    """Bilinearly resize a 2-D attention map (any leading singleton axes) to ``height`` x ``width``."""
    t = torch.as_tensor(np.asarray(amap, dtype=np.float64) if not torch.is_tensor(amap) else amap).double()
    t = t.reshape(t.shape[-2], t.shape[-1])
    up = F.interpolate(t[None, None], size=(height, width), mode="bilinear", align_corners=False)[0, 0]
    # Bilinear output is a convex combination; clipping only removes rounding noise.
    return up.clamp(t.min(), t.max()).numpy()


@dataclass
class OverlayFigure:
    image: np.ndarray
    attention: np.ndarray  # upsampled to the image resolution
    blended: np.ndarray
    alpha: float
    path: Path | None = None


def colorize(values):
    """Map values in [0, 1] to RGB uint8 with the cool-to-warm colormap."""
    values = np.asarray(values, dtype=np.float64)
    rgba = np.asarray(matplotlib.colormaps[COLORMAP](np.clip(values, 0.0, 1.0).ravel())).reshape(values.shape + (4,))
    return np.round(rgba[..., :3] * 255.0).astype(np.uint8)


def overlay(image, amap, path=None, alpha=0.5):
    """Blend an attention map over ``image`` at the image's own resolution.

    Writes a PNG to ``path`` when given.  Pixels depend only on the inputs.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    img = _to_uint8_image(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"overlay needs an RGB image, got shape {img.shape}")
    att = upsample_map(amap, img.shape[0], img.shape[1])
    heat = colorize(att).astype(np.float64)
    blended = np.round((1.0 - alpha) * img.astype(np.float64) + alpha * heat).astype(np.uint8)
    fig = OverlayFigure(img, att, blended, alpha)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(blended).save(path, format="PNG")
        fig.path = path
    return fig


def select_gallery(y_true, y_pred, k, order="best"):
    """Indices of the ``k`` samples with smallest (best) or largest (worst) absolute error.

    Samples are totally ordered by (|error|, manifest position); best takes
    the head of that order and worst the tail, largest error first, so
    best-k and worst-(n-k) always partition the set.
    """
    y, p = np.asarray(y_true, float), np.asarray(y_pred, float)
    if y.size == 0:
        raise InputError("gallery needs at least one prediction")
    if order not in ("best", "worst"):
        raise ConfigurationError(f"order must be 'best' or 'worst', got {order!r}")
    if not 0 <= k <= y.size:
        raise ConfigurationError(f"k must lie in [0, {y.size}], got {k}")
    err = np.abs(y - p)
    ranked = np.argsort(err, kind="stable")
    if order == "worst":
        ranked = ranked[::-1]
    return [int(i) for i in ranked[:k]]


def _save_figure(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def gallery(images, y_true, y_pred, k, order, path, title=None):
    """Render the best/worst ``k`` predictions as a row of image cells; returns the chosen indices."""
    idx = select_gallery(y_true, y_pred, k, order)
    fig, axes = plt.subplots(1, max(1, len(idx)), figsize=(3 * max(1, len(idx)), 3.4), squeeze=False)
    for ax, i in zip(axes[0], idx):
        ax.imshow(_to_uint8_image(images[i]))
        ax.set_title(f"actual {y_true[i]:.0f} vs predicted {y_pred[i]:.0f}", fontsize=9)
        ax.axis("off")
    for ax in axes[0][len(idx):]:
        ax.axis("off")
    fig.suptitle(title or f"{order.capitalize()} predicted PCI values")
    fig.tight_layout()
    _save_figure(fig, path)
    return idx


def prediction_plots(y_true, y_pred, out_dir, model_name="model"):
    """Line plot (actual black, predicted red, by sample index) and scatter with identity line.

    The scatter is annotated with R^2 from ``metrics.r_squared``.  Returns
    ``{"line": path, "scatter": path, "r2": value}``.
    """
    y, p = np.asarray(y_true, float), np.asarray(y_pred, float)
    r2 = metrics.r_squared(y, p)
    out_dir = Path(out_dir)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(np.arange(y.size), y, color="black", label="actual PCI")
    ax.plot(np.arange(y.size), p, color="red", label="predicted PCI")
    ax.set_xlabel("sample")
    ax.set_ylabel("PCI")
    ax.legend()
    line = _save_figure(fig, out_dir / f"line_{model_name}.png")

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(y, p, s=12)
    ax.plot([0, 100], [0, 100], color="gray", linestyle="--")
    ax.set_xlim(0, 100)
    ax.set_ylim(0, 100)
    ax.set_xlabel("actual PCI")
    ax.set_ylabel("predicted PCI")
    ax.annotate(format_r2(r2), xy=(0.05, 0.92), xycoords="axes fraction")
    scatter = _save_figure(fig, out_dir / f"scatter_{model_name}.png")
    return {"line": line, "scatter": scatter, "r2": r2}


def format_r2(r2):
    return f"R² = {r2:.4f}"


def write_index(figure_dir, artifacts, provenance):
    """Write ``index.json`` listing artifacts (paths relative to ``figure_dir``) with provenance hashes."""
    figure_dir = Path(figure_dir)
    entries = sorted(
        ({"kind": kind, "path": Path(p).relative_to(figure_dir).as_posix()} for kind, p in artifacts),
        key=lambda e: (e["kind"], e["path"]),
    )
    index = {"provenance": provenance, "artifacts": entries}
    path = figure_dir / "index.json"
    path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
