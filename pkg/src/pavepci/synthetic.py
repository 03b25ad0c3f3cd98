"""Programmatic crack-density pavement images for fixtures and smoke runs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw


def crack_image(pci, size=96, rng=None):
    """Grey asphalt texture with dark random-walk cracks; lower PCI draws more cracks."""
    rng = rng if rng is not None else np.random.default_rng()
    base = rng.normal(118, 12, (size, size, 1)) + rng.normal(0, 4, (size, size, 3))
    im = Image.fromarray(np.clip(base, 0, 255).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(im)
    n_cracks = int(round((100.0 - pci) / 8.0))
    for _ in range(n_cracks):
        x, y = rng.uniform(0, size, 2)
        pts = [(x, y)]
        heading = rng.uniform(0, 2 * np.pi)
        for _ in range(int(rng.integers(6, 14))):
            heading += rng.normal(0, 0.5)
            x += np.cos(heading) * size / 12
            y += np.sin(heading) * size / 12
            pts.append((x, y))
        shade = int(rng.integers(20, 50))
        draw.line(pts, fill=(shade, shade, shade), width=max(1, size // 48))
    return im


def make_fixture(directory, n=16, seed=0, size=96, manifest_name="manifest.csv"):
    """Write ``n`` synthetic images plus an ``image_path,pci`` manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = np.round(np.linspace(5, 100, n) if n > 1 else [50.0], 1)
    rng.shuffle(labels)
    rows = []
    for i, pci in enumerate(labels):
        rel = f"images/img_{i:04d}.png"
        crack_image(float(pci), size, rng).save(directory / rel)
        rows.append((rel, f"{float(pci):g}"))
    manifest = directory / manifest_name
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image_path", "pci"])
        w.writerows(rows)
    return manifest
