"""Manifest loading, leakage-safe splitting, 4x augmentation and batching.

Ordering of the pipeline: load manifest -> split by source image -> expand
the training split with {identity, hflip, vflip, jitter} -> batch.  The
validation split keeps identity variants only.  Splitting before expansion
keeps the augmented twins of an image on the same side of the split.
"""
from __future__ import annotations

import csv
import functools
import hashlib
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError

from .exceptions import ConfigurationError, InputError, ManifestError
from .validation import check_fraction, check_positive_int

IMAGE_SIZE = 224
# ImageNet channel statistics, matching torchvision's pretrained backbones.
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

AUGMENTATION_TAGS = ("identity", "hflip", "vflip", "jitter")


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    pci: float
    source_id: str
    augmentation_tag: str = "identity"
    jitter: tuple | None = None  # (brightness, contrast, saturation) factors
    row: int | None = None


def load_manifest(path, check_files=True):
    """Read an ``image_path,pci`` CSV into identity ``SampleRecord``s.

    Relative image paths are resolved against the manifest's directory; the
    path as written becomes the record's ``source_id``.  Every bad row is
    collected before raising, so the error lists all offending row numbers
    (1-based, header excluded).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise ManifestError(f"{path}: manifest is not valid UTF-8") from exc
    if not text.strip():
        raise ManifestError(f"{path}: empty manifest")
    reader = csv.DictReader(text.splitlines())
    fields = [f.strip() for f in (reader.fieldnames or [])]
    if "image_path" not in fields or "pci" not in fields:
        raise ManifestError(f"{path}: header must contain image_path,pci (got {','.join(fields)})")
    reader.fieldnames = fields

    records, problems = [], []
    for row_no, row in enumerate(reader, start=1):
        ref = (row.get("image_path") or "").strip()
        raw = (row.get("pci") or "").strip()
        if not ref:
            problems.append((row_no, "missing image_path"))
            continue
        try:
            pci = float(raw)
        except ValueError:
            problems.append((row_no, f"pci {raw!r} is not a number"))
            continue
        if not (0.0 <= pci <= 100.0):
            problems.append((row_no, f"pci {pci:g} outside [0, 100]"))
            continue
        image = Path(ref) if Path(ref).is_absolute() else path.parent / ref
        if check_files and not image.is_file():
            problems.append((row_no, f"image file not found: {image}"))
            continue
        records.append(SampleRecord(image, pci, ref, row=row_no))
    if problems:
        detail = "; ".join(f"row {r}: {msg}" for r, msg in problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        raise ManifestError(f"{path}: {len(problems)} invalid row(s): {detail}{more}", rows=[r for r, _ in problems])
    if not records:
        raise ManifestError(f"{path}: empty manifest (header only)")
    return records


@dataclass
class SplitConfig:
    train_fraction: float = 0.9
    seed: int = 0


def n_train_sources(n_sources, train_fraction):
    """``round_half_up(train_fraction * n)``, kept within ``[1, n - 1]``."""
    n = int((Decimal(str(train_fraction)) * n_sources).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return min(max(n, 1), n_sources - 1)


def split(records, cfg=None):
    """Partition records by ``source_id`` into ``(train, val)``.

    Deterministic in (set of source ids, seed): ids are sorted before the
    seeded permutation, so manifest order does not matter.  Records keep
    their original relative order inside each partition.
    """
    cfg = cfg or SplitConfig()
    check_fraction(cfg.train_fraction, "train_fraction")
    sources = sorted({r.source_id for r in records})
    if len(sources) < 2:
        raise ConfigurationError(f"need at least 2 distinct source images to split, got {len(sources)}")
    order = np.random.default_rng(cfg.seed).permutation(len(sources))
    n_train = n_train_sources(len(sources), cfg.train_fraction)
    train_ids = {sources[i] for i in order[:n_train]}
    train = [r for r in records if r.source_id in train_ids]
    val = [r for r in records if r.source_id not in train_ids]
    return train, val


def export_split(path, train, val):
    """Write a ``source_id,partition`` audit CSV."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "partition"])
        for part, recs in (("train", train), ("val", val)):
            for sid in sorted({r.source_id for r in recs}):
                w.writerow([sid, part])
    return path


@dataclass
class AugmentationPolicy:
    seed: int = 0
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2

    expansion = len(AUGMENTATION_TAGS)


def _stable_seed(*parts):
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def jitter_params(policy, source_id):
    """Brightness/contrast/saturation factors drawn from ``(policy.seed, source_id)``."""
    rng = np.random.default_rng(_stable_seed(policy.seed, source_id))
    return tuple(
        float(rng.uniform(1.0 - d, 1.0 + d))
        for d in (policy.brightness, policy.contrast, policy.saturation)
    )


def augment_expand(records, policy=None):
    """Expand each source record into its four tagged variants (identity first)."""
    policy = policy or AugmentationPolicy()
    out = []
    for r in records:
        for tag in AUGMENTATION_TAGS:
            jit = jitter_params(policy, r.source_id) if tag == "jitter" else None
            out.append(replace(r, augmentation_tag=tag, jitter=jit))
    return out


def decode_image(image):
    """Decode a path, PIL image or HWC uint8 array into a float64 (3, H, W) tensor in [0, 1]."""
    if isinstance(image, (str, Path)):
        try:
            with Image.open(image) as im:
                image = im.convert("RGB")
        except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
            raise InputError(f"cannot decode image {image}: {exc}") from exc
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"expected an RGB image of shape (H, W, 3), got {arr.shape}")
    t = torch.from_numpy(np.array(arr, copy=True)).permute(2, 0, 1)
    if t.dtype == torch.uint8:
        return t.double() / 255.0
    return t.double()


def resize(img, size=IMAGE_SIZE):
    """Antialiased bilinear resize of a (3, H, W) tensor to (3, size, size).

    Run this in float64: in float32 the filter's summation order breaks
    flip-commutation by ~1e-5.
    """
    return F.interpolate(img[None], size=(size, size), mode="bilinear", align_corners=False, antialias=True)[0]


def normalize(img):
    mean = torch.tensor(MEAN, dtype=img.dtype).view(3, 1, 1)
    std = torch.tensor(STD, dtype=img.dtype).view(3, 1, 1)
    return (img - mean) / std


def apply_augmentation(img, tag, jitter=None):
    """Apply one augmentation variant to a (3, H, W) tensor in [0, 1]."""
    if tag == "identity":
        return img
    if tag == "hflip":
        return torch.flip(img, dims=[2])
    if tag == "vflip":
        return torch.flip(img, dims=[1])
    if tag == "jitter":
        b, c, s = jitter
        img = TF.adjust_brightness(img, b)
        img = TF.adjust_contrast(img, c)
        return TF.adjust_saturation(img, s)
    raise ConfigurationError(f"unknown augmentation tag {tag!r}")


def preprocess(image, size=IMAGE_SIZE):
    """Decode, resize to ``size`` x ``size``, scale to [0, 1] and normalise per channel (float32 result)."""
    return normalize(resize(decode_image(image), size)).float()


class ImageSet:
    """Records bound to an image size, with an LRU cache of resized source images."""

    def __init__(self, records, image_size=IMAGE_SIZE, cache_size=4096):
        if not records:
            raise InputError("ImageSet needs at least one record")
        self.records = list(records)
        self.image_size = check_positive_int(image_size, "image_size")
        self._load = functools.lru_cache(maxsize=cache_size)(self._load_resized)

    def __len__(self):
        return len(self.records)

    def _load_resized(self, path):
        return resize(decode_image(path), self.image_size).float()

    def tensor(self, record):
        img = apply_augmentation(self._load(record.image_path), record.augmentation_tag, record.jitter)
        return normalize(img.clamp(0.0, 1.0)).float()

    def load(self, records):
        x = torch.stack([self.tensor(r) for r in records])
        y = torch.tensor([r.pci for r in records], dtype=torch.float32)
        return x, y

    def batches(self, batch_size=32, shuffle=False, seed=0, epoch=0):
        for chunk in make_batches(self.records, batch_size, shuffle, seed, epoch):
            yield self.load(chunk)


def make_batches(records, batch_size=32, shuffle=False, seed=0, epoch=0):
    """Yield lists of records covering every record once; the last batch may be short.

    With ``shuffle`` the order is a permutation drawn from ``(seed, epoch)``.
    """
    if isinstance(batch_size, bool) or not isinstance(batch_size, int) or batch_size < 1:
        raise ConfigurationError(f"batch_size must be a positive integer, got {batch_size!r}")
    if not records:
        raise InputError("cannot batch an empty record list")
    records = list(records)
    order = np.random.default_rng([seed, epoch]).permutation(len(records)) if shuffle else range(len(records))
    order = list(order)
    for i in range(0, len(order), batch_size):
        yield [records[j] for j in order[i:i + batch_size]]
