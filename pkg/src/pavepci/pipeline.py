"""Glue between data, backbones and training shared by the CLI and the estimator."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbones import build_model
from .checkpoint import save_checkpoint
from .config import RESOLVED_NAME, RunConfig, derive_seed
from .data import ImageSet, augment_expand, export_split, split
from .training import train

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pcik"
LOG_NAME = "training_log.csv"
SPLIT_NAME = "split.csv"


@dataclass
class FitResult:
    model: torch.nn.Module
    checkpoint: object
    log: object
    train_records: list
    val_records: list


def fit_records(records, cfg: RunConfig, output_dir=None, callback=None):
    """Split, expand, build and train; optionally write run artifacts under ``output_dir``."""
    cfg.validate()
    train_src, val_src = split(records, cfg.split_config())
    train_recs = augment_expand(train_src, cfg.augmentation_policy()) if cfg.augment else list(train_src)
    train_set = ImageSet(train_recs, cfg.image_size)
    val_set = ImageSet(val_src, cfg.image_size)

    torch.manual_seed(derive_seed(cfg.seed, "init"))
    model = build_model(cfg.architecture())
    best, history = train(model, train_set, val_set, cfg.train_config(), callback=callback)
    best.state["image_size"] = cfg.image_size
    best.state["run_seed"] = cfg.seed

    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        optimizer = torch.optim.Adam(model.parameters())
        optimizer.load_state_dict(best.optimizer_state)
        save_checkpoint(out / CHECKPOINT_NAME, model, optimizer, best.state)
        history.to_csv(out / LOG_NAME)
        export_split(out / SPLIT_NAME, train_src, val_src)
        cfg.save(out / RESOLVED_NAME)
    return FitResult(model, best, history, train_src, val_src)


def predict_records(model, records, image_size, batch_size=32):
    """Clamped PCI predictions for identity variants of ``records`` (manifest order)."""
    from .backbones import predict

    image_set = ImageSet(records, image_size)
    out = [predict(model, x) for x, _ in image_set.batches(batch_size)]
    return torch.cat(out).double().numpy()


def write_predictions(path, records, predicted):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image_path", "actual_pci", "predicted_pci"])
        for r, p in zip(records, predicted):
            w.writerow([r.source_id, repr(float(r.pci)), repr(float(p))])
    return Path(path)


def read_predictions(path):
    ids, y, p = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["image_path"])
            y.append(float(row["actual_pci"]))
            p.append(float(row["predicted_pci"]))
    return ids, np.array(y), np.array(p)
