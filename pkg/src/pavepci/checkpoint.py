"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"PAVEPCI\\x00"
    4 bytes   uint32 format version
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header
    ...       concatenated raw tensor payloads

The header holds ``architecture`` (the ``ArchitectureSpec`` dict: family,
stage depths, attention and head settings), ``state`` (epoch, best metric,
scheduler/early-stopping state, optimizer hyper-parameters and any extra JSON)
and ``tensors``: a list of ``{name, dtype, shape, offset, nbytes}`` entries
whose offsets are relative to the start of the payload.  Model tensors are
named ``model/<state_dict key>``; optimizer moments ``optimizer/<param
index>/<key>``.  ``payload_sha256`` guards against truncation and bit rot.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbones import ArchitectureSpec, build_model
from .exceptions import CheckpointError, SpecMismatchError

MAGIC = b"PAVEPCI\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.float16: "float16",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.uint8: "uint8",
    torch.bool: "bool",
}
_FROM_NAME = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    architecture: ArchitectureSpec
    model_state: dict
    optimizer_state: dict | None = None
    state: dict = field(default_factory=dict)

    @property
    def epoch(self):
        return self.state.get("epoch")

    @property
    def best_metric(self):
        return self.state.get("best_metric")


def _tensor_bytes(t):
    t = t.detach().cpu().contiguous()
    if t.dtype not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {t.dtype}")
    return t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes()


def _split_optimizer(opt_state):
    tensors, state_json = {}, {}
    for idx, entry in opt_state["state"].items():
        state_json[str(idx)] = {}
        for key, val in entry.items():
            if torch.is_tensor(val):
                tensors[f"optimizer/{idx}/{key}"] = val
            else:
                state_json[str(idx)][key] = val
    return tensors, {"state": state_json, "param_groups": opt_state["param_groups"]}


def save_checkpoint(path, model, optimizer=None, state=None):
    """Write ``model`` (plus optional optimizer and JSON-able training state) to ``path``."""
    path = Path(path)
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.spec.to_dict(),
        "state": dict(state or {}),
        "optimizer": None,
        "tensors": [],
    }
    if optimizer is not None:
        opt_tensors, opt_json = _split_optimizer(optimizer.state_dict())
        tensors.update(opt_tensors)
        header["optimizer"] = opt_json

    payload = io.BytesIO()
    for name, t in tensors.items():
        raw = _tensor_bytes(t)
        header["tensors"].append({
            "name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape),
            "offset": payload.tell(), "nbytes": len(raw),
        })
        payload.write(raw)
    data = payload.getvalue()
    header["payload_sha256"] = hashlib.sha256(data).hexdigest()
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)))
        fh.write(head)
        fh.write(data)
    return path


def read_checkpoint(path):
    """Parse a checkpoint file into a ``Checkpoint`` without building a model."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    data = raw[start:]
    if hashlib.sha256(data).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch (truncated or corrupt file)")

    model_state, opt_tensors = {}, {}
    for entry in header["tensors"]:
        buf = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"]).newbyteorder("<")).reshape(entry["shape"])
        t = torch.from_numpy(arr.copy()).to(_FROM_NAME[entry["dtype"]])
        group, _, name = entry["name"].partition("/")
        (model_state if group == "model" else opt_tensors)[name] = t

    optimizer_state = None
    if header.get("optimizer") is not None:
        opt = header["optimizer"]
        st = {int(i): dict(v) for i, v in opt["state"].items()}
        for name, t in opt_tensors.items():
            idx, key = name.split("/")
            st.setdefault(int(idx), {})[key] = t
        optimizer_state = {"state": st, "param_groups": opt["param_groups"]}
    arch = ArchitectureSpec.from_dict(header["architecture"])
    return Checkpoint(arch, model_state, optimizer_state, header.get("state", {}))


def load_checkpoint(path, expected=None):
    """Rebuild the model stored at ``path``.

    ``expected`` may be a family name or an ``ArchitectureSpec``; a mismatch
    with the stored architecture raises ``SpecMismatchError``.  Returns
    ``(model, checkpoint)`` with the model in eval mode.
    """
    ckpt = read_checkpoint(path)
    if expected is not None:
        if isinstance(expected, str):
            if expected != ckpt.architecture.family:
                raise SpecMismatchError(
                    f"checkpoint holds a {ckpt.architecture.family} model, {expected} was requested")
        elif not ckpt.architecture.same_architecture(expected):
            raise SpecMismatchError("checkpoint architecture does not match the requested specification")
    spec = ArchitectureSpec.from_dict({**ckpt.architecture.to_dict(), "pretrained_backbone": False})
    model = build_model(spec)
    model.spec.pretrained_backbone = ckpt.architecture.pretrained_backbone
    try:
        model.load_state_dict(ckpt.model_state, strict=True)
    except RuntimeError as exc:
        raise SpecMismatchError(f"{path}: stored tensors do not fit the architecture: {exc}") from exc
    model.eval()
    return model, ckpt


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
