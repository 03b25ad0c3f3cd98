import struct

import pytest
import torch

from pavepci.backbones import ArchitectureSpec, build_model, predict
from pavepci.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from pavepci.exceptions import CheckpointError, SpecMismatchError


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    torch.manual_seed(0)
    model = build_model("resnet50_cbam")
    # Non-trivial BN statistics and optimizer moments.
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    model.train()
    loss = (model(torch.randn(4, 3, 32, 32)) - 40).pow(2).mean()
    loss.backward()
    opt.step()
    path = tmp_path_factory.mktemp("ckpt") / "model.pcik"
    save_checkpoint(path, model, opt, {"epoch": 7, "best_metric": 12.5, "image_size": 32})
    return model.eval(), opt, path


def test_round_trip_bit_identical(saved):
    model, _, path = saved
    loaded, ckpt = load_checkpoint(path)
    x = torch.randn(3, 3, 32, 32)
    assert torch.equal(predict(model, x), predict(loaded, x))
    for k, v in model.state_dict().items():
        assert torch.equal(v, loaded.state_dict()[k]), k
    assert ckpt.epoch == 7 and ckpt.best_metric == 12.5
    assert ckpt.architecture.family == "resnet50_cbam"


def test_optimizer_state_round_trip(saved):
    model, opt, path = saved
    ckpt = read_checkpoint(path)
    fresh = torch.optim.Adam(build_model("resnet50_cbam").parameters(), lr=1e-3)
    fresh.load_state_dict(ckpt.optimizer_state)
    a, b = opt.state_dict(), fresh.state_dict()
    assert a["state"].keys() == b["state"].keys()
    for idx in a["state"]:
        for key, val in a["state"][idx].items():
            assert torch.equal(val, b["state"][idx][key])
    assert a["param_groups"][0]["lr"] == b["param_groups"][0]["lr"]


def test_header_layout(saved):
    _, _, path = saved
    raw = path.read_bytes()
    magic, version, hlen = struct.unpack_from("<8sIQ", raw)
    assert magic == MAGIC and version == 1 and hlen > 0


def test_family_mismatch_rejected(saved):
    _, _, path = saved
    with pytest.raises(SpecMismatchError):
        load_checkpoint(path, expected="resnet50")
    with pytest.raises(SpecMismatchError):
        load_checkpoint(path, expected=ArchitectureSpec(family="resnet50_cbam", reduction_ratio=8))
    load_checkpoint(path, expected="resnet50_cbam")


def test_corrupt_files(saved, tmp_path):
    _, _, path = saved
    raw = bytearray(path.read_bytes())
    truncated = tmp_path / "trunc.pcik"
    truncated.write_bytes(bytes(raw[:-100]))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(truncated)
    flipped = tmp_path / "flip.pcik"
    raw[-5] ^= 0xFF
    flipped.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(flipped)
    garbage = tmp_path / "garbage.pcik"
    garbage.write_bytes(b"not a checkpoint at all, definitely")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(garbage)
    wrong_version = tmp_path / "v9.pcik"
    wrong_version.write_bytes(struct.pack("<8sIQ", MAGIC, 9, 0))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(wrong_version)
