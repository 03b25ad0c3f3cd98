import pytest

from pavepci.config import RunConfig, coerce, derive_seed, parse_config_text, resolve
from pavepci.exceptions import ConfigurationError


def test_precedence_defaults_file_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nbatch_size = 8\ninitial_lr = 0.01\ngrad_clip = none\n")
    cfg = resolve(path, {"initial_lr": 0.5, "seed": None})
    assert cfg.batch_size == 8  # file beats default
    assert cfg.initial_lr == 0.5  # flag beats file
    assert cfg.seed == 0 and cfg.grad_clip is None


def test_round_trip_text(tmp_path):
    cfg = RunConfig(family="densenet161", augment=False, grad_clip=2.5, output_dir=str(tmp_path))
    path = cfg.save(tmp_path / "config.resolved")
    assert resolve(path) == cfg


def test_coerce_types():
    assert coerce("augment", "off") is False
    assert coerce("max_epochs", " 12 ") == 12
    assert coerce("min_lr", "1e-6") == 1e-6
    with pytest.raises(ConfigurationError):
        coerce("max_epochs", "many")
    with pytest.raises(ConfigurationError):
        coerce("epochs", "3")


def test_parse_errors():
    with pytest.raises(ConfigurationError, match=":2:"):
        parse_config_text("seed = 1\nnonsense\n")
    with pytest.raises(ConfigurationError):
        resolve("/nonexistent/run.cfg")
    with pytest.raises(ConfigurationError):
        resolve(overrides={"loss": "hinge"})


def test_sub_seeds_are_named_and_stable():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    assert len({derive_seed(0, n) for n in ("split", "augment", "training", "init")}) == 4
    assert derive_seed(0, "split") != derive_seed(1, "split")
    cfg = RunConfig(seed=3)
    assert cfg.split_config().seed == derive_seed(3, "split")
    assert cfg.train_config().seed == derive_seed(3, "training")


def test_output_dir_env(monkeypatch):
    monkeypatch.setenv("PAVE_PCI_OUTPUT_DIR", "/tmp/pci-out")
    assert RunConfig().output_dir == "/tmp/pci-out"
