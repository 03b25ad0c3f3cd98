import pytest
import torch
from torch import nn

from pavepci.backbones import ArchitectureSpec, RegressionHead, RegressionHeadSpec
from pavepci.data import ImageSet, load_manifest
from pavepci.synthetic import make_fixture

ACCEPTANCE_RESULTS = []


def record_acceptance(name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


class TinyNet(nn.Module):
    """Small conv net with the real regression head, for fast training-loop tests."""

    def __init__(self):
        super().__init__()
        self.spec = ArchitectureSpec(family="resnet50", head=RegressionHeadSpec(pooled_features=4))
        self.conv = nn.Conv2d(3, 4, 3, padding=1)
        self.head = RegressionHead(self.spec.head)

    def forward(self, x):
        return self.head(torch.relu(self.conv(x)))


@pytest.fixture
def tiny_net():
    torch.manual_seed(0)
    return TinyNet()


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture16")
    make_fixture(d, n=16, seed=0, size=64)
    return d


@pytest.fixture(scope="session")
def fixture_records(fixture_dir):
    return load_manifest(fixture_dir / "manifest.csv")


@pytest.fixture
def small_set(fixture_records):
    return ImageSet(fixture_records[:8], image_size=16)
