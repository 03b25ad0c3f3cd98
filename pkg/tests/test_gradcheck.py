import pytest
import torch

from pavepci.attention import CBAM, ChannelAttention, SpatialAttention, cbam_apply, channel_attention, spatial_attention
from pavepci.exceptions import GradientCheckError
from pavepci.gradcheck import gradient_check


def _params(module):
    return dict(module.double().named_parameters())


def test_channel_attention_small():
    torch.manual_seed(0)
    x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    report = gradient_check(channel_attention, x, _params(ChannelAttention(4)), tolerance=1e-4)
    assert report.passed, report
    assert set(report.per_tensor) == {"input", "fc1", "fc2"}


def test_spatial_attention_small():
    torch.manual_seed(1)
    x = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    report = gradient_check(spatial_attention, x, _params(SpatialAttention()), tolerance=1e-4)
    assert report.passed, report


def test_cbam_small():
    torch.manual_seed(2)
    block = CBAM(8).double()
    x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
    params = [block.channel.fc1, block.channel.fc2, block.spatial.weight, block.spatial.bias]
    assert gradient_check(cbam_apply, x, params, tolerance=1e-4).passed


def test_linear_identity_is_exact():
    x = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    report = gradient_check(lambda t: t, x)
    assert report.max_rel_error < 1e-9


def test_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, t):
            return t * t

        @staticmethod
        def backward(ctx, g):
            return g  # should be 2t * g

    x = torch.randn(1, 1, 2, 2, dtype=torch.float64) + 3.0
    report = gradient_check(Wrong.apply, x)
    assert not report.passed
    assert report.worst[0] == "input"


def test_non_finite_gradient_names_coordinate():
    x = torch.ones(1, 1, 2, 2, dtype=torch.float64)
    x[0, 0, 1, 0] = 0.0
    with pytest.raises(GradientCheckError) as err:
        gradient_check(torch.sqrt, x)
    assert err.value.coordinate == ("input", 2)
