import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pavepci.attention import (
    CBAM,
    ChannelAttention,
    SpatialAttention,
    cbam_apply,
    cbam_parameter_count,
    channel_attention,
    hidden_width,
    spatial_attention,
)
from pavepci.exceptions import ConfigurationError, InputError


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def channel_oracle(x, fc1, fc2):
    """Scalar loops: pool -> shared MLP (ReLU hidden) -> sum -> sigmoid."""
    b, c, h, w = x.shape
    hidden = fc1.shape[0]
    out = np.zeros((b, c))
    for n in range(b):
        avg = [sum(x[n, k, i, j] for i in range(h) for j in range(w)) / (h * w) for k in range(c)]
        mx = [max(x[n, k, i, j] for i in range(h) for j in range(w)) for k in range(c)]

        def mlp(v):
            hid = [max(0.0, sum(fc1[u, k] * v[k] for k in range(c))) for u in range(hidden)]
            return [sum(fc2[k, u] * hid[u] for u in range(hidden)) for k in range(c)]

        a, m = mlp(avg), mlp(mx)
        for k in range(c):
            out[n, k] = sigmoid(a[k] + m[k])
    return out


def spatial_oracle(x, weight, bias):
    """Direct 2-channel convolution with explicit zero padding, then sigmoid."""
    b, c, h, w = x.shape
    k = weight.shape[-1]
    pad = (k - 1) // 2
    out = np.zeros((b, h, w))
    for n in range(b):
        desc = np.zeros((2, h + 2 * pad, w + 2 * pad))
        for i in range(h):
            for j in range(w):
                vals = [x[n, ch, i, j] for ch in range(c)]
                desc[0, i + pad, j + pad] = sum(vals) / c
                desc[1, i + pad, j + pad] = max(vals)
        for i in range(h):
            for j in range(w):
                acc = bias[0]
                for ch in range(2):
                    for di in range(k):
                        for dj in range(k):
                            acc += weight[0, ch, di, dj] * desc[ch, i + di, j + dj]
                out[n, i, j] = sigmoid(acc)
    return out


def test_hidden_width_floor():
    assert hidden_width(2048) == 128
    assert hidden_width(8) == 1
    assert hidden_width(31, 16) == 1
    assert hidden_width(32, 16) == 2


def test_channel_zero_input_is_half():
    ca = ChannelAttention(4)
    m = ca(torch.zeros(1, 4, 5, 5))
    assert m.shape == (1, 4, 1, 1)
    assert torch.all(m == 0.5)


def test_channel_hand_set_weights_match_scalar_oracle():
    x = torch.tensor([[[[1.0, -2.0], [0.5, 3.0]], [[-1.0, 0.25], [2.0, -0.5]]]], dtype=torch.float64)
    fc1 = torch.tensor([[0.7, -0.3]], dtype=torch.float64)  # hidden = max(1, 2 // 16) = 1
    fc2 = torch.tensor([[1.5], [-0.8]], dtype=torch.float64)
    got = channel_attention(x, fc1, fc2).reshape(1, 2).numpy()
    expected = channel_oracle(x.numpy(), fc1.numpy(), fc2.numpy())
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-14)
    # avg = [0.625, 0.1875], max = [3, 2]; hidden = relu(.7*.625 - .3*.1875) = 0.38125,
    # relu(.7*3 - .3*2) = 1.5; logits = 1.5*(1.88125), -0.8*(1.88125)
    np.testing.assert_allclose(expected, [[sigmoid(1.5 * 1.88125), sigmoid(-0.8 * 1.88125)]], atol=1e-15)


def test_channel_random_matches_oracle():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(2, 5, 3, 4, generator=g, dtype=torch.float64)
    fc1 = torch.randn(2, 5, generator=g, dtype=torch.float64)
    fc2 = torch.randn(5, 2, generator=g, dtype=torch.float64)
    got = channel_attention(x, fc1, fc2).reshape(2, 5).numpy()
    np.testing.assert_allclose(got, channel_oracle(x.numpy(), fc1.numpy(), fc2.numpy()), atol=1e-13)


def test_channel_invariant_to_spatial_permutation():
    g = torch.Generator().manual_seed(2)
    x = torch.randn(2, 8, 5, 5, generator=g, dtype=torch.float64)
    ca = ChannelAttention(8).double()
    perm = torch.randperm(25, generator=g)
    xp = x.reshape(2, 8, 25)[:, :, perm].reshape(2, 8, 5, 5)
    assert torch.allclose(ca(x), ca(xp), rtol=0, atol=1e-12)


def test_channel_mismatch_and_empty_extent():
    ca = ChannelAttention(4)
    with pytest.raises(ConfigurationError):
        ca(torch.zeros(1, 3, 5, 5))
    with pytest.raises(InputError):
        ca(torch.zeros(1, 4, 0, 5))
    with pytest.raises(InputError):
        ca(torch.zeros(4, 5, 5))


def test_spatial_zero_input_is_half():
    sa = SpatialAttention()
    m = sa(torch.zeros(2, 6, 4, 9))
    assert m.shape == (2, 1, 4, 9)
    assert torch.all(m == 0.5)


def test_spatial_1x1_uses_only_kernel_center():
    x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64).reshape(1, 3, 1, 1)
    g = torch.Generator().manual_seed(3)
    w = torch.randn(1, 2, 7, 7, generator=g, dtype=torch.float64)
    b = torch.tensor([0.1], dtype=torch.float64)
    got = spatial_attention(x, w, b).item()
    avg, mx = (0.3 - 1.2 + 2.0) / 3, 2.0
    center = sigmoid(w[0, 0, 3, 3].item() * avg + w[0, 1, 3, 3].item() * mx + 0.1)
    assert got == pytest.approx(center, abs=1e-15)
    assert got == pytest.approx(spatial_oracle(x.numpy(), w.numpy(), b.numpy())[0, 0, 0], abs=1e-15)


def test_spatial_random_matches_direct_convolution():
    g = torch.Generator().manual_seed(4)
    x = torch.randn(2, 3, 4, 9, generator=g, dtype=torch.float64)
    w = torch.randn(1, 2, 7, 7, generator=g, dtype=torch.float64)
    b = torch.randn(1, generator=g, dtype=torch.float64)
    got = spatial_attention(x, w, b)[:, 0].numpy()
    np.testing.assert_allclose(got, spatial_oracle(x.numpy(), w.numpy(), b.numpy()), atol=1e-13)


def test_spatial_invariant_to_channel_permutation():
    g = torch.Generator().manual_seed(5)
    x = torch.randn(2, 8, 6, 6, generator=g, dtype=torch.float64)
    sa = SpatialAttention().double()
    xp = x[:, torch.randperm(8, generator=g)]
    assert torch.allclose(sa(x), sa(xp), rtol=0, atol=1e-12)


def test_spatial_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        SpatialAttention(kernel_size=6)


def test_cbam_matches_manual_composition():
    g = torch.Generator().manual_seed(6)
    x = torch.randn(2, 8, 4, 4, generator=g, dtype=torch.float64)
    block = CBAM(8).double()
    with torch.no_grad():
        for p in block.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64))
    cmap = channel_attention(x, block.channel.fc1, block.channel.fc2)
    refined = cmap * x
    expected = spatial_attention(refined, block.spatial.weight, block.spatial.bias) * refined
    out = block(x)
    assert out.shape == x.shape
    assert torch.equal(out, expected)
    assert torch.equal(out, cbam_apply(x, block.channel.fc1, block.channel.fc2, block.spatial.weight,
                                       block.spatial.bias))


def test_cbam_zero_in_zero_out():
    assert torch.equal(CBAM(16)(torch.zeros(1, 16, 3, 3)), torch.zeros(1, 16, 3, 3))


def test_cbam_force_identity():
    block = CBAM(8)
    x = torch.randn(1, 8, 3, 3)
    block.force_identity = True
    assert torch.equal(block(x), x)


@pytest.mark.parametrize("channels", [8, 64, 256, 2048])
def test_parameter_count_matches_counting(channels):
    block = CBAM(channels)
    assert sum(p.numel() for p in block.parameters()) == cbam_parameter_count(channels)
    assert cbam_parameter_count(channels) == 2 * channels * max(1, channels // 16) + 7 * 7 * 2 + 1


def test_no_bias_in_mlp():
    names = [n for n, _ in ChannelAttention(32).named_parameters()]
    assert names == ["fc1", "fc2"]


def test_max_pool_gradient_goes_to_first_tie():
    x = torch.tensor([[[[1.0, 3.0], [3.0, 0.0]]]], dtype=torch.float64, requires_grad=True)
    fc1 = torch.ones(1, 1, dtype=torch.float64)
    fc2 = torch.ones(1, 1, dtype=torch.float64)
    from pavepci.attention import spatial_max_pool

    spatial_max_pool(x).sum().backward()
    assert x.grad.reshape(-1).tolist() == [0.0, 1.0, 0.0, 0.0]
    x.grad = None
    channel_attention(x, fc1, fc2).sum().backward()
    g = x.grad.reshape(-1)
    # Average path spreads evenly; the max path adds only to index 1.
    assert g[1] > g[2] and g[0] == g[2] == g[3]


feature_maps = st.tuples(
    st.integers(1, 2), st.integers(1, 9), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1)
)


@settings(max_examples=40, deadline=None)
@given(feature_maps)
def test_maps_strictly_inside_unit_interval(shape):
    b, c, h, w, seed = shape
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, c, h, w, generator=g, dtype=torch.float64)
    block = CBAM(c).double()
    cm = block.channel(x)
    sm = block.spatial(x)
    assert cm.shape == (b, c, 1, 1) and sm.shape == (b, 1, h, w)
    assert torch.all((cm > 0) & (cm < 1)) and torch.all((sm > 0) & (sm < 1))
    assert block(x).shape == x.shape
