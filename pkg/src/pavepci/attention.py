"""Channel attention, spatial attention and their sequential CBAM composition.

The functional forms (``channel_attention``, ``spatial_attention``,
``cbam_apply``) are pure functions of the input and explicit weights, which
makes them usable by the gradient checker in double precision.  The
``nn.Module`` wrappers own the parameters inside the backbones.

Known quirk of the source material: the printed formula for spatial attention
duplicates the channel-attention formula.  This module implements spatial
attention as ``sigmoid(conv7x7([mean_c(F); max_c(F)]))``, i.e. a 2D map built
from channel-pooled descriptors, which is what the accompanying description
states.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigurationError
from .validation import check_feature_map, check_positive_int


def hidden_width(channels, reduction_ratio=16):
    """Width of the shared MLP's hidden layer, never below 1."""
    return max(1, channels // reduction_ratio)


def _first_max(x, dim):
    # torch.max(dim) returns the first maximal index, so the subgradient
    # goes to the first tie in scan order.
    return torch.max(x, dim=dim, keepdim=True)[0]


def spatial_max_pool(x):
    """Global max over H*W, shape (B, C, 1, 1)."""
    b, c = x.shape[:2]
    return _first_max(x.reshape(b, c, -1), 2).reshape(b, c, 1, 1)


def channel_attention(x, fc1, fc2):
    """Per-channel attention map of shape ``(B, C, 1, 1)``.

    ``fc1`` has shape ``(hidden, C)`` and ``fc2`` shape ``(C, hidden)``; both
    bias-free and shared between the average- and max-pooled descriptors.
    """
    check_feature_map(x, channels=fc1.shape[1])
    if fc2.shape != (fc1.shape[1], fc1.shape[0]):
        raise ConfigurationError(f"MLP weight shapes {tuple(fc1.shape)} and {tuple(fc2.shape)} are inconsistent")
    b, c = x.shape[:2]
    avg = x.mean(dim=(2, 3)).reshape(b, c)
    mx = spatial_max_pool(x).reshape(b, c)

    def mlp(v):
        return F.linear(F.relu(F.linear(v, fc1)), fc2)

    return torch.sigmoid(mlp(avg) + mlp(mx)).reshape(b, c, 1, 1)


def spatial_attention(x, weight, bias):
    """Per-location attention map of shape ``(B, 1, H, W)``.

    ``weight`` is a ``(1, 2, k, k)`` kernel with odd ``k``; the stacked
    [channel mean; channel max] descriptor is zero padded by ``(k - 1) // 2``.
    """
    check_feature_map(x)
    k = weight.shape[-1]
    if weight.shape != (1, 2, k, k) or k % 2 == 0:
        raise ConfigurationError(f"spatial kernel must have shape (1, 2, k, k) with odd k, got {tuple(weight.shape)}")
    desc = torch.cat([x.mean(dim=1, keepdim=True), _first_max(x, 1)], dim=1)
    return torch.sigmoid(F.conv2d(desc, weight, bias, padding=(k - 1) // 2))


def cbam_apply(x, fc1, fc2, weight, bias):
    """Channel refinement followed by spatial refinement; output shape equals input shape."""
    refined = channel_attention(x, fc1, fc2) * x
    return spatial_attention(refined, weight, bias) * refined


def cbam_parameter_count(channels, reduction_ratio=16, kernel_size=7):
    """Closed-form learnable-scalar count of one CBAM block."""
    return 2 * channels * hidden_width(channels, reduction_ratio) + kernel_size * kernel_size * 2 + 1


def _kaiming_uniform(*shape):
    # Same scheme as the nn.Linear / nn.Conv2d default init.
    w = torch.empty(*shape)
    nn.init.kaiming_uniform_(w, a=math.sqrt(5))
    return w


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction_ratio=16):
        super().__init__()
        self.channels = check_positive_int(channels, "channels")
        self.reduction_ratio = check_positive_int(reduction_ratio, "reduction_ratio")
        hidden = hidden_width(channels, reduction_ratio)
        self.fc1 = nn.Parameter(_kaiming_uniform(hidden, channels))
        self.fc2 = nn.Parameter(_kaiming_uniform(channels, hidden))

    def forward(self, x):
        return channel_attention(x, self.fc1, self.fc2)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        kernel_size = check_positive_int(kernel_size, "kernel_size")
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(_kaiming_uniform(1, 2, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return spatial_attention(x, self.weight, self.bias)


class CBAM(nn.Module):
    """Channel-then-spatial attention block.

    Setting ``force_identity`` pins both attention maps to 1.0 so the block
    becomes a no-op; ``observer`` (if set) is called with
    ``(block, channel_map, spatial_map)`` on each forward pass.
    """

    def __init__(self, channels, reduction_ratio=16, kernel_size=7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction_ratio)
        self.spatial = SpatialAttention(kernel_size)
        self.force_identity = False
        self.observer = None

    def forward(self, x):
        if self.force_identity:
            ones_c = torch.ones(x.shape[0], x.shape[1], 1, 1, dtype=x.dtype, device=x.device)
            ones_s = torch.ones(x.shape[0], 1, x.shape[2], x.shape[3], dtype=x.dtype, device=x.device)
            if self.observer is not None:
                self.observer(self, ones_c, ones_s)
            return x
        cmap = self.channel(x)
        refined = cmap * x
        smap = self.spatial(refined)
        if self.observer is not None:
            self.observer(self, cmap.detach(), smap.detach())
        return smap * refined

    def extra_repr(self):
        return f"channels={self.channel.channels}, r={self.channel.reduction_ratio}, k={self.spatial.kernel_size}"


def set_force_identity(model, enabled=True):
    """Pin every CBAM block in ``model`` to identity maps; returns the number of blocks touched."""
    n = 0
    for m in model.modules():
        if isinstance(m, CBAM):
            m.force_identity = enabled
            n += 1
    return n


__all__ = [
    "CBAM", "ChannelAttention", "SpatialAttention", "cbam_apply", "cbam_parameter_count",
    "channel_attention", "hidden_width", "set_force_identity", "spatial_attention",
    "spatial_max_pool",
]
