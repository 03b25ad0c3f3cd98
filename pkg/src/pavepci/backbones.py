"""ResNet50, ResNet50+CBAM and DenseNet161 with a scalar PCI regression head.

ResNet parameter names follow the torchvision layout (``conv1``, ``bn1``,
``layerN.i.convK`` ...) so an ImageNet state dict maps onto both ResNet
families by name.  CBAM blocks live under ``layerN.i.cbam`` and the head
under ``head``; neither exists in torchvision checkpoints and both are always
freshly initialised.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .attention import CBAM
from .exceptions import ConfigurationError
from .validation import check_image_batch, check_positive_int

log = logging.getLogger(__name__)

FAMILIES = ("resnet50", "resnet50_cbam", "densenet161")
RESNET50_DEPTHS = (3, 4, 6, 3)
PCI_RANGE = (0.0, 100.0)

# torchvision's published DenseNet161 configuration.
DENSENET161_CONFIG = dict(growth_rate=48, block_config=(6, 12, 36, 24), num_init_features=96, bn_size=4)

_TORCHVISION_WEIGHTS = {
    "resnet50": "resnet50-0676ba61.pth",
    "resnet50_cbam": "resnet50-0676ba61.pth",
    "densenet161": "densenet161-8d451a50.pth",
}


@dataclass
class RegressionHeadSpec:
    pooled_features: int = 2048
    output_dim: int = 1
    inference_clamp: tuple = PCI_RANGE
    center: float = 50.0
    scale: float = 50.0


@dataclass
class ArchitectureSpec:
    family: str = "resnet50_cbam"
    stage_depths: tuple = RESNET50_DEPTHS
    reduction_ratio: int = 16
    kernel_size: int = 7
    pretrained_backbone: bool = False
    head: RegressionHeadSpec = field(default_factory=RegressionHeadSpec)

    def __post_init__(self):
        if isinstance(self.head, dict):
            self.head = RegressionHeadSpec(**self.head)
        self.stage_depths = tuple(self.stage_depths)
        self.head.inference_clamp = tuple(self.head.inference_clamp)
        if self.family == "densenet161" and self.head.pooled_features == 2048:
            self.head.pooled_features = _densenet_out_features()

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown model family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.family != "densenet161" and self.stage_depths != RESNET50_DEPTHS:
            raise ConfigurationError(f"resnet50 stage depths are fixed to {RESNET50_DEPTHS}, got {self.stage_depths}")
        check_positive_int(self.reduction_ratio, "reduction_ratio")
        check_positive_int(self.kernel_size, "kernel_size")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")
        if self.head.output_dim != 1:
            raise ConfigurationError("the regression head produces exactly one scalar per image")
        return self

    @property
    def has_cbam(self):
        return self.family == "resnet50_cbam"

    def to_dict(self):
        d = asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["head"]["inference_clamp"] = list(self.head.inference_clamp)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def same_architecture(self, other):
        """Equality of everything that determines parameter names and shapes."""
        a, b = self.to_dict(), other.to_dict()
        a.pop("pretrained_backbone")
        b.pop("pretrained_backbone")
        return a == b


def _densenet_out_features():
    c = DENSENET161_CONFIG["num_init_features"]
    for i, n in enumerate(DENSENET161_CONFIG["block_config"]):
        c += n * DENSENET161_CONFIG["growth_rate"]
        if i != len(DENSENET161_CONFIG["block_config"]) - 1:
            c //= 2
    return c


@dataclass
class BottleneckSpec:
    in_channels: int
    mid_channels: int
    stride: int = 1
    has_cbam: bool = False
    reduction_ratio: int = 16
    kernel_size: int = 7

    @property
    def out_channels(self):
        return 4 * self.mid_channels

    @property
    def projection_on_skip(self):
        return self.stride != 1 or self.in_channels != self.out_channels


class Bottleneck(nn.Module):
    """1x1 reduce -> 3x3 -> 1x1 restore, optional CBAM, then skip addition and ReLU."""

    expansion = 4

    def __init__(self, spec: BottleneckSpec):
        super().__init__()
        if spec.stride not in (1, 2):
            raise ConfigurationError(f"bottleneck stride must be 1 or 2, got {spec.stride}")
        self.spec = spec
        mid, out = spec.mid_channels, spec.out_channels
        self.conv1 = nn.Conv2d(spec.in_channels, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=spec.stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.conv3 = nn.Conv2d(mid, out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out)
        self.relu = nn.ReLU(inplace=True)
        self.cbam = CBAM(out, spec.reduction_ratio, spec.kernel_size) if spec.has_cbam else None
        if spec.projection_on_skip:
            self.downsample = nn.Sequential(
                nn.Conv2d(spec.in_channels, out, 1, stride=spec.stride, bias=False),
                nn.BatchNorm2d(out),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.cbam is not None:
            out = self.cbam(out)
        return self.relu(out + identity)


class RegressionHead(nn.Module):
    """Global average pool, one linear layer, affine map onto the PCI scale.

    ``center`` and ``scale`` are fixed buffers, so a freshly initialised head
    starts near the middle of the 0-100 range instead of near 0.
    """

    def __init__(self, spec: RegressionHeadSpec):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(spec.pooled_features, spec.output_dim)
        self.register_buffer("center", torch.tensor(float(spec.center)))
        self.register_buffer("scale", torch.tensor(float(spec.scale)))

    def forward(self, features):
        z = self.fc(torch.flatten(self.pool(features), 1)).squeeze(1)
        return self.center + self.scale * z


class PCIResNet(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        self.conv1 = nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        in_ch = 64
        for stage, (depth, mid) in enumerate(zip(spec.stage_depths, (64, 128, 256, 512)), start=1):
            blocks = []
            for i in range(depth):
                stride = 2 if (i == 0 and stage > 1) else 1
                bs = BottleneckSpec(in_ch, mid, stride, spec.has_cbam, spec.reduction_ratio, spec.kernel_size)
                blocks.append(Bottleneck(bs))
                in_ch = bs.out_channels
            setattr(self, f"layer{stage}", nn.Sequential(*blocks))
        self.head = RegressionHead(spec.head)
        _init_resnet(self)

    def stages(self):
        return [self.layer1, self.layer2, self.layer3, self.layer4]

    def features(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        for stage in self.stages():
            x = stage(x)
        return x

    def forward(self, x):
        return self.head(self.features(x))


def _init_resnet(model):
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class PCIDenseNet(nn.Module):
    """torchvision's DenseNet161 feature extractor with the scalar head."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        from torchvision.models import DenseNet

        self.spec = spec
        self.features_net = DenseNet(**DENSENET161_CONFIG).features
        self.head = RegressionHead(spec.head)

    def features(self, x):
        return torch.relu(self.features_net(x))

    def forward(self, x):
        return self.head(self.features(x))

    def dense_blocks(self):
        return [m for name, m in self.features_net.named_children() if name.startswith("denseblock")]


def bottlenecks(model):
    return [m for m in model.modules() if isinstance(m, Bottleneck)]


def cbam_blocks(model):
    return [m for m in model.modules() if isinstance(m, CBAM)]


def build_model(spec=None, **overrides):
    """Build a model from an ``ArchitectureSpec`` (or keyword overrides of the default one)."""
    if spec is None:
        spec = ArchitectureSpec(**overrides)
    elif isinstance(spec, str):
        spec = ArchitectureSpec(family=spec, **overrides)
    elif isinstance(spec, dict):
        spec = ArchitectureSpec.from_dict({**spec, **overrides})
    spec.validate()
    model = PCIDenseNet(spec) if spec.family == "densenet161" else PCIResNet(spec)
    if spec.pretrained_backbone:
        path = find_pretrained_weights(spec.family)
        if path is None:
            warnings.warn(f"no local ImageNet weights for {spec.family}; backbone left randomly initialised")
            model.pretrained_loaded = False
        else:
            load_backbone_weights(model, torch.load(path, map_location="cpu", weights_only=True))
            model.pretrained_loaded = True
    else:
        model.pretrained_loaded = False
    return model


def find_pretrained_weights(family):
    """Path of a locally cached torchvision checkpoint, or None.  Never downloads."""
    path = Path(torch.hub.get_dir()) / "checkpoints" / _TORCHVISION_WEIGHTS[family]
    return path if path.exists() else None


@dataclass
class WeightMappingReport:
    matched: list
    fresh: list  # model tensors with no source (CBAM, head)
    unmatched_backbone: list  # backbone tensors without a source: should be empty
    ignored_source: list  # source tensors with no destination (e.g. the ImageNet classifier)


def _is_fresh_name(name):
    return name.startswith("head.") or ".cbam." in name


def load_backbone_weights(model, state_dict):
    """Copy backbone tensors from a torchvision-style state dict by name.

    CBAM and head tensors are left at their fresh initialisation.  Raises on
    shape mismatches; returns a ``WeightMappingReport`` for auditing.
    """
    if isinstance(model, PCIDenseNet):
        state_dict = _torchvision_densenet_keys(state_dict)
    own = model.state_dict()
    matched, fresh, unmatched = [], [], []
    with torch.no_grad():
        for name, tensor in own.items():
            if _is_fresh_name(name):
                fresh.append(name)
            elif name in state_dict:
                src = state_dict[name]
                if src.shape != tensor.shape:
                    raise ConfigurationError(f"shape mismatch for {name}: {tuple(src.shape)} vs {tuple(tensor.shape)}")
                tensor.copy_(src)
                matched.append(name)
            else:
                unmatched.append(name)
    ignored = [k for k in state_dict if k not in own]
    return WeightMappingReport(matched, fresh, unmatched, ignored)


def _torchvision_densenet_keys(state_dict):
    import re

    # Old torchvision checkpoints use "norm.1" style keys.
    pattern = re.compile(r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$")
    out = {}
    for k, v in state_dict.items():
        m = pattern.match(k)
        if m:
            k = m.group(1) + m.group(2)
        out[k.replace("features.", "features_net.", 1) if k.startswith("features.") else k] = v
    return out


@dataclass
class ParameterCount:
    total: int
    cbam: int
    head: int
    backbone: int
    by_module: dict

    @property
    def cbam_overhead(self):
        return self.cbam / max(1, self.total - self.cbam)


def count_parameters(model):
    """Exact learnable-scalar count with a breakdown isolating CBAM and head parameters."""
    by_module, cbam, head = {}, 0, 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        n = p.numel()
        top = name.split(".")[0]
        by_module[top] = by_module.get(top, 0) + n
        if ".cbam." in name:
            cbam += n
        elif name.startswith("head."):
            head += n
    total = sum(by_module.values())
    return ParameterCount(total, cbam, head, total - cbam - head, by_module)


def predict(model, batch, clamp=True):
    """Scalar PCI predictions for a ``(B, 3, H, W)`` batch, in eval mode and without gradients.

    The model's train/eval mode is restored afterwards.
    """
    check_image_batch(batch)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(batch.to(next(model.parameters()).dtype))
    finally:
        model.train(was_training)
    if clamp:
        lo, hi = model.spec.head.inference_clamp
        out = out.clamp(lo, hi)
    return out
