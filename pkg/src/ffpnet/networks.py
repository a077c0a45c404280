"""Backbones and the three assembled networks.

Desk-scale defaults divide the full channel widths by four; the ``full``
constructors restore the published widths for parameter-count checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ops
from .attention import AdaptiveASPP, MuAttFusion, RegionPyramidConfig, ResConv
from .errors import ConfigError
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Dropout, Linear, Module, kaiming_uniform
from .tensor import Tensor

FULL_RESIDUAL_BLOCKS = (3, 4, 23, 3)
FULL_RESIDUAL_WIDTHS = (256, 512, 1024, 2048)
FULL_VGG_WIDTHS = (64, 128, 256, 512, 512)
VGG_BLOCK_CONVS = (2, 2, 3, 3, 3)
SPECTRAL_WIDTHS = (64, 32, 16)


@dataclass
class BackboneConfig:
    kind: str = "residual"
    stage_block_counts: tuple[int, ...] = (1, 1, 1, 1)
    stage_widths: tuple[int, ...] = (64, 128, 256, 512)
    stem_width: int = 16
    vgg_block_convs: tuple[int, ...] = VGG_BLOCK_CONVS
    input_channels: int = 3

    def __post_init__(self):
        self.stage_block_counts = tuple(self.stage_block_counts)
        self.stage_widths = tuple(self.stage_widths)
        self.vgg_block_convs = tuple(self.vgg_block_convs)

    def validate(self) -> None:
        if self.input_channels < 1:
            raise ConfigError("backbone input_channels must be >= 1")
        if self.kind == "residual":
            if len(self.stage_block_counts) != 4 or len(self.stage_widths) != 4:
                raise ConfigError("residual backbone needs 4 block counts and 4 stage widths")
            if any(w < 4 or w % 4 for w in self.stage_widths):
                raise ConfigError(f"residual stage widths must be positive multiples of 4, got {self.stage_widths}")
        elif self.kind == "vgg":
            if len(self.vgg_block_convs) != 5 or len(self.stage_widths) != 5:
                raise ConfigError("vgg backbone needs 5 conv counts and 5 block widths")
        else:
            raise ConfigError(f"backbone kind must be 'residual' or 'vgg', got {self.kind!r}")
        if any(c < 1 for c in self.stage_block_counts + self.vgg_block_convs) or any(w < 1 for w in self.stage_widths):
            raise ConfigError("block counts and widths must be positive")

    @classmethod
    def residual(cls, full: bool = False, input_channels: int = 3) -> "BackboneConfig":
        if full:
            return cls("residual", FULL_RESIDUAL_BLOCKS, FULL_RESIDUAL_WIDTHS, 64, input_channels=input_channels)
        return cls("residual", (1, 1, 1, 1), tuple(w // 4 for w in FULL_RESIDUAL_WIDTHS), 16, input_channels=input_channels)

    @classmethod
    def vgg(cls, input_channels: int, full: bool = False) -> "BackboneConfig":
        widths = FULL_VGG_WIDTHS if full else tuple(w // 4 for w in FULL_VGG_WIDTHS)
        return cls("vgg", (1, 1, 1, 1), widths, widths[0], VGG_BLOCK_CONVS, input_channels)


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fusion_width: int = 64
    region_pyramid: tuple = ("pixel", 4, 2, 1)
    num_classes: int = 6
    patch_size: int = 9
    fc_width: int = 256
    dropout_p: float = 0.5
    aspp: str = "adaptive"
    aspp_rates: tuple[int, ...] = (6, 12, 18)
    spectral_widths: tuple[int, ...] = SPECTRAL_WIDTHS
    feature_width: int = 256

    def __post_init__(self):
        self.region_pyramid = tuple(self.region_pyramid)
        self.aspp_rates = tuple(self.aspp_rates)
        self.spectral_widths = tuple(self.spectral_widths)

    def validate(self, classifier: bool = False) -> None:
        self.backbone.validate()
        RegionPyramidConfig(self.region_pyramid)
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.fusion_width < 2:
            raise ConfigError("fusion_width must be >= 2")
        if self.aspp not in ("adaptive", "plain"):
            raise ConfigError(f"aspp must be 'adaptive' or 'plain', got {self.aspp!r}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must be in [0, 1)")
        if classifier and (self.patch_size < 5 or self.patch_size % 2 == 0):
            raise ConfigError(f"patch_size must be odd and >= 5, got {self.patch_size}")

    @classmethod
    def heavy(cls, num_classes: int, full: bool = False, **overrides) -> "NetworkConfig":
        cfg = cls(backbone=BackboneConfig.residual(full), fusion_width=256 if full else 64, num_classes=num_classes)
        return replace(cfg, **overrides)

    @classmethod
    def spatial_spectral(cls, bands: int, num_classes: int, patch_size: int = 9, full: bool = False, **overrides) -> "NetworkConfig":
        cfg = cls(
            backbone=BackboneConfig.vgg(bands, full),
            fusion_width=256 if full else 64,
            num_classes=num_classes,
            patch_size=patch_size,
        )
        return replace(cfg, **overrides)


# ----------------------------------------------------------------- backbones


class Bottleneck(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, dilation: int = 1, rng=None):
        mid = out_channels // 4
        self.conv1 = ConvBNReLU(in_channels, mid, 1, rng=rng)
        self.conv2 = ConvBNReLU(mid, mid, 3, stride=stride, dilation=dilation, rng=rng)
        self.conv3 = Conv2d(mid, out_channels, 1, bias=False, rng=rng)
        self.bn3 = BatchNorm2d(out_channels)
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, stride=stride, padding=0, bias=False, rng=rng)
            self.shortcut_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn3(self.conv3(self.conv2(self.conv1(x))))
        skip = self.shortcut_bn(self.shortcut(x)) if self.shortcut is not None else x
        return ops.relu(y + skip)


class ResidualBackbone(Module):
    """7x7/2 stem, 2x2 max pool, four bottleneck stages with strides
    1, 2, 2 and a dilated final stage (output stride 16).

    ``forward`` returns five taps: stem, stage1..stage4 at strides
    2, 4, 8, 16, 16.
    """

    stage_strides = (1, 2, 2, 1)
    stage_dilations = (1, 1, 1, 2)

    def __init__(self, cfg: BackboneConfig, rng=None):
        cfg.validate()
        if cfg.kind != "residual":
            raise ConfigError("ResidualBackbone needs kind='residual'")
        self.stem = ConvBNReLU(cfg.input_channels, cfg.stem_width, 7, stride=2, padding=3, rng=rng)
        self.stages = []
        cin = cfg.stem_width
        for count, width, stride, dil in zip(cfg.stage_block_counts, cfg.stage_widths, self.stage_strides, self.stage_dilations):
            blocks = []
            for b in range(count):
                blocks.append(Bottleneck(cin, width, stride if b == 0 else 1, dil, rng=rng))
                cin = width
            self.stages.append(_Sequence(blocks))
        self.tap_widths = (cfg.stem_width,) + tuple(cfg.stage_widths)
        self.tap_strides = (2, 4, 8, 16, 16)

    def forward(self, x: Tensor) -> list[Tensor]:
        y = self.stem(x)
        taps = [y]
        y = ops.maxpool2d(y, 2, 2)
        for stage in self.stages:
            y = stage(y)
            taps.append(y)
        return taps


def vgg_tap_sizes(size: int) -> list[int]:
    """Spatial extent after each of the three pooled VGG groups; a pool
    that would shrink an extent below 1 is skipped."""
    out = []
    for _ in range(3):
        size = size // 2 if size >= 2 else size
        out.append(size)
    return out


class VGGBackbone(Module):
    """VGG-16 conv stack grouped into three taps: blocks 1-2, 3-4, 5,
    each group ending in a 2x2 max pool (skipped on 1-pixel maps)."""

    groups = ((0, 1), (2, 3), (4,))

    def __init__(self, cfg: BackboneConfig, rng=None, replicate_first: bool = True):
        cfg.validate()
        if cfg.kind != "vgg":
            raise ConfigError("VGGBackbone needs kind='vgg'")
        self.convs = []
        cin = cfg.input_channels
        for count, width in zip(cfg.vgg_block_convs, cfg.stage_widths):
            for _ in range(count):
                self.convs.append(ConvBNReLU(cin, width, 3, rng=rng))
                cin = width
        if replicate_first and cfg.input_channels != 3:
            first = self.convs[0].conv
            k = first.weight.shape[-1]
            seed = kaiming_uniform((first.weight.shape[0], 3, k, k), 3 * k * k, rng if rng is not None else np.random.default_rng(0))
            first.weight.data = init_channel_replicate(seed, cfg.input_channels)
        ends = np.cumsum(cfg.vgg_block_convs)
        self._group_ends = [int(ends[g[-1]]) for g in self.groups]
        self.tap_widths = tuple(cfg.stage_widths[g[-1]] for g in self.groups)

    def forward(self, x: Tensor) -> list[Tensor]:
        taps = []
        start = 0
        for end in self._group_ends:
            for conv in self.convs[start:end]:
                x = conv(x)
            if min(x.shape[2], x.shape[3]) >= 2:
                x = ops.maxpool2d(x, 2, 2)
            taps.append(x)
            start = end
        return taps


class _Sequence(Module):
    def __init__(self, layers: Sequence[Module]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def build_backbone(cfg: BackboneConfig, rng=None) -> Module:
    cfg.validate()
    return ResidualBackbone(cfg, rng) if cfg.kind == "residual" else VGGBackbone(cfg, rng)


def init_channel_replicate(kernel: np.ndarray, channels: int) -> np.ndarray:
    """Tile the input-channel slices of a 3-channel kernel cyclically
    (0, 1, 2, 0, 1, 2, ...) until ``channels`` slices are filled."""
    kernel = np.asarray(kernel)
    if channels < 1:
        raise ConfigError("channels must be >= 1")
    src = kernel.shape[1]
    return np.ascontiguousarray(kernel[:, np.arange(channels) % src])


# ----------------------------------------------------------------- heavy-weight segmentation net


class HeavyFFPNet(Module):
    """Three-level pyramid on a residual backbone.

    level 1: x1..x4 = ResConv(taps), x5 = adaptive ASPP(backbone output)
    level 2: x6, x7 = ResConv(MuAttFusion(x1..x4)) at x2's and x3's scale
    level 3: MuAttFusion(x5, x6, x7) at x6's scale -> 1x1 classifier ->
             bilinear resize to the input size
    """

    def __init__(self, cfg: NetworkConfig, rng=None):
        cfg.validate()
        self.cfg = cfg
        c = cfg.fusion_width
        pyramid = RegionPyramidConfig(cfg.region_pyramid)
        self.backbone = ResidualBackbone(cfg.backbone, rng)
        widths = self.backbone.tap_widths
        # x1 <- stem, x2 <- stage1, x3 <- stage2, x4 <- stage4
        self._tap_ids = (0, 1, 2, 4)
        self.refine = [ResConv(widths[t], c, rng=rng) for t in self._tap_ids]
        self.aspp = AdaptiveASPP(widths[4], c, c, cfg.aspp_rates, gated=cfg.aspp == "adaptive", rng=rng)
        strides = [self.backbone.tap_strides[t] for t in self._tap_ids]
        self.fuse6 = MuAttFusion([c] * 4, strides, 1, c, "repyatt", pyramid, rng=rng)
        self.refine6 = ResConv(c, c, rng=rng)
        self.fuse7 = MuAttFusion([c] * 4, strides, 2, c, "repyatt", pyramid, rng=rng)
        self.refine7 = ResConv(c, c, rng=rng)
        # inputs ordered (x5, x6, x7) at strides 16, 4, 8
        self.fuse_out = MuAttFusion([c] * 3, [16, strides[1], strides[2]], 1, c, "repyatt", pyramid, rng=rng)
        self.classifier = Conv2d(c, cfg.num_classes, 1, rng=rng)

    def features(self, x: Tensor) -> dict[str, Tensor]:
        _, _, h, w = x.shape
        if h % 16 or w % 16:
            raise ConfigError(f"input extents must be divisible by 16, got {h}x{w}")
        taps = self.backbone(x)
        xs = [r(taps[t]) for r, t in zip(self.refine, self._tap_ids)]
        x5 = self.aspp(taps[4])
        x6 = self.refine6(self.fuse6(xs))
        x7 = self.refine7(self.fuse7(xs))
        y = self.fuse_out([x5, x6, x7])
        return {"x1": xs[0], "x2": xs[1], "x3": xs[2], "x4": xs[3], "x5": x5, "x6": x6, "x7": x7, "y": y}

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        y = self.features(x)["y"]
        return ops.resize(self.classifier(y), h, w, "bilinear")


# ----------------------------------------------------------------- spatial-spectral classifier


class LightSpatialFFP(Module):
    """VGG taps -> ResConv -> MuAttFusion (direct, at x2) -> ResConv ->
    flatten -> FC + ReLU."""

    def __init__(self, cfg: NetworkConfig, rng=None):
        c = cfg.fusion_width
        self.backbone = VGGBackbone(cfg.backbone, rng)
        self.refine = [ResConv(w, c, rng=rng) for w in self.backbone.tap_widths]
        self.fuse = MuAttFusion([c] * 3, [2, 4, 8], 1, c, "direct", rng=rng)
        self.post = ResConv(c, c, rng=rng)
        side = vgg_tap_sizes(cfg.patch_size)[1]
        self.fc = Linear(c * side * side, cfg.feature_width, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        taps = self.backbone(x)
        xs = [r(t) for r, t in zip(self.refine, taps)]
        y = self.post(self.fuse(xs))
        return ops.relu(self.fc(y.reshape(y.shape[0], -1)))


class SpectralFFP(Module):
    """Three (3x3 + 1x1) conv stages of shrinking width at constant spatial
    size, fused at the last stage, then flatten -> FC + ReLU."""

    def __init__(self, cfg: NetworkConfig, rng=None):
        bands = cfg.backbone.input_channels
        self.stages = []
        cin = bands
        for width in cfg.spectral_widths:
            self.stages.append(_Sequence([ConvBNReLU(cin, width, 3, rng=rng), ConvBNReLU(width, width, 1, rng=rng)]))
            cin = width
        widths = list(cfg.spectral_widths)
        last = len(widths) - 1
        self.fuse = MuAttFusion(widths, [1] * len(widths), last, widths[last], "direct", rng=rng)
        self.fc = Linear(widths[last] * cfg.patch_size**2, cfg.feature_width, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        xs = []
        for stage in self.stages:
            x = stage(x)
            xs.append(x)
        y = self.fuse(xs)
        return ops.relu(self.fc(y.reshape(y.shape[0], -1)))


class SpatialSpectralFFPNet(Module):
    """Concatenate spatial and spectral feature vectors, FC + ReLU,
    dropout, FC to class logits."""

    def __init__(self, cfg: NetworkConfig, rng=None, dropout_rng=None):
        cfg.validate(classifier=True)
        self.cfg = cfg
        self.spatial = LightSpatialFFP(cfg, rng)
        self.spectral = SpectralFFP(cfg, rng)
        self.hidden = Linear(2 * cfg.feature_width, cfg.fc_width, rng=rng)
        self.dropout = Dropout(cfg.dropout_p, dropout_rng)
        self.classifier = Linear(cfg.fc_width, cfg.num_classes, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.backbone.input_channels or x.shape[2:] != (self.cfg.patch_size,) * 2:
            raise ConfigError(
                f"expected patches N x {self.cfg.backbone.input_channels} x {self.cfg.patch_size} x "
                f"{self.cfg.patch_size}, got {x.shape}"
            )
        merged = ops.concat([self.spatial(x), self.spectral(x)], axis=1)
        h = self.dropout(ops.relu(self.hidden(merged)))
        return self.classifier(h)


def build_network(task: str, cfg: NetworkConfig, rng=None, dropout_rng=None) -> Module:
    if task == "segment":
        return HeavyFFPNet(cfg, rng)
    if task == "classify":
        return SpatialSpectralFFPNet(cfg, rng, dropout_rng)
    raise ConfigError(f"task must be 'segment' or 'classify', got {task!r}")


__all__ = [
    "BackboneConfig",
    "NetworkConfig",
    "ResidualBackbone",
    "VGGBackbone",
    "HeavyFFPNet",
    "LightSpatialFFP",
    "SpectralFFP",
    "SpatialSpectralFFPNet",
    "build_backbone",
    "build_network",
    "init_channel_replicate",
    "vgg_tap_sizes",
]
