"""Attention-based fusion blocks: ResConv, region pyramid attention,
multi-scale attention fusion (DAM / UAM / AttFuse) and the adaptive ASPP
with cross-scale attention gates."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from . import ops
from .errors import ConfigError, UsageError
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module
from .tensor import Tensor

PIXEL = "pixel"
Group = Union[str, int]


@dataclass(frozen=True)
class RegionPyramidConfig:
    """Ordered region groups; an int g is a g x g partition grid and
    ``"pixel"`` keeps every pixel as its own region."""

    groups: tuple[Group, ...] = (PIXEL, 4, 2, 1)

    def __post_init__(self):
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups:
            raise ConfigError("region pyramid needs at least one group")
        if len(set(groups)) != len(groups):
            raise ConfigError(f"duplicate region groups in {groups}")
        for g in groups:
            if g != PIXEL and not (isinstance(g, int) and not isinstance(g, bool) and g >= 1):
                raise ConfigError(f"region group must be 'pixel' or a positive int, got {g!r}")

    def validate(self, height: int, width: int) -> None:
        for g in self.groups:
            if g != PIXEL and g > min(height, width):
                raise ConfigError(f"grid {g}x{g} does not fit a {height}x{width} map")


# the four combinations of the region-pyramid ablation
TABLE5_PYRAMIDS = (
    (PIXEL, 8, 4, 2, 1),
    (PIXEL, 4, 2, 1),
    (PIXEL, 2, 1),
    (PIXEL, 1),
)


# ----------------------------------------------------------------- ResConv


class ResConv(Module):
    """1x1 reduction followed by a residual pair of 3x3 convs (rates 1, 3)."""

    def __init__(self, in_channels: int, out_channels: int = 256, rng=None):
        self.reduce = ConvBNReLU(in_channels, out_channels, 1, rng=rng)
        self.conv1 = Conv2d(out_channels, out_channels, 3, dilation=1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, dilation=3, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        x = self.reduce(x)
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return ops.relu(x + y)


# ----------------------------------------------------------------- region pyramid attention


@lru_cache(maxsize=128)
def region_index(height: int, width: int, grid: int) -> np.ndarray:
    """Row-major block id of every pixel for a floor-boundary g x g grid."""
    # block b covers [floor(b * size / g), floor((b + 1) * size / g))
    rows = np.searchsorted((np.arange(grid) * height) // grid, np.arange(height), side="right") - 1
    cols = np.searchsorted((np.arange(grid) * width) // grid, np.arange(width), side="right") - 1
    idx = (rows[:, None] * grid + cols[None, :]).reshape(-1)
    idx.setflags(write=False)
    return idx


def region_bounds(size: int, grid: int) -> list[tuple[int, int]]:
    return [((b * size) // grid, ((b + 1) * size) // grid) for b in range(grid)]


@lru_cache(maxsize=128)
def _pool_matrices(height: int, width: int, grid: int, dtype: str) -> tuple[np.ndarray, np.ndarray]:
    idx = region_index(height, width, grid)
    hw, g2 = height * width, grid * grid
    onehot = np.zeros((hw, g2), dtype=np.float64)
    onehot[np.arange(hw), idx] = 1.0
    pool = (onehot / onehot.sum(axis=0, keepdims=True)).astype(dtype)
    scatter = np.ascontiguousarray(onehot.T).astype(dtype)
    return pool, scatter


def region_pool(x: Tensor, grid: Group) -> Tensor:
    """N x F x H x W -> N x F x G of block means (G = g*g, row-major blocks).

    ``"pixel"`` returns the flattened map without pooling.
    """
    n, f, h, w = x.shape
    if grid == PIXEL:
        return x.reshape(n, f, h * w)
    if grid < 1 or grid > min(h, w):
        raise ConfigError(f"grid {grid}x{grid} does not fit a {h}x{w} map")
    pool, _ = _pool_matrices(h, w, grid, x.dtype.str)
    return ops.matmul(x.reshape(n, f, h * w), Tensor(pool))


def region_broadcast(z: Tensor, grid: Group, height: int, width: int) -> Tensor:
    """Inverse layout of ``region_pool``: every pixel takes its block's value.

    Equals nearest upsampling of the g x g grid whenever g divides the extents.
    """
    n, f, _ = z.shape
    if grid == PIXEL:
        return z.reshape(n, f, height, width)
    _, scatter = _pool_matrices(height, width, grid, z.dtype.str)
    return ops.matmul(z, Tensor(scatter)).reshape(n, f, height, width)


class RegionSelfAttention(Module):
    """Self-attention over the G columns of a regional representation.

    The F x G representation is laid out as an F x 1 x G map so the 3x3
    conv slides along the region axis with zero padding.
    """

    def __init__(self, channels: int, rng=None):
        hidden = max(channels // 2, 1)
        self.conv3 = Conv2d(channels, hidden, 3, rng=rng)
        self.conv1 = Conv2d(hidden, 1, 1, rng=rng)
        self.value = Conv2d(channels, channels, 1, rng=rng)

    def attention(self, r: Tensor) -> Tensor:
        """Softmax weights over regions, shape N x 1 x 1 x G."""
        n, f, g = r.shape
        r4 = r.reshape(n, f, 1, g)
        return ops.softmax(self.conv1(ops.relu(self.conv3(r4))), axis=-1)

    def forward(self, r: Tensor) -> Tensor:
        n, f, g = r.shape
        r4 = r.reshape(n, f, 1, g)
        a = ops.softmax(self.conv1(ops.relu(self.conv3(r4))), axis=-1)
        z = a * self.value(r4) + r4
        return z.reshape(n, f, g)


class RePyAtt(Module):
    """Region pyramid attention: per-group attended region maps, summed and
    multiplied back onto the input."""

    def __init__(self, channels: int, pyramid: RegionPyramidConfig | Sequence[Group] = RegionPyramidConfig(), rng=None):
        if not isinstance(pyramid, RegionPyramidConfig):
            pyramid = RegionPyramidConfig(tuple(pyramid))
        self.pyramid = pyramid
        self.groups = [RegionSelfAttention(channels, rng=rng) for _ in pyramid.groups]

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        self.pyramid.validate(h, w)
        total = None
        for grid, att in zip(self.pyramid.groups, self.groups):
            z = att(region_pool(x, grid))
            up = region_broadcast(z, grid, h, w)
            total = up if total is None else total + up
        return total * x


# ----------------------------------------------------------------- multi-scale attention fusion


class _Aggregation(Module):
    def __init__(self, in_channels: Sequence[int], channels: int, rng=None):
        self.channels = channels
        self.compress = [Conv2d(c, channels, 1, rng=rng) for c in in_channels]
        if in_channels:
            self.fuse = ConvBNReLU(len(in_channels) * channels, channels, 1, rng=rng)

    def forward(self, feats: Sequence[Tensor], like: Tensor) -> Tensor:
        """Aggregate ``feats`` onto the spatial grid of ``like``."""
        n, _, h, w = like.shape
        if len(feats) != len(self.compress):
            raise UsageError(f"expected {len(self.compress)} feature maps, got {len(feats)}")
        if not feats:
            return Tensor(np.zeros((n, self.channels, h, w), dtype=like.dtype))
        resized = [ops.resize(conv(f), h, w, "bilinear") for conv, f in zip(self.compress, feats)]
        return self.fuse(ops.concat(resized, axis=1))


class DAM(_Aggregation):
    """Downsampling aggregation of finer-scale maps."""


class UAM(_Aggregation):
    """Upsampling aggregation of coarser-scale maps."""


class AttFuse(Module):
    """Two-channel sigmoid gate weighting lower- and higher-level maps."""

    def __init__(self, channels: int, hidden: int | None = None, rng=None):
        hidden = channels if hidden is None else hidden
        self.conv3 = Conv2d(2 * channels, hidden, 3, rng=rng)
        self.conv1 = Conv2d(hidden, 2, 1, rng=rng)

    def gate(self, f_ll: Tensor, f_hl: Tensor) -> Tensor:
        if f_ll.shape != f_hl.shape:
            raise ConfigError(f"attfuse inputs differ: {f_ll.shape} vs {f_hl.shape}")
        return ops.sigmoid(self.conv1(ops.relu(self.conv3(ops.concat([f_ll, f_hl], axis=1)))))

    def forward(self, f_ll: Tensor, f_hl: Tensor) -> Tensor:
        a = self.gate(f_ll, f_hl)
        return a[:, 0:1] * f_ll + a[:, 1:2] * f_hl


class MuAttFusion(Module):
    """Fuse a pyramid of maps onto the scale of ``inputs[current]``.

    ``scales`` gives each input's downsampling factor. Inputs finer than
    the current one (or equal scale, earlier in the list) feed the DAM;
    coarser ones (or equal scale, later in the list) feed the UAM.
    """

    def __init__(
        self,
        in_channels: Sequence[int],
        scales: Sequence[int],
        current: int,
        channels: int,
        same_layer_mode: str = "repyatt",
        pyramid: RegionPyramidConfig | Sequence[Group] = RegionPyramidConfig(),
        rng=None,
    ):
        if not in_channels:
            raise UsageError("muattfusion needs at least one input")
        if len(scales) != len(in_channels):
            raise ConfigError("one scale per input required")
        if not 0 <= current < len(in_channels):
            raise UsageError(f"current index {current} outside {len(in_channels)} inputs")
        if same_layer_mode not in ("repyatt", "direct"):
            raise ConfigError(f"same_layer_mode must be 'repyatt' or 'direct', got {same_layer_mode!r}")
        self.current = current
        self.n_inputs = len(in_channels)
        s0 = scales[current]
        self.lower = [j for j in range(len(scales)) if j != current and (scales[j] < s0 or (scales[j] == s0 and j < current))]
        self.higher = [j for j in range(len(scales)) if j != current and j not in self.lower]
        self.mode = same_layer_mode
        self.dam = DAM([in_channels[j] for j in self.lower], channels, rng=rng)
        self.uam = UAM([in_channels[j] for j in self.higher], channels, rng=rng)
        self.attfuse = AttFuse(channels, rng=rng)
        self.same = RePyAtt(in_channels[current], pyramid, rng=rng) if same_layer_mode == "repyatt" else None
        self.out = Conv2d(in_channels[current] + channels, channels, 1, rng=rng)

    def forward(self, inputs: Sequence[Tensor]) -> Tensor:
        if len(inputs) != self.n_inputs:
            raise UsageError(f"expected {self.n_inputs} inputs, got {len(inputs)}")
        cur = inputs[self.current]
        f_ll = self.dam([inputs[j] for j in self.lower], cur)
        f_hl = self.uam([inputs[j] for j in self.higher], cur)
        f_f = self.attfuse(f_ll, f_hl)
        f_sl = self.same(cur) if self.same is not None else cur
        return self.out(ops.concat([f_sl, f_f], axis=1))


# ----------------------------------------------------------------- adaptive ASPP


class CrsAtt(Module):
    """Cross-scale gate sigmoid(phi(relu(Wg * x_j + Wx * x_i)))."""

    def __init__(self, channels: int, inter_channels: int | None = None, rng=None):
        inter = max(channels // 2, 1) if inter_channels is None else inter_channels
        self.w_g = Conv2d(channels, inter, 1, rng=rng)
        self.w_x = Conv2d(channels, inter, 1, rng=rng)
        self.phi = Conv2d(inter, 1, 1, rng=rng)

    def forward(self, x_j: Tensor, x_i: Tensor) -> Tensor:
        if x_j.shape != x_i.shape:
            raise ConfigError(f"crsatt inputs differ: {x_j.shape} vs {x_i.shape}")
        return ops.sigmoid(self.phi(ops.relu(self.w_g(x_j) + self.w_x(x_i))))


class AdaptiveASPP(Module):
    """Five-branch ASPP; with ``gated`` the four conv branches are
    reweighted by pairwise cross-scale attention before projection."""

    def __init__(
        self,
        in_channels: int,
        branch_channels: int = 256,
        out_channels: int = 256,
        rates: Sequence[int] = (6, 12, 18),
        gated: bool = True,
        rng=None,
    ):
        self.gated = gated
        self.branches = [ConvBNReLU(in_channels, branch_channels, 1, rng=rng)] + [
            ConvBNReLU(in_channels, branch_channels, 3, dilation=r, rng=rng) for r in rates
        ]
        # image-pooling branch: 1x1 spatial, so no batch norm
        self.pool_conv = Conv2d(in_channels, branch_channels, 1, rng=rng)
        n = len(self.branches)
        self.pairs = [(j, i) for i in range(n) for j in range(n) if j != i]
        self.gates = [CrsAtt(branch_channels, rng=rng) for _ in self.pairs] if gated else []
        self.project = ConvBNReLU((n + 1) * branch_channels, out_channels, 1, rng=rng)

    def gate_sums(self, xs: Sequence[Tensor]) -> list[Tensor]:
        sums: list[Tensor | None] = [None] * len(xs)
        for (j, i), gate in zip(self.pairs, self.gates):
            a = gate(xs[j], xs[i])
            sums[i] = a if sums[i] is None else sums[i] + a
        return sums

    def branch_features(self, x: Tensor) -> list[Tensor]:
        return [b(x) for b in self.branches]

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        xs = self.branch_features(x)
        if self.gated:
            xs = [s * xi + xi for s, xi in zip(self.gate_sums(xs), xs)]
        pooled = self.pool_conv(ops.global_avg_pool(x))
        x5 = ops.resize(pooled, h, w, "bilinear")
        return self.project(ops.concat(xs + [x5], axis=1))
