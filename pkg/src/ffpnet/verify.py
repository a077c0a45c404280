"""Float64 gradient-check suite over every op, module and network.

Each entry builds its inputs from a seed and returns the max relative
error of backward against central differences. Scalar objectives are
``sum(out * R)`` with a fixed random ``R`` so every output coordinate
contributes with a distinct weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .attention import (
    DAM,
    UAM,
    AdaptiveASPP,
    AttFuse,
    CrsAtt,
    MuAttFusion,
    RegionSelfAttention,
    RePyAtt,
    ResConv,
    region_broadcast,
    region_pool,
)
from .gradcheck import grad_check
from .losses import LossConfig, ba_loss, cross_entropy
from .networks import (
    BackboneConfig,
    HeavyFFPNet,
    LightSpatialFFP,
    NetworkConfig,
    SpatialSpectralFFPNet,
    SpectralFFP,
)
from .nn import Module
from .tensor import Tensor

OP_THRESHOLD = 1e-5
NETWORK_THRESHOLD = 1e-4
# modules contain ReLUs and BatchNorm; a smaller step keeps kinks out of reach
MODULE_STEP = 1e-6


@dataclass(frozen=True)
class Check:
    name: str
    kind: str  # op | module | network
    run: Callable[[int], float]

    @property
    def threshold(self) -> float:
        return NETWORK_THRESHOLD if self.kind == "network" else OP_THRESHOLD


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = rng.normal(size=out.shape)
    return lambda y: ops.sum(y * r)


def _op(fn, *shapes, positive=(), away_from_zero=False, h=1e-4):
    def run(seed):
        rng = np.random.default_rng(seed)
        arrays = []
        for i, s in enumerate(shapes):
            a = rng.normal(size=s)
            if i in positive:
                a = np.abs(a) + 0.5
            if away_from_zero:
                a = np.sign(a) * (np.abs(a) + 0.05)
            arrays.append(a)
        r = rng.normal(size=np.shape(fn(*[Tensor(a) for a in arrays]).data))
        return grad_check(lambda *xs: ops.sum(fn(*xs) * r), *arrays, h=h)

    return run


def _module(build, *shapes, call=None, max_coords=None, h=MODULE_STEP):
    """``build(rng)`` returns a module; ``call(module, *tensors)`` runs it."""
    call = call or (lambda m, *xs: m(*xs))

    def run(seed):
        rng = np.random.default_rng(seed)
        m: Module = build(rng).to(np.float64)
        m.train()
        arrays = [rng.normal(size=s) for s in shapes]
        out = call(m, *[Tensor(a) for a in arrays])
        r = rng.normal(size=out.shape)
        return grad_check(
            lambda *xs: ops.sum(call(m, *xs) * r), *arrays, params=m.parameters(), h=h, max_coords=max_coords, seed=seed
        )

    return run


def _bn(x):
    c = x.shape[1]
    return ops.batch_norm(x, Tensor(np.linspace(0.5, 1.5, c)), Tensor(np.linspace(-0.2, 0.2, c)), np.zeros(c), np.ones(c), True)


def _ce(x):
    labels = np.array([[1, 2, 0], [3, 3, 1]])
    return cross_entropy(x, labels)


def _ba(x):
    labels = np.ones((2, 6, 6), dtype=int)
    labels[:, :, 3:] = 2
    labels[1, :2] = 3
    labels[0, 0, 0] = 0
    return ba_loss(x, labels, LossConfig("ba", 1, 2.0))


def _dropout(x):
    return ops.dropout(x, 0.3, True, np.random.default_rng(123))


def tiny_heavy_config(num_classes: int = 3) -> NetworkConfig:
    backbone = BackboneConfig("residual", (1, 1, 1, 1), (8, 8, 16, 16), 4)
    return NetworkConfig(backbone=backbone, fusion_width=4, num_classes=num_classes, aspp_rates=(1, 2, 3))


def tiny_classifier_config(bands: int = 4, num_classes: int = 3, patch_size: int = 5) -> NetworkConfig:
    backbone = BackboneConfig("vgg", (1, 1, 1, 1), (4, 4, 8, 8, 8), 4, (1, 1, 1, 1, 1), bands)
    return NetworkConfig(
        backbone=backbone, fusion_width=4, num_classes=num_classes, patch_size=patch_size,
        fc_width=6, feature_width=6, spectral_widths=(6, 4, 4), dropout_p=0.5,
    )


def _classifier_call(m, x):
    # fresh generator on every call so all perturbed evaluations share one mask
    m.dropout.rng = np.random.default_rng(7)
    return m(x)


CHECKS: list[Check] = [
    Check("add", "op", _op(lambda a, b: a + b, (3, 4), (4,))),
    Check("sub", "op", _op(lambda a, b: a - b, (3, 1), (3, 4))),
    Check("mul", "op", _op(lambda a, b: a * b, (2, 3, 4), (3, 1))),
    Check("div", "op", _op(lambda a, b: a / b, (3, 4), (3, 4), positive=(1,))),
    Check("exp", "op", _op(ops.exp, (3, 5))),
    Check("log", "op", _op(ops.log, (3, 5), positive=(0,))),
    Check("relu", "op", _op(ops.relu, (4, 5), away_from_zero=True)),
    Check("sigmoid", "op", _op(ops.sigmoid, (4, 5))),
    Check("softmax", "op", _op(lambda a: ops.softmax(a, axis=1), (3, 5))),
    Check("log_softmax", "op", _op(lambda a: ops.log_softmax(a, axis=-1), (3, 5))),
    Check("sum", "op", _op(lambda a: ops.sum(a, axis=1, keepdims=True), (3, 4, 2))),
    Check("mean", "op", _op(lambda a: ops.mean(a, axis=(0, 2)), (3, 4, 2))),
    Check("reshape", "op", _op(lambda a: ops.reshape(a, 6, 4), (2, 3, 4))),
    Check("transpose", "op", _op(lambda a: ops.transpose(a, (2, 0, 1)), (2, 3, 4))),
    Check("getitem", "op", _op(lambda a: ops.getitem(a, (slice(None), np.array([0, 2, 2]))), (3, 4))),
    Check("concat", "op", _op(lambda a, b: ops.concat([a, b], axis=1), (2, 3, 2), (2, 1, 2))),
    Check("matmul", "op", _op(ops.matmul, (2, 3, 4), (4, 5))),
    Check("linear", "op", _op(ops.linear, (3, 4), (5, 4), (5,))),
    Check("conv2d", "op", _op(lambda x, w, b: ops.conv2d(x, w, b, 1, 1, 1), (2, 3, 5, 5), (4, 3, 3, 3), (4,))),
    Check("conv2d_strided", "op", _op(lambda x, w: ops.conv2d(x, w, None, 2, 1, 1), (1, 2, 7, 6), (3, 2, 3, 3))),
    Check("conv2d_dilated", "op", _op(lambda x, w: ops.conv2d(x, w, None, 1, 2, 2), (1, 2, 6, 6), (2, 2, 3, 3))),
    Check("maxpool2d", "op", _op(lambda x: ops.maxpool2d(x, 2), (2, 2, 6, 5))),
    Check("global_avg_pool", "op", _op(ops.global_avg_pool, (2, 3, 4, 5))),
    Check("resize_bilinear", "op", _op(lambda x: ops.resize(x, 7, 9, "bilinear"), (1, 2, 4, 5))),
    Check("resize_nearest", "op", _op(lambda x: ops.resize(x, 8, 3, "nearest"), (1, 2, 4, 5))),
    Check("batch_norm", "op", _op(_bn, (3, 4, 3, 3))),
    Check("dropout", "op", _op(_dropout, (4, 6))),
    Check("region_pool", "op", _op(lambda x: region_pool(x, 3), (2, 3, 7, 8))),
    Check("region_broadcast", "op", _op(lambda z: region_broadcast(z, 3, 7, 8), (2, 3, 9))),
    Check("cross_entropy", "op", _op(_ce, (2, 4, 3))),
    Check("ba_loss", "op", _op(_ba, (2, 3, 6, 6))),
    Check("resconv", "module", _module(lambda r: ResConv(3, 4, rng=r), (2, 3, 6, 6))),
    Check("region_self_attention", "module", _module(lambda r: RegionSelfAttention(4, rng=r), (2, 4, 5))),
    Check("repyatt", "module", _module(lambda r: RePyAtt(3, ("pixel", 4, 2, 1), rng=r), (2, 3, 8, 8))),
    Check("dam", "module", _module(lambda r: DAM([3, 2], 4, rng=r), (2, 3, 8, 8), (2, 2, 4, 4), (2, 5, 4, 4),
                                   call=lambda m, a, b, like: m([a, b], like))),
    Check("uam", "module", _module(lambda r: UAM([3, 2], 4, rng=r), (2, 3, 2, 2), (2, 2, 1, 1), (2, 5, 4, 4),
                                   call=lambda m, a, b, like: m([a, b], like))),
    Check("attfuse", "module", _module(lambda r: AttFuse(3, rng=r), (2, 3, 4, 4), (2, 3, 4, 4))),
    Check("muattfusion", "module", _module(
        lambda r: MuAttFusion([3, 3, 3], [2, 4, 8], 1, 4, "repyatt", ("pixel", 2, 1), rng=r),
        (2, 3, 8, 8), (2, 3, 4, 4), (2, 3, 2, 2), call=lambda m, *xs: m(list(xs)))),
    Check("muattfusion_direct", "module", _module(
        lambda r: MuAttFusion([3, 2, 2], [1, 1, 1], 2, 2, "direct", rng=r),
        (2, 3, 3, 3), (2, 2, 3, 3), (2, 2, 3, 3), call=lambda m, *xs: m(list(xs)))),
    Check("crsatt", "module", _module(lambda r: CrsAtt(4, rng=r), (2, 4, 3, 3), (2, 4, 3, 3))),
    Check("adaptive_aspp", "module", _module(lambda r: AdaptiveASPP(3, 4, 4, (1, 2, 3), rng=r), (2, 3, 5, 5))),
    Check("plain_aspp", "module", _module(lambda r: AdaptiveASPP(3, 4, 4, (1, 2, 3), gated=False, rng=r), (2, 3, 5, 5))),
    Check("heavy_ffpnet", "network", _module(lambda r: HeavyFFPNet(tiny_heavy_config(), r), (1, 3, 32, 32), max_coords=2)),
    Check("light_spatial_ffp", "network", _module(
        lambda r: LightSpatialFFP(tiny_classifier_config(), r), (3, 4, 5, 5), max_coords=3)),
    Check("spectral_ffp", "network", _module(lambda r: SpectralFFP(tiny_classifier_config(), r), (3, 4, 5, 5), max_coords=3)),
    Check("spatial_spectral_ffpnet", "network", _module(
        lambda r: SpatialSpectralFFPNet(tiny_classifier_config(), r), (3, 4, 5, 5), call=_classifier_call, max_coords=2)),
]


def select(only: str | None = None) -> list[Check]:
    """Checks whose name contains any of the comma-separated filters."""
    if not only:
        return list(CHECKS)
    keys = [k.strip() for k in only.split(",") if k.strip()]
    return [c for c in CHECKS if any(k == c.name or k in c.name for k in keys)]


def run_suite(only: str | None = None, seed: int = 0, report: Callable[[str], None] = print) -> tuple[bool, list[tuple[str, float, float]]]:
    rows = []
    for check in select(only):
        err = check.run(seed)
        ok = err <= check.threshold
        rows.append((check.name, err, check.threshold))
        report(f"{check.name:<26} {check.kind:<8} max rel err {err:.3e}  (<= {check.threshold:.0e})  {'PASS' if ok else 'FAIL'}")
    return all(e <= t for _, e, t in rows), rows
