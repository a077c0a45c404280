"""Parameter counts of the three networks at the published channel widths.

Counts every trainable parameter. The classifier modules are built for a
200-band, 16-class cube with 29 x 29 patches; pass other values to see how
the spectral module scales with band count and patch size.

    python3 scripts/parameter_counts.py --bands 200 --patch-size 29
"""

import argparse

import numpy as np

from ffpnet.networks import HeavyFFPNet, LightSpatialFFP, NetworkConfig, SpectralFFP

TARGETS = {"heavy": 78.8e6, "light spatial": 24.8e6, "spectral": 0.20e6}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--bands", type=int, default=200)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=29)
    p.add_argument("--seg-classes", type=int, default=6)
    args = p.parse_args()

    rng = np.random.default_rng(0)
    cls_cfg = NetworkConfig.spatial_spectral(args.bands, args.classes, args.patch_size, full=True)
    counts = {
        "heavy": HeavyFFPNet(NetworkConfig.heavy(args.seg_classes, full=True), rng).num_parameters(),
        "light spatial": LightSpatialFFP(cls_cfg, rng).num_parameters(),
        "spectral": SpectralFFP(cls_cfg, rng).num_parameters(),
    }
    print(f"{'network':<16}{'params':>14}{'reported':>12}{'rel diff':>10}")
    for name, n in counts.items():
        target = TARGETS[name]
        print(f"{name:<16}{n:>14,}{target / 1e6:>11.2f}M{(n - target) / target:>+10.1%}")


if __name__ == "__main__":
    main()
