"""Hyperspectral cubes, segmentation pairs, threshold sampling,
normalisation, D4 augmentation and synthetic datasets."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateInputError, ParseError
from .fileio import colorize, default_palette, load_ffpt, read_palette, read_ppm, save_ffpt, write_palette, write_ppm
from .rng import generator

log = logging.getLogger(__name__)


@dataclass
class HyperCube:
    bands: np.ndarray  # p x H x W
    labels: np.ndarray  # H x W, 0 = unlabeled, 1..K classes
    class_names: list[str]

    def __post_init__(self):
        if self.bands.ndim != 3:
            raise ParseError(f"bands must be p x H x W, got shape {self.bands.shape}")
        if self.labels.shape != self.bands.shape[1:]:
            raise ParseError(f"label map {self.labels.shape} does not match bands {self.bands.shape[1:]}")
        k = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > k):
            raise ParseError(f"label values must lie in [0, {k}], found [{self.labels.min()}, {self.labels.max()}]")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_bands(self) -> int:
        return self.bands.shape[0]


@dataclass
class SegSample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    labels: np.ndarray  # H x W

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[1:] != self.labels.shape:
            raise ParseError(f"image {self.image.shape} and labels {self.labels.shape} disagree")


# ----------------------------------------------------------------- sampling


def sample_per_class(n: int, threshold: int) -> int:
    """T samples when a class has at least 2T pixels, else half of them."""
    if n < 1 or threshold < 1:
        raise ConfigError(f"need n >= 1 and T >= 1, got n={n}, T={threshold}")
    return threshold if n >= 2 * threshold else n // 2


@dataclass
class PatchDataset:
    """Train/test centres over one cube; patches are cut on demand from a
    mirror-padded copy of the bands."""

    cube: HyperCube
    patch_size: int
    train: np.ndarray  # M x 3 rows of (row, col, label)
    test: np.ndarray
    _padded: np.ndarray | None = field(default=None, repr=False)

    @property
    def padded(self) -> np.ndarray:
        if self._padded is None:
            r = self.patch_size // 2
            self._padded = np.pad(self.cube.bands, ((0, 0), (r, r), (r, r)), mode="reflect")
        return self._padded

    def split(self, name: str) -> np.ndarray:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        if name == "all":
            return np.concatenate([self.train, self.test])
        raise ConfigError(f"unknown split {name!r}")

    def patches(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """B x p x d x d patches centred on (rows, cols)."""
        return extract_patches(self.padded, rows, cols, self.patch_size)


def extract_patches(padded: np.ndarray, rows, cols, d: int) -> np.ndarray:
    windows = sliding_window_view(padded, (d, d), axis=(1, 2))
    return np.ascontiguousarray(windows[:, np.asarray(rows), np.asarray(cols)].transpose(1, 0, 2, 3))


def build_patch_dataset(cube: HyperCube, d: int, threshold: int, rng: np.random.Generator) -> PatchDataset:
    if d < 1 or d % 2 == 0:
        raise ConfigError(f"patch size must be odd, got {d}")
    flat = cube.labels.reshape(-1)
    width = cube.labels.shape[1]
    train_idx, test_idx = [], []
    for c in range(1, cube.num_classes + 1):
        pixels = np.flatnonzero(flat == c)
        if pixels.size == 0:
            log.warning("class %d (%s) has no labelled pixels; skipped", c, cube.class_names[c - 1])
            continue
        k = sample_per_class(pixels.size, threshold)
        chosen = np.zeros(pixels.size, dtype=bool)
        chosen[rng.choice(pixels.size, size=k, replace=False)] = True
        train_idx.append(pixels[chosen])
        test_idx.append(pixels[~chosen])

    def rows_of(parts):
        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        return np.stack([idx // width, idx % width, flat[idx]], axis=1).astype(np.int64)

    return PatchDataset(cube, d, rows_of(train_idx), rows_of(test_idx))


# ----------------------------------------------------------------- normalisation


def normalize_global(bands: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Zero mean, unit (population) variance over every value of the cube."""
    x = np.asarray(bands, dtype=np.float64)
    mu, sd = x.mean(), x.std()
    if sd < eps:
        raise DegenerateInputError("cube has zero variance; cannot normalise")
    return ((x - mu) / sd).astype(bands.dtype)


def normalize_band_mean(bands: np.ndarray) -> np.ndarray:
    x = np.asarray(bands, dtype=np.float64)
    return (x - x.mean(axis=(1, 2), keepdims=True)).astype(bands.dtype)


# ----------------------------------------------------------------- augmentation


def d4_apply(x: np.ndarray, flip_h: bool, flip_v: bool, quarter_turns: int) -> np.ndarray:
    """Horizontal flip, then vertical flip, then k counter-clockwise quarter
    turns over the last two axes."""
    if quarter_turns % 2 and x.shape[-1] != x.shape[-2]:
        raise ConfigError(f"90/270 degree rotation needs a square patch, got {x.shape[-2:]}")
    if flip_h:
        x = x[..., ::-1]
    if flip_v:
        x = x[..., ::-1, :]
    return np.rot90(x, quarter_turns % 4, axes=(-2, -1))


def d4_invert(x: np.ndarray, flip_h: bool, flip_v: bool, quarter_turns: int) -> np.ndarray:
    x = np.rot90(x, -quarter_turns % 4, axes=(-2, -1))
    if flip_v:
        x = x[..., ::-1, :]
    if flip_h:
        x = x[..., ::-1]
    return x


def random_d4(rng: np.random.Generator) -> tuple[bool, bool, int]:
    return bool(rng.random() < 0.5), bool(rng.random() < 0.5), int(rng.integers(4))


def augment(patch: np.ndarray, rng: np.random.Generator, enabled: bool = True) -> np.ndarray:
    """Random flips (p = 0.5 each) and a uniform rotation from
    {0, 90, 180, 270} degrees; identity when disabled."""
    if not enabled:
        return patch
    return np.ascontiguousarray(d4_apply(patch, *random_d4(rng)))


# ----------------------------------------------------------------- loading


def load_cube(bands_path, labels_path, names_path) -> HyperCube:
    bands = load_ffpt(bands_path)
    if bands.dtype != np.float32:
        raise ParseError(f"{bands_path}: bands must be f32, got {bands.dtype}")
    if bands.ndim != 3:
        raise ParseError(f"{bands_path}: bands must have rank 3 (p x H x W), got {bands.ndim}")
    labels = load_ffpt(labels_path)
    if labels.dtype not in (np.int32, np.uint8):
        raise ParseError(f"{labels_path}: labels must be i32 or u8, got {labels.dtype}")
    if labels.shape != bands.shape[1:]:
        raise ParseError(f"extent mismatch: labels {labels.shape} vs bands {bands.shape[1:]}")
    names = [line.strip() for line in Path(names_path).read_text().splitlines() if line.strip()]
    return HyperCube(bands, labels.astype(np.int32), names)


def save_cube(cube: HyperCube, out_dir, stem: str = "") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}bands.ffpt", out / f"{stem}labels.ffpt", out / f"{stem}names.txt"]
    save_ffpt(paths[0], cube.bands.astype(np.float32))
    save_ffpt(paths[1], cube.labels.astype(np.int32))
    paths[2].write_text("\n".join(cube.class_names) + "\n")
    return paths


def load_seg_pair(image_path, label_path, palette_path) -> SegSample:
    rgb = read_ppm(image_path)
    label_rgb = read_ppm(label_path)
    if rgb.shape != label_rgb.shape:
        raise ParseError(f"image {rgb.shape[:2]} and label map {label_rgb.shape[:2]} differ in size")
    palette = read_palette(palette_path)
    packed = (label_rgb[..., 0].astype(np.int64) << 16) | (label_rgb[..., 1].astype(np.int64) << 8) | label_rgb[..., 2]
    labels = np.full(packed.shape, -1, dtype=np.int32)
    for (r, g, b), cid in palette.items():
        labels[packed == ((r << 16) | (g << 8) | b)] = cid
    if (labels < 0).any():
        y, x = np.argwhere(labels < 0)[0]
        raise ParseError(f"{label_path}: colour {tuple(int(v) for v in label_rgb[y, x])} at ({y}, {x}) not in palette")
    image = rgb.transpose(2, 0, 1).astype(np.float32) / 255.0
    return SegSample(image, labels)


# ----------------------------------------------------------------- synthetic data


def _smooth_prototypes(rng: np.random.Generator, classes: int, bands: int, min_rms: float = 0.5) -> np.ndarray:
    t = np.linspace(0.0, 1.0, bands)
    best, best_gap = None, -1.0
    for _ in range(1000):
        centres = rng.uniform(0, 1, size=(classes, 3))
        widths = rng.uniform(0.1, 0.4, size=(classes, 3))
        amps = rng.uniform(0.3, 1.5, size=(classes, 3))
        offset = rng.uniform(0.0, 0.5, size=(classes, 1))
        curves = offset + (amps[:, :, None] * np.exp(-((t - centres[:, :, None]) ** 2) / (2 * widths[:, :, None] ** 2))).sum(1)
        diff = curves[:, None, :] - curves[None, :, :]
        rms = np.sqrt((diff**2).mean(axis=2))
        gap = rms[~np.eye(classes, dtype=bool)].min() if classes > 1 else np.inf
        if gap > best_gap:
            best, best_gap = curves, gap
        if gap >= min_rms:
            break
    return best


def _voronoi_labels(rng: np.random.Generator, size: int, classes: int, tolerance: float = 0.2) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    best, best_dev = None, np.inf
    target = size * size / classes
    for _ in range(1000):
        seeds = rng.uniform(0, size, size=(classes, 2))
        d2 = (yy[None] - seeds[:, 0, None, None]) ** 2 + (xx[None] - seeds[:, 1, None, None]) ** 2
        labels = d2.argmin(axis=0) + 1
        counts = np.bincount(labels.reshape(-1), minlength=classes + 1)[1:]
        dev = np.abs(counts - target).max() / target
        if dev < best_dev:
            best, best_dev = labels, dev
        if dev <= tolerance:
            break
    return best.astype(np.int32)


def synth_hyper(seed: int, size: int = 32, bands: int = 8, classes: int = 4, sigma: float = 0.1):
    """Voronoi label map; each pixel is its class prototype plus Gaussian
    noise. Returns (cube, prototypes)."""
    rng = generator(seed)
    protos = _smooth_prototypes(rng, classes, bands)
    labels = _voronoi_labels(rng, size, classes)
    cube = protos[labels - 1].transpose(2, 0, 1) + sigma * rng.normal(size=(bands, size, size))
    names = [f"class{k}" for k in range(1, classes + 1)]
    return HyperCube(cube.astype(np.float32), labels, names), protos.astype(np.float32)


def synth_seg(seed: int, size: int = 64, classes: int = 4, rectangles: int = 4, noise: float = 0.05):
    """Coloured rectangles on a class-1 background. Returns
    (rgb uint8 H x W x 3, labels H x W, palette)."""
    rng = generator(seed)
    labels = np.ones((size, size), dtype=np.int32)
    lo, hi = max(size // 6, 2), max(size // 2, 3)
    for i in range(rectangles):
        cls = 2 + i % (classes - 1)
        h, w = rng.integers(lo, hi + 1, size=2)
        r, c = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        labels[r : r + h, c : c + w] = cls
    palette = default_palette(classes)
    colours = colorize(labels, palette).astype(np.float64) / 255.0
    # darken the pure palette colours a little so noise is not clipped away
    image = 0.15 + 0.7 * colours + noise * rng.normal(size=colours.shape)
    rgb = np.clip(np.round(image * 255), 0, 255).astype(np.uint8)
    return rgb, labels, palette


def synth_dataset(kind: str, seed: int, out_dir, **params) -> list[tuple[Path, str]]:
    """Write a synthetic dataset plus a ready-to-run ``config.json``.

    Returns (path, description) pairs for the manifest printout.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind == "hyper":
        size = params.get("size", 32)
        cube, _ = synth_hyper(seed, size, params.get("bands", 8), params.get("classes", 4), params.get("sigma", 0.1))
        paths = save_cube(cube, out)
        written += [
            (paths[0], f"f32 bands {cube.num_bands}x{size}x{size}"),
            (paths[1], f"i32 labels {size}x{size}, K={cube.num_classes}"),
            (paths[2], f"{cube.num_classes} class names"),
        ]
        config = {"task": "classify", "data": {"bands": "bands.ffpt", "labels": "labels.ffpt", "names": "names.txt"}}
    elif kind == "seg":
        classes = params.get("classes", 4)
        rgb, labels, palette = synth_seg(seed, params.get("size", 64), classes, params.get("rectangles", 4), params.get("noise", 0.05))
        write_ppm(out / "image.ppm", rgb)
        write_ppm(out / "labels.ppm", colorize(labels, palette))
        write_palette(out / "palette.txt", {k: v for k, v in palette.items() if v > 0})
        (out / "names.txt").write_text("\n".join(f"class{k}" for k in range(1, classes + 1)) + "\n")
        h, w = labels.shape
        written += [
            (out / "image.ppm", f"P6 image {w}x{h}"),
            (out / "labels.ppm", f"P6 label map {w}x{h}, K={classes}"),
            (out / "palette.txt", f"{classes} palette entries"),
            (out / "names.txt", f"{classes} class names"),
        ]
        config = {
            "task": "segment",
            "data": {"images": ["image.ppm"], "label_images": ["labels.ppm"], "palette": "palette.txt", "names": "names.txt"},
        }
    else:
        raise ConfigError(f"synth kind must be 'hyper' or 'seg', got {kind!r}")
    config["seed"] = seed
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    written.append((out / "config.json", "run config template"))
    return written
