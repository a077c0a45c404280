"""End-to-end train / eval / predict driven by a ``RunConfig``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import RunConfig
from .data import (
    HyperCube,
    PatchDataset,
    SegSample,
    build_patch_dataset,
    load_cube,
    load_seg_pair,
    normalize_band_mean,
    normalize_global,
)
from .errors import ConfigError
from .fileio import colorize, default_palette, read_palette, write_ppm
from .metrics import ConfusionMatrix, emit_reports, erode_boundary_mask, metrics_record
from .networks import NetworkConfig, build_network
from .nn import Module
from .optim import Optimizer, OptimizerState
from .tensor import Tensor, no_grad
from .training import PatchBatcher, SegBatcher, load_checkpoint, load_pretrained, save_checkpoint, train_loop


@dataclass
class TaskData:
    task: str
    class_names: list[str]
    palette: dict
    patches: PatchDataset | None = None
    samples: list[SegSample] | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _names(path: str, fallback: int) -> list[str]:
    if path:
        return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    return [f"class{k}" for k in range(1, fallback + 1)]


def prepare_cube(cube: HyperCube, normalize: bool) -> HyperCube:
    if not normalize:
        return cube
    return HyperCube(normalize_band_mean(normalize_global(cube.bands)), cube.labels, cube.class_names)


def load_task_data(cfg: RunConfig) -> TaskData:
    streams = rngmod.split(cfg.seed)
    if cfg.task == "classify":
        cube = prepare_cube(load_cube(cfg.data.bands, cfg.data.labels, cfg.data.names), cfg.normalize)
        ds = build_patch_dataset(cube, cfg.patch_size, cfg.threshold, streams["sampler"])
        return TaskData("classify", cube.class_names, default_palette(cube.num_classes), patches=ds)
    palette = read_palette(cfg.data.palette)
    samples = [load_seg_pair(i, l, cfg.data.palette) for i, l in zip(cfg.data.images, cfg.data.label_images)]
    names = _names(cfg.data.names, max(palette.values()))
    return TaskData("segment", names, palette, samples=samples)


def network_config(cfg: RunConfig, data: TaskData) -> NetworkConfig:
    net = cfg.network
    overrides = dict(region_pyramid=tuple(net.region_pyramid), aspp=net.aspp, dropout_p=net.dropout_p)
    if net.fusion_width:
        overrides["fusion_width"] = net.fusion_width
    if cfg.task == "segment":
        return NetworkConfig.heavy(data.num_classes, net.full_width, **overrides)
    bands = data.patches.cube.num_bands
    return NetworkConfig.spatial_spectral(bands, data.num_classes, cfg.patch_size, net.full_width, **overrides)


def build_model(cfg: RunConfig, data: TaskData) -> Module:
    streams = rngmod.split(cfg.seed)
    model = build_network(cfg.task, network_config(cfg, data), streams["init"], streams["dropout"])
    if cfg.network.pretrained:
        load_pretrained(model, cfg.network.pretrained)
    return model


def build_optimizer(cfg: RunConfig, model: Module, steps_per_epoch: int) -> Optimizer:
    o = cfg.optimizer
    state = OptimizerState(o.kind, o.lr, o.momentum, o.beta2, o.eps, o.weight_decay)
    max_iter = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        max_iter = min(max_iter, cfg.max_steps) if max_iter else cfg.max_steps
    schedule = o.schedule if max_iter > 0 else "constant"
    return Optimizer(model.parameters(), state, schedule, max_iter, o.power)


# ----------------------------------------------------------------- inference


def predict_patches(model: Module, ds: PatchDataset, rows: np.ndarray, cols: np.ndarray, batch: int = 256) -> np.ndarray:
    model.eval()
    out = np.zeros(len(rows), dtype=np.int32)
    with no_grad():
        for i in range(0, len(rows), batch):
            x = ds.patches(rows[i : i + batch], cols[i : i + batch])
            out[i : i + batch] = model(Tensor(x)).data.argmax(axis=1) + 1
    return out


def predict_cube_map(model: Module, ds: PatchDataset, labelled_only: bool = False) -> np.ndarray:
    """Slide the patch classifier over every pixel (0 where skipped)."""
    h, w = ds.cube.labels.shape
    rr, cc = np.mgrid[0:h, 0:w]
    sel = ds.cube.labels.reshape(-1) != 0 if labelled_only else np.ones(h * w, dtype=bool)
    out = np.zeros(h * w, dtype=np.int32)
    out[sel] = predict_patches(model, ds, rr.reshape(-1)[sel], cc.reshape(-1)[sel])
    return out.reshape(h, w)


def predict_segmentation(model: Module, image: np.ndarray) -> np.ndarray:
    model.eval()
    with no_grad():
        return model(Tensor(image[None].astype(np.float32))).data[0].argmax(axis=0).astype(np.int32) + 1


def evaluate(cfg: RunConfig, model: Module, data: TaskData, split: str = "test", erode: int | None = None):
    """Confusion matrix on ``split`` (classify) or on all samples with the
    eroded-boundary mask (segment)."""
    cm = ConfusionMatrix.empty(data.num_classes)
    if data.task == "classify":
        rows = data.patches.split(split)
        pred = predict_patches(model, data.patches, rows[:, 0], rows[:, 1])
        cm.accumulate(rows[:, 2], pred)
    else:
        r = cfg.erode if erode is None else erode
        for s in data.samples:
            cm.accumulate(s.labels, predict_segmentation(model, s.image), erode_boundary_mask(s.labels, r))
    return cm


def _eval_scalars(cm: ConfusionMatrix, names) -> dict:
    if cm.total == 0:
        return {"valid_pixels": 0}
    rec = metrics_record(cm, names)
    return {k: rec[k] for k in ("oa", "aa", "kappa", "mean_f1", "miou")} | {"valid_pixels": cm.total}


# ----------------------------------------------------------------- commands


def run_train(cfg: RunConfig, out_dir) -> dict:
    data = load_task_data(cfg)
    model = build_model(cfg, data)
    streams = rngmod.split(cfg.seed)
    if data.task == "classify":
        batcher = PatchBatcher(data.patches, "train", streams["augment"] if cfg.augment else None)
    else:
        batcher = SegBatcher(data.samples)
    n = len(batcher)
    steps_per_epoch = max(1, -(-n // cfg.batch_size) - (1 if n > 1 and n % cfg.batch_size == 1 else 0))
    opt = build_optimizer(cfg, model, steps_per_epoch)
    split = "test" if data.task == "classify" else "all"

    def evaluate_fn():
        return _eval_scalars(evaluate(cfg, model, data, split), data.class_names)

    report = train_loop(
        model, batcher, opt, cfg.loss.build(), cfg.epochs, cfg.batch_size, streams["sampler"].spawn(1)[0],
        evaluate_fn, cfg.eval_every, cfg.max_steps,
    )
    report["config"] = cfg.to_dict()
    report["num_parameters"] = model.num_parameters()
    if data.task == "classify":
        report["train_size"] = int(len(data.patches.train))
        report["test_size"] = int(len(data.patches.test))
    save_checkpoint(out_dir, model, opt, report)
    return report


def restore(cfg: RunConfig, ckpt_dir) -> tuple[Module, TaskData]:
    data = load_task_data(cfg)
    model = build_model(cfg, data)
    load_checkpoint(ckpt_dir, model)
    model.eval()
    return model, data


def run_eval(cfg: RunConfig, ckpt_dir, out_dir, erode: int | None = None, split: str = "test") -> dict:
    model, data = restore(cfg, ckpt_dir)
    if data.task == "segment":
        split = "all"
    cm = evaluate(cfg, model, data, split, erode)
    if cm.total == 0:
        raise ConfigError("erode: no valid pixels remain for evaluation")
    if data.task == "classify":
        classmap = predict_cube_map(model, data.patches)
    else:
        classmap = predict_segmentation(model, data.samples[0].image)
    record = emit_reports(cm, data.class_names, out_dir, classmap, data.palette)
    record["valid_pixels"] = cm.total
    return record


def run_predict(cfg: RunConfig, ckpt_dir, out_dir, input_path: str | None = None, labelled_only: bool = False) -> np.ndarray:
    """Class map for the configured cube/image, or for ``input_path``
    (an FFPT cube for classify, a PPM for segment)."""
    model, data = restore(cfg, ckpt_dir)
    if data.task == "classify":
        ds = data.patches
        if input_path:
            from .fileio import load_ffpt

            bands = load_ffpt(input_path, np.float32)
            expect = ds.cube.num_bands
            if bands.ndim != 3 or bands.shape[0] != expect:
                raise ConfigError(f"input: expected {expect} x H x W bands, got {bands.shape}")
            cube = prepare_cube(HyperCube(bands, np.zeros(bands.shape[1:], np.int32), data.class_names), cfg.normalize)
            ds = PatchDataset(cube, cfg.patch_size, ds.train[:0], ds.test[:0])
            labelled_only = False
        classmap = predict_cube_map(model, ds, labelled_only)
    else:
        if input_path:
            from .fileio import read_ppm

            image = read_ppm(input_path).transpose(2, 0, 1).astype(np.float32) / 255.0
        else:
            image = data.samples[0].image
        h, w = image.shape[1:]
        if h % 16 or w % 16:
            raise ConfigError(f"input: extents must be divisible by 16, got {h}x{w}")
        classmap = predict_segmentation(model, image)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "classmap.ppm", colorize(classmap, data.palette))
    return classmap
