"""Run configuration: one JSON document, strict keys, task-dependent defaults.

Relative data paths are resolved against the directory holding the config
file, so the parsed config (and its echo in ``report.json``) only carries
absolute paths.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .attention import RegionPyramidConfig
from .errors import ConfigError
from .losses import LossConfig


@dataclass
class DataConfig:
    # classification cube
    bands: str = ""
    labels: str = ""
    # segmentation pairs
    images: list[str] = field(default_factory=list)
    label_images: list[str] = field(default_factory=list)
    palette: str = ""
    # both
    names: str = ""


@dataclass
class NetworkSettings:
    full_width: bool = False
    fusion_width: int = 0  # 0 -> width implied by full_width
    region_pyramid: list = field(default_factory=lambda: ["pixel", 4, 2, 1])
    aspp: str = "adaptive"
    dropout_p: float = 0.5
    pretrained: str = ""  # optional parameter directory with a manifest.txt


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "constant"
    power: float = 0.9


@dataclass
class LossSettings:
    kind: str = "ce"
    ba_radius: int = 2
    ba_weight: float = 2.0
    ignore_label: int = 0

    def build(self) -> LossConfig:
        return LossConfig(self.kind, self.ba_radius, self.ba_weight, self.ignore_label)


@dataclass
class RunConfig:
    task: str = "classify"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkSettings = field(default_factory=NetworkSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    patch_size: int = 9
    threshold: int = 100
    epochs: int = 200
    batch_size: int = 24
    augment: bool = False
    normalize: bool = True
    erode: int = 3
    eval_every: int = 1
    max_steps: int = 0  # 0 -> no cap on optimizer steps
    out: str = ""

    def validate(self) -> "RunConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(self.task in ("classify", "segment"), "task", f"must be 'classify' or 'segment', got {self.task!r}")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.eval_every >= 0, "eval_every", "must be >= 0")
        need(self.max_steps >= 0, "max_steps", "must be >= 0")
        need(self.erode >= 0, "erode", "must be >= 0")
        need(self.threshold >= 1, "threshold", "must be >= 1")
        need(self.patch_size >= 5 and self.patch_size % 2 == 1, "patch_size", "must be odd and >= 5")
        need(self.optimizer.kind in ("sgd", "adam"), "optimizer.kind", "must be 'sgd' or 'adam'")
        need(self.optimizer.lr >= 0, "optimizer.lr", "must be >= 0")
        need(0 <= self.optimizer.momentum < 1, "optimizer.momentum", "must be in [0, 1)")
        need(0 <= self.optimizer.beta2 < 1, "optimizer.beta2", "must be in [0, 1)")
        need(self.optimizer.eps > 0, "optimizer.eps", "must be > 0")
        need(self.optimizer.weight_decay >= 0, "optimizer.weight_decay", "must be >= 0")
        need(self.optimizer.schedule in ("constant", "poly"), "optimizer.schedule", "must be 'constant' or 'poly'")
        need(self.network.aspp in ("adaptive", "plain"), "network.aspp", "must be 'adaptive' or 'plain'")
        need(0 <= self.network.dropout_p < 1, "network.dropout_p", "must be in [0, 1)")
        need(self.network.fusion_width >= 0, "network.fusion_width", "must be >= 0")
        try:
            RegionPyramidConfig(tuple(self.network.region_pyramid))
        except ConfigError as exc:
            raise ConfigError(f"network.region_pyramid: {exc}") from exc
        try:
            self.loss.build()
        except ConfigError as exc:
            raise ConfigError(f"loss: {exc}") from exc
        if self.task == "classify":
            for key in ("bands", "labels", "names"):
                need(getattr(self.data, key), f"data.{key}", "required for the classify task")
        else:
            need(self.data.images, "data.images", "required for the segment task")
            need(len(self.data.images) == len(self.data.label_images), "data.label_images", "must pair with data.images")
            need(self.data.palette, "data.palette", "required for the segment task")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def task_defaults(task: str) -> RunConfig:
    if task == "classify":
        return RunConfig(task="classify")
    if task == "segment":
        return RunConfig(
            task="segment",
            optimizer=OptimizerConfig(kind="sgd", lr=2.5e-4, momentum=0.9, weight_decay=5e-4, schedule="poly", power=0.9),
            loss=LossSettings(kind="ba"),
            epochs=10,
            batch_size=4,
        )
    raise ConfigError(f"task: must be 'classify' or 'segment', got {task!r}")


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        raise AssertionError("handled by _merge")
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (item,) = typing.get_args(hint) or (None,)
        return [v if item is None else _coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{path}: unsupported type {hint}")


def _merge(obj, values: dict, prefix: str = ""):
    if not isinstance(values, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object")
    hints = typing.get_type_hints(type(obj))
    known = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")
    for key, value in values.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            _merge(getattr(obj, key), value, f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(value, hint, f"{prefix}{key}"))
    return obj


def _resolve(path: str, base: Path) -> str:
    if not path:
        return path
    p = Path(path)
    return str(p if p.is_absolute() else (base / p).resolve())


def parse_config(values: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(values, dict):
        raise ConfigError("config: expected a JSON object")
    task = values.get("task", "classify")
    if not isinstance(task, str):
        raise ConfigError("task: expected a string")
    cfg = _merge(task_defaults(task), values)
    base = Path(base_dir)
    d = cfg.data
    d.bands, d.labels, d.palette, d.names = (_resolve(x, base) for x in (d.bands, d.labels, d.palette, d.names))
    d.images = [_resolve(x, base) for x in d.images]
    d.label_images = [_resolve(x, base) for x in d.label_images]
    cfg.network.pretrained = _resolve(cfg.network.pretrained, base)
    return cfg.validate()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        values = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(values, path.parent)
