"""Mini-batch training loop, batchers and checkpoint files."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .data import PatchDataset, SegSample, augment
from .errors import ConfigError, NumericalError, UsageError
from .fileio import read_manifest, save_tensor_dir
from .losses import LossConfig, compute_loss
from .nn import Module
from .optim import Optimizer
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


class PatchBatcher:
    """Patches from one split of a ``PatchDataset``; optional D4 augmentation."""

    def __init__(self, dataset: PatchDataset, split: str = "train", augment_rng: np.random.Generator | None = None):
        self.dataset = dataset
        self.rows = dataset.split(split)
        self.augment_rng = augment_rng

    def __len__(self) -> int:
        return len(self.rows)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sel = self.rows[idx]
        x = self.dataset.patches(sel[:, 0], sel[:, 1])
        if self.augment_rng is not None:
            x = np.stack([augment(p, self.augment_rng) for p in x])
        return x.astype(np.float32), sel[:, 2]


class SegBatcher:
    def __init__(self, samples: list[SegSample]):
        if not samples:
            raise UsageError("no segmentation samples")
        shapes = {s.image.shape for s in samples}
        if len(shapes) > 1:
            raise UsageError(f"segmentation samples must share extents, got {sorted(shapes)}")
        self.samples = samples

    def __len__(self) -> int:
        return len(self.samples)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([self.samples[i].image for i in idx]).astype(np.float32)
        y = np.stack([self.samples[i].labels for i in idx])
        return x, y


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle split into batches; a trailing batch of one sample is
    dropped when the set holds more than one (BatchNorm needs two)."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if n > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def train_loop(
    model: Module,
    batcher,
    optimizer: Optimizer,
    loss_cfg: LossConfig,
    epochs: int,
    batch_size: int,
    shuffle_rng: np.random.Generator,
    evaluate: Callable[[], dict] | None = None,
    eval_every: int = 1,
    max_steps: int = 0,
) -> dict:
    """Run ``epochs`` passes (or stop after ``max_steps`` optimizer steps)
    and return the report: initial evaluation plus one record per epoch."""
    if len(batcher) == 0:
        raise UsageError("training set is empty")
    report = {"initial": evaluate() if evaluate else None, "epochs": [], "steps": 0}
    steps = 0
    for epoch in range(1, epochs + 1):
        model.train()
        losses = []
        for idx in epoch_batches(len(batcher), batch_size, shuffle_rng):
            x, y = batcher.batch(idx)
            lr = optimizer.current_lr()
            loss = compute_loss(model(Tensor(x)), y, loss_cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {steps + 1} (lr {lr:.3g})")
            optimizer.zero_grad()
            backward(loss)
            optimizer.step()
            losses.append(value)
            steps += 1
            if max_steps and steps >= max_steps:
                break
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "steps": steps, "lr": optimizer.current_lr()}
        last = epoch == epochs or (max_steps and steps >= max_steps)
        if evaluate and eval_every and (epoch % eval_every == 0 or last):
            record["eval"] = evaluate()
        log.info("epoch %d loss %.5f", epoch, record["loss"])
        report["epochs"].append(record)
        if max_steps and steps >= max_steps:
            break
    report["steps"] = steps
    model.eval()
    return report


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(out_dir, model: Module, optimizer: Optimizer | None, report: dict) -> Path:
    """``params/*.ffpt`` + ``optimizer/*.ffpt`` + ``manifest.txt`` + ``report.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: list[str] = []
    save_tensor_dir(out, model.state_dict(), "params", manifest)
    if optimizer is not None:
        arrays = {f"optimizer.{k}": v for k, v in optimizer.state_arrays().items()}
        save_tensor_dir(out, arrays, "optimizer", manifest)
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(ckpt_dir, model: Module, optimizer: Optimizer | None = None) -> dict:
    """Restore parameters (and optimizer state); returns the saved report."""
    arrays = read_manifest(ckpt_dir)
    params = {k: v for k, v in arrays.items() if not k.startswith("optimizer.")}
    model.load_state_dict(params, strict=True)
    if optimizer is not None:
        opt = {k[len("optimizer.") :]: v for k, v in arrays.items() if k.startswith("optimizer.")}
        if opt:
            optimizer.load_state_arrays(opt)
    report_path = Path(ckpt_dir) / "report.json"
    return json.loads(report_path.read_text()) if report_path.exists() else {}


def load_pretrained(model: Module, param_dir) -> list[str]:
    """Non-strict import of a parameter directory. A 3-channel first conv is
    replicated across the model's input channels. Returns the loaded names."""
    from .networks import init_channel_replicate

    arrays = read_manifest(param_dir)
    own = dict(model.named_parameters())
    own.update({k: v for k, v in model.named_buffers()})
    loaded = {}
    for name, value in arrays.items():
        if name not in own:
            continue
        shape = own[name].shape
        if value.shape != shape and value.ndim == 4 and value.shape[1] == 3 and value.shape[0] == shape[0]:
            value = init_channel_replicate(value, shape[1])
        if value.shape != shape:
            raise ConfigError(f"pretrained {name}: expected shape {shape}, got {value.shape}")
        loaded[name] = value
    model.load_state_dict(loaded, strict=False)
    return sorted(loaded)
