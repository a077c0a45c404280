"""SGD with momentum and coupled weight decay, Adam, and the poly schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError


def poly_lr(lr_base: float, it: int, max_iter: int, power: float = 0.9) -> float:
    if max_iter <= 0:
        raise ConfigError(f"poly schedule needs max_iter > 0, got {max_iter}")
    if not 0 <= it <= max_iter:
        raise UsageError(f"iteration {it} outside [0, {max_iter}]")
    return lr_base * (1.0 - it / max_iter) ** power


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr_base: float = 2.5e-4
    momentum: float = 0.9  # beta1 for adam
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.lr_base < 0:
            raise ConfigError(f"optimizer.lr must be >= 0, got {self.lr_base}")

    def slots(self, name: str, params: list[np.ndarray]) -> list[np.ndarray]:
        if name not in self.buffers:
            self.buffers[name] = [np.zeros_like(p) for p in params]
        bufs = self.buffers[name]
        if len(bufs) != len(params) or any(b.shape != p.shape for b, p in zip(bufs, params)):
            raise UsageError(f"optimizer buffer '{name}' does not match the parameter shapes")
        return bufs


def _check(params, grads):
    if len(params) != len(grads):
        raise UsageError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise UsageError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState, lr: float) -> None:
    """v <- m v + g + wd p;  p <- p - lr v  (in place)."""
    if state.kind != "sgd":
        raise UsageError(f"sgd_step called with a {state.kind} state")
    _check(params, grads)
    velocity = state.slots("velocity", params)
    for p, g, v in zip(params, grads, velocity):
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p
        p -= (lr * v).astype(p.dtype)
    state.step_count += 1


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState, lr: float) -> None:
    if state.kind != "adam":
        raise UsageError(f"adam_step called with a {state.kind} state")
    _check(params, grads)
    m_buf, v_buf = state.slots("m", params), state.slots("v", params)
    t = state.step_count + 1
    b1, b2 = state.momentum, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for p, g, m, v in zip(params, grads, m_buf, v_buf):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    state.step_count = t


class Optimizer:
    """Binds a parameter list to a state; ``step`` reads ``.grad`` from the
    parameters and applies the schedule."""

    def __init__(self, params, state: OptimizerState, schedule: str = "constant", max_iter: int = 0, power: float = 0.9):
        if schedule not in ("constant", "poly"):
            raise ConfigError(f"optimizer.schedule must be 'constant' or 'poly', got {schedule!r}")
        self.params = list(params)
        self.state = state
        self.schedule = schedule
        self.max_iter = max_iter
        self.power = power

    def current_lr(self) -> float:
        if self.schedule == "poly":
            return poly_lr(self.state.lr_base, min(self.state.step_count, self.max_iter), self.max_iter, self.power)
        return self.state.lr_base

    def step(self) -> None:
        data = [p.data for p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        step = sgd_step if self.state.kind == "sgd" else adam_step
        step(data, grads, self.state, self.current_lr())

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array([self.state.step_count], dtype=np.int32)}
        for name, bufs in self.state.buffers.items():
            for i, b in enumerate(bufs):
                out[f"{name}.{i}"] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.step_count = int(arrays["step_count"][0])
        self.state.buffers = {}
        for key, value in arrays.items():
            if key == "step_count":
                continue
            name, idx = key.rsplit(".", 1)
            self.state.buffers.setdefault(name, [None] * len(self.params))[int(idx)] = value.astype(self.params[int(idx)].dtype)
