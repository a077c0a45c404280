"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import OracleFailure, UsageError
from .tensor import Tensor, backward, no_grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def grad_check(
    f: Callable[..., Tensor],
    *inputs: np.ndarray,
    params: Sequence[Tensor] = (),
    h: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` receives one ``Tensor`` per array in ``inputs`` and must return a
    scalar. ``params`` are extra leaves (module parameters) that ``f`` reads
    directly; they are perturbed in place. Step size for coordinate x is
    ``h * (1 + |x|)``. ``max_coords`` caps the number of coordinates checked
    per leaf (sampled without replacement from ``seed``).

    Errors are ``|a - b| / max(1, |a|, |b|)``.
    """
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    for p in params:
        if p.dtype != np.float64:
            raise UsageError("grad_check needs float64 parameters; call module.to(np.float64)")
        p.grad = None
    everything = leaves + list(params)

    loss = f(*leaves)
    if loss.data.size != 1:
        raise UsageError(f"grad_check needs a scalar function, got shape {loss.shape}")
    analytic = [g.copy() for g in backward(loss, everything)]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for leaf, grad in zip(everything, analytic):
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for k in coords:
            original = flat[k]
            step = h * (1.0 + abs(original))
            with no_grad():
                flat[k] = original + step
                up = float(f(*leaves).data)
                flat[k] = original - step
                down = float(f(*leaves).data)
            flat[k] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise OracleFailure(f"non-finite function value at coordinate {k} of leaf {leaf.shape}")
            numeric = (up - down) / (2 * step)
            err = float(relative_error(np.float64(grad.reshape(-1)[k]), np.float64(numeric)))
            worst = max(worst, err)
    return worst
