"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

# Small enough that a probe rarely straddles a ReLU kink or max-pool switch,
# large enough that float64 round-off stays near 1e-10 relative.
STEP = 1e-6


def grad_error(fn: Callable[[], Tensor], tensors: dict[str, Tensor], rng: np.random.Generator | None = None,
               max_coords: int | None = 64, step: float = STEP) -> dict[str, float]:
    """Relative error of analytic vs. central-difference gradients.

    ``fn`` must rebuild the scalar loss from the current contents of
    ``tensors`` (64-bit recommended). For each tensor, up to ``max_coords``
    random coordinates are perturbed by ``+-step``. The error for a tensor is
    its worst ``|analytic - numeric|`` divided by the largest gradient
    magnitude seen across all checked tensors. Using the global scale keeps
    structurally zero gradients (a conv bias feeding batch norm in train
    mode) from turning round-off noise into a huge ratio.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
        t.requires_grad = True
    loss = fn()
    if loss.size != 1:
        raise ValueError("gradient check needs a scalar loss")
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in tensors.items()}
    deviations = {}
    scale = 1e-300
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        a = analytic[name].reshape(-1)[coords]
        scale = max(scale, np.abs(numeric).max(), np.abs(a).max())
        deviations[name] = np.abs(a - numeric).max()
    return {name: float(d / scale) for name, d in deviations.items()}


def weighted_sum(y: Tensor, rng: np.random.Generator) -> Tensor:
    """Generic scalar readout ``sum(w * y)`` with fixed random weights."""
    w = Tensor(rng.normal(size=y.shape), dtype=y.dtype)
    return (y * w).sum()
