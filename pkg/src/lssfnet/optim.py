"""Adam and the early-stopping monitor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.t < 0 or self.lr <= 0 or self.eps <= 0:
            raise ValueError("Adam needs t >= 0, lr > 0 and eps > 0")

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Missing or ``None`` gradients count as zero. Non-finite gradients abort the
    step before anything is modified.
    """
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}; step {state.t + 1} aborted")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype, copy=False)
    return state


@dataclass
class EarlyStopState:
    """Patience counter that only starts counting at ``start_epoch``.

    The first counted epoch sets the reference value, so with a flat metric,
    ``start_epoch=10`` and ``patience=9`` the stop fires at epoch 19.
    """

    monitor: str = "jaccard"
    patience: int = 9
    start_epoch: int = 10
    min_delta: float = 0.0
    best: float | None = None
    best_epoch: int | None = None
    epochs_since_improve: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.monitor not in ("jaccard", "val_loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")

    def improved(self, metric: float) -> bool:
        if self.best is None:
            return True
        if self.monitor == "jaccard":
            return metric > self.best + self.min_delta
        return metric < self.best - self.min_delta


def early_stop_update(state: EarlyStopState, epoch: int, metric: float) -> tuple[EarlyStopState, bool]:
    if epoch < state.start_epoch:
        return state, False
    if state.improved(metric):
        state.best = metric
        state.best_epoch = epoch
        state.epochs_since_improve = 0
    else:
        state.epochs_since_improve += 1
    return state, state.epochs_since_improve >= state.patience
