"""Training losses: pixel-mean binary cross-entropy and soft Jaccard."""
from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .tensor import Tensor, as_tensor


@dataclass
class LossConfig:
    bce_weight: float = 1.0
    jaccard_weight: float = 1.0
    smooth_eps: float = 1.0
    prob_clamp: float = 1e-7

    def __post_init__(self):
        if self.bce_weight < 0 or self.jaccard_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.bce_weight == 0 and self.jaccard_weight == 0:
            raise ValueError("loss weights must not both be zero")
        if self.smooth_eps <= 0 or not 0 < self.prob_clamp < 0.5:
            raise ValueError("smooth_eps must be positive and prob_clamp in (0, 0.5)")


def _check(p: Tensor, g: Tensor) -> None:
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {g.shape}")


def bce_loss(p, g, prob_clamp: float = 1e-7) -> Tensor:
    """Mean over all pixels of ``-[g ln p + (1 - g) ln(1 - p)]``."""
    p = as_tensor(p)
    g = as_tensor(g, dtype=p.dtype)
    _check(p, g)
    pc = ops.clip(p, prob_clamp, 1.0 - prob_clamp)
    ll = g * ops.log(pc) + (1.0 - g) * ops.log(1.0 - pc)
    return -ll.mean()


def jaccard_loss(p, g, eps: float = 1.0) -> Tensor:
    """``1 - (sum pg + eps) / (sum p + sum g - sum pg + eps)`` on soft predictions."""
    p = as_tensor(p)
    g = as_tensor(g, dtype=p.dtype)
    _check(p, g)
    inter = (p * g).sum()
    union = p.sum() + g.sum() - inter
    return 1.0 - (inter + eps) / (union + eps)


def combined_loss(p, g, cfg: LossConfig | None = None, parts: dict | None = None) -> Tensor:
    """Weighted BCE + Jaccard. When ``parts`` is given the two terms are stored
    there as floats."""
    cfg = cfg or LossConfig()
    p = as_tensor(p)
    bce = bce_loss(p, g, cfg.prob_clamp)
    jac = jaccard_loss(p, g, cfg.smooth_eps)
    if parts is not None:
        parts["bce"] = bce.item()
        parts["jaccard"] = jac.item()
    if cfg.jaccard_weight == 0:
        return bce * cfg.bce_weight
    if cfg.bce_weight == 0:
        return jac * cfg.jaccard_weight
    return bce * cfg.bce_weight + jac * cfg.jaccard_weight
