"""Focal modulation block and the conformer-style skip refinement built on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .params import ConvParams, he_normal, ones, zeros
from .tensor import Tensor


@dataclass
class FmbParams:
    query_proj: ConvParams
    context_proj: ConvParams  # C -> C + L + 1: context then gates
    level_kernels: list[Tensor]  # depthwise [k, k, C], increasing k
    modulator_proj: ConvParams
    out_proj: ConvParams

    @property
    def levels(self) -> int:
        return len(self.level_kernels)

    @classmethod
    def init(cls, rng, channels: int, kernel_sizes=(3, 5), dtype=np.float32) -> "FmbParams":
        if len(kernel_sizes) < 1:
            raise ValueError("focal modulation needs at least one level")
        levels = len(kernel_sizes)
        return cls(
            ConvParams.init(rng, 1, channels, channels, dtype),
            ConvParams.init(rng, 1, channels, channels + levels + 1, dtype),
            [he_normal(rng, (k, k, channels), k * k, dtype) for k in kernel_sizes],
            ConvParams.init(rng, 1, channels, channels, dtype),
            ConvParams.init(rng, 1, channels, channels, dtype),
        )


@dataclass
class CfmaParams:
    fmb: FmbParams
    post_conv: ConvParams
    ln_gamma: Tensor
    ln_beta: Tensor
    mlp: tuple[ConvParams, ConvParams]

    @classmethod
    def init(cls, rng, channels: int, kernel_sizes=(3, 5), mlp_ratio: int = 2, dtype=np.float32) -> "CfmaParams":
        hidden = mlp_ratio * channels
        return cls(
            FmbParams.init(rng, channels, kernel_sizes, dtype),
            ConvParams.init(rng, 3, channels, channels, dtype),
            ones((channels,), dtype),
            zeros((channels,), dtype),
            (ConvParams.init(rng, 1, channels, hidden, dtype), ConvParams.init(rng, 1, hidden, channels, dtype)),
        )


def _proj(x: Tensor, p: ConvParams) -> Tensor:
    return ops.conv2d(x, p.kernel, p.bias)


def fmb(x: Tensor, p: FmbParams) -> Tensor:
    """Gated multi-scale context aggregation modulating a query projection.

    Context passes through ``L`` depthwise conv + GELU levels; the levels and
    a global average of the last one are mixed by ``L + 1`` per-pixel gates.
    """
    c = x.shape[-1]
    levels = p.levels
    q = _proj(x, p.query_proj)
    ctx, gates = ops.split(_proj(x, p.context_proj), [c, levels + 1], axis=-1)
    gate = ops.split(gates, [1] * (levels + 1), axis=-1)
    agg = None
    for level, kernel in enumerate(p.level_kernels):
        ctx = ops.gelu(ops.depthwise_conv2d(ctx, kernel))
        term = ctx * gate[level]
        agg = term if agg is None else agg + term
    agg = agg + ops.global_avg_pool(ctx) * gate[levels]
    modulator = _proj(agg, p.modulator_proj)
    return _proj(q * modulator, p.out_proj)


def mlp(x: Tensor, layers: tuple[ConvParams, ConvParams]) -> Tensor:
    return _proj(ops.gelu(_proj(x, layers[0])), layers[1])


def cfma(s_k: Tensor, p: CfmaParams) -> Tensor:
    c1 = s_k + ops.layer_norm(_proj(fmb(s_k, p.fmb), p.post_conv), p.ln_gamma, p.ln_beta)
    return c1 + mlp(c1, p.mlp)
