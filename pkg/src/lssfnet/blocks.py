"""Convolutional building blocks: the conv unit, stem, booster encoder and
decoder blocks, and the sigmoid output head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .params import ConvParams, ConvUnitParams
from .tensor import Tensor


def conv_bn(x: Tensor, p: ConvUnitParams, mode: str) -> Tensor:
    y = ops.conv2d(x, p.kernel, p.bias)
    return ops.batch_norm(y, p.bn_gamma, p.bn_beta, p.bn_running_mean, p.bn_running_var, mode)


def conv_unit(x: Tensor, p: ConvUnitParams, mode: str) -> Tensor:
    """3x3 conv -> batch norm -> ReLU."""
    return ops.relu(conv_bn(x, p, mode))


def conv(x: Tensor, p: ConvParams) -> Tensor:
    return ops.conv2d(x, p.kernel, p.bias)


@dataclass
class StemParams:
    skip_unit: ConvUnitParams
    units: tuple[ConvUnitParams, ConvUnitParams]

    @classmethod
    def init(cls, rng, cin: int, width: int, dtype=np.float32) -> "StemParams":
        return cls(
            ConvUnitParams.init(rng, 3, cin, width, dtype),
            (ConvUnitParams.init(rng, 3, width, width, dtype), ConvUnitParams.init(rng, 3, width, width, dtype)),
        )


@dataclass
class EncoderBlockParams:
    skip_unit: ConvUnitParams
    branch_a: tuple[ConvUnitParams, ConvUnitParams, ConvParams]
    branch_b: tuple[ConvUnitParams, ConvUnitParams]

    @classmethod
    def init(cls, rng, cin: int, cout: int, dtype=np.float32) -> "EncoderBlockParams":
        return cls(
            ConvUnitParams.init(rng, 3, cin, cout, dtype),
            (
                ConvUnitParams.init(rng, 3, cin, cout, dtype),
                ConvUnitParams.init(rng, 3, cout, cout, dtype),
                ConvParams.init(rng, 3, cout, cout, dtype),
            ),
            (ConvUnitParams.init(rng, 3, cout, cout, dtype), ConvUnitParams.init(rng, 3, cout, cout, dtype)),
        )


@dataclass
class DecoderBlockParams:
    fuse_unit: ConvUnitParams
    branch_a: tuple[ConvUnitParams, ConvUnitParams, ConvParams]
    branch_b: tuple[ConvUnitParams, ConvUnitParams]

    @classmethod
    def init(cls, rng, cin: int, cout: int, dtype=np.float32) -> "DecoderBlockParams":
        return cls(
            ConvUnitParams.init(rng, 3, cin, cout, dtype),
            (
                ConvUnitParams.init(rng, 3, cin, cout, dtype),
                ConvUnitParams.init(rng, 3, cout, cout, dtype),
                ConvParams.init(rng, 3, cout, cout, dtype),
            ),
            (ConvUnitParams.init(rng, 3, cout, cout, dtype), ConvUnitParams.init(rng, 3, cout, cout, dtype)),
        )


@dataclass
class OutputHeadParams:
    pre_unit: ConvUnitParams
    final_conv: ConvParams

    @classmethod
    def init(cls, rng, width: int, dtype=np.float32) -> "OutputHeadParams":
        return cls(ConvUnitParams.init(rng, 3, width, width, dtype), ConvParams.init(rng, 1, width, 1, dtype))


def _check_even(x: Tensor, where: str) -> None:
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"{where}: spatial dims must be even, got {x.shape[1]}x{x.shape[2]}")


def initial_stem(x_in: Tensor, p: StemParams, mode: str) -> tuple[Tensor, Tensor]:
    """Return the first skip feature and the first pooled encoder output."""
    _check_even(x_in, "initial_stem")
    s0 = conv_unit(x_in, p.skip_unit, mode)
    e0 = ops.maxpool2(conv_unit(conv_unit(s0, p.units[0], mode), p.units[1], mode))
    return s0, e0


def encoder_block(e_prev: Tensor, p: EncoderBlockParams, mode: str) -> tuple[Tensor, Tensor]:
    """Booster encoder block.

    The main path runs two conv units and a bare conv over ``e_prev``; the
    booster path runs two conv+BN stages over the skip feature. Their sum is
    rectified and pooled.
    """
    _check_even(e_prev, "encoder_block")
    s_k = conv_unit(e_prev, p.skip_unit, mode)
    a = conv(conv_unit(conv_unit(e_prev, p.branch_a[0], mode), p.branch_a[1], mode), p.branch_a[2])
    b = conv_bn(conv_bn(s_k, p.branch_b[0], mode), p.branch_b[1], mode)
    if a.shape != b.shape:
        raise ValueError(f"encoder_block branch mismatch: {a.shape} vs {b.shape}")
    return s_k, ops.maxpool2(ops.relu(a + b))


def decoder_block(d_prev: Tensor, skip_feat: Tensor, p: DecoderBlockParams, mode: str) -> Tensor:
    """Booster decoder block; ``skip_feat`` is the attention-refined skip."""
    up = ops.upsample2(d_prev)
    if up.shape[1:3] != skip_feat.shape[1:3]:
        raise ValueError(f"decoder_block: upsampled {up.shape} does not match skip {skip_feat.shape}")
    if skip_feat.shape[-1] != p.fuse_unit.kernel.shape[-1]:
        raise ValueError(f"decoder_block: skip has {skip_feat.shape[-1]} channels, block emits {p.fuse_unit.kernel.shape[-1]}")
    fused = skip_feat + conv_unit(up, p.fuse_unit, mode)
    a = conv(conv_unit(conv_unit(up, p.branch_a[0], mode), p.branch_a[1], mode), p.branch_a[2])
    b = conv_bn(conv_bn(fused, p.branch_b[0], mode), p.branch_b[1], mode)
    return ops.relu(a + b)


def output_head(x: Tensor, p: OutputHeadParams, mode: str = "infer") -> Tensor:
    return ops.sigmoid(conv(conv_unit(x, p.pre_unit, mode), p.final_conv))
