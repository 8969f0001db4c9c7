"""Bottleneck attention: channel self-attention (SAB), global spatial
attention (GSA) and the grouped channel shuffle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .params import ConvParams, he_normal
from .tensor import Tensor


@dataclass
class SabParams:
    temperature: float
    dropout_rate: float = 0.1
    w_q: Tensor | None = None
    w_k: Tensor | None = None
    w_v: Tensor | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"SAB temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"SAB dropout rate must lie in [0, 1), got {self.dropout_rate}")

    @classmethod
    def init(cls, rng, channels: int, temperature: float | None = None, dropout_rate: float = 0.1,
             projections: bool = False, dtype=np.float32) -> "SabParams":
        temperature = float(channels if temperature is None else temperature)
        if not projections:
            return cls(temperature, dropout_rate)
        w = [he_normal(rng, (channels, channels), channels, dtype) for _ in range(3)]
        return cls(temperature, dropout_rate, *w)


@dataclass
class GsaParams:
    query_conv: ConvParams
    key_conv: ConvParams
    value_conv: ConvParams
    mix: Tensor  # [HW, HW]

    @classmethod
    def init(cls, rng, channels: int, spatial: int, factor: int = 2, dtype=np.float32) -> "GsaParams":
        if channels % factor:
            raise ValueError(f"GSA factor {factor} does not divide {channels} channels")
        reduced = channels // factor
        hw = spatial * spatial
        mix = Tensor(rng.normal(0.0, 0.02, size=(hw, hw)).astype(dtype), requires_grad=True)
        return cls(
            ConvParams.init(rng, 1, channels, reduced, dtype),
            ConvParams.init(rng, 1, channels, reduced, dtype),
            ConvParams.init(rng, 1, channels, channels, dtype),
            mix,
        )


@dataclass(frozen=True)
class ShuffleSpec:
    groups: int
    channels: int

    def __post_init__(self):
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"{self.groups} groups do not divide {self.channels} channels")


@dataclass
class BottleneckParams:
    sab: SabParams
    gsa: GsaParams
    fuse: ConvParams
    groups: int = 2


def _project(x2d: Tensor, w: Tensor | None) -> Tensor:
    return x2d if w is None else ops.matmul(x2d, w)


def sab(x: Tensor, p: SabParams, mode: str = "infer", rng: np.random.Generator | None = None,
        return_attention: bool = False):
    """Channel-by-channel scaled dot-product attention.

    ``x`` is flattened to ``[N, HW, C]``; the energy is the ``C x C`` product
    of the transposed query with the key, scaled by ``1/sqrt(temperature)``
    and row-softmaxed. The output is ``value @ attention`` reshaped back.
    """
    n, h, w, c = x.shape
    flat = x.reshape(n, h * w, c)
    query = _project(flat, p.w_q).transpose(0, 2, 1)  # [N, C, HW]
    key = _project(flat, p.w_k)  # [N, HW, C]
    value = _project(flat, p.w_v)  # [N, HW, C]
    energy = ops.matmul(query, key) * (1.0 / np.sqrt(p.temperature))
    attention = ops.softmax(energy, axis=-1)
    dropped = ops.dropout(attention, p.dropout_rate, mode, rng)
    out = ops.matmul(value, dropped).reshape(n, h, w, c)
    return (out, attention) if return_attention else out


def gsa(x: Tensor, p: GsaParams, return_attention: bool = False):
    """Global spatial attention with a trainable ``HW x HW`` mixing matrix and
    a residual connection."""
    n, h, w, c = x.shape
    hw = h * w
    if p.mix.shape != (hw, hw):
        raise ValueError(f"GSA mixing matrix is {p.mix.shape}, input needs {(hw, hw)}")
    if p.value_conv.kernel.shape[-1] != c:
        raise ValueError("GSA value projection must preserve the channel count")
    q = ops.conv2d(x, p.query_conv.kernel, p.query_conv.bias).reshape(n, hw, -1)
    k = ops.conv2d(x, p.key_conv.kernel, p.key_conv.bias).reshape(n, hw, -1).transpose(0, 2, 1)
    attention = ops.softmax(ops.matmul(q, k), axis=-1)  # [N, HW, HW]
    v = ops.conv2d(x, p.value_conv.kernel, p.value_conv.bias).reshape(n, hw, c).transpose(0, 2, 1)  # [N, C, HW]
    out = ops.matmul(ops.matmul(v, attention), p.mix)  # [N, C, HW]
    out = out.transpose(0, 2, 1).reshape(n, h, w, c) + x
    return (out, attention) if return_attention else out


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Source channel for each output channel: reshape (g, n/g), transpose, flatten."""
    ShuffleSpec(groups, channels)
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, spec: ShuffleSpec | int) -> Tensor:
    """Interleave channel groups. Pure permutation of the last axis."""
    n, h, w, c = x.shape
    groups = spec.groups if isinstance(spec, ShuffleSpec) else int(spec)
    ShuffleSpec(groups, c)
    y = x.reshape(n, h, w, groups, c // groups).transpose(0, 1, 2, 4, 3)
    return y.reshape(n, h, w, c)


def bottleneck(e_last: Tensor, p: BottleneckParams, mode: str = "infer",
               rng: np.random.Generator | None = None) -> Tensor:
    """GSA and SAB in parallel, concatenated, channel-shuffled and fused back
    to the input width by a 1x1 conv."""
    joined = ops.concat([gsa(e_last, p.gsa), sab(e_last, p.sab, mode, rng)], axis=-1)
    shuffled = channel_shuffle(joined, ShuffleSpec(p.groups, joined.shape[-1]))
    return ops.conv2d(shuffled, p.fuse.kernel, p.fuse.bias)
