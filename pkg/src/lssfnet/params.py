"""Parameter containers, initialisers and the flat name -> tensor registry."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float32, learnable: bool = True) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=learnable)


def ones(shape, dtype=np.float32, learnable: bool = True) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=learnable)


@dataclass
class ConvParams:
    kernel: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, k: int, cin: int, cout: int, dtype=np.float32) -> "ConvParams":
        return cls(he_normal(rng, (k, k, cin, cout), k * k * cin, dtype), zeros((cout,), dtype))


@dataclass
class ConvUnitParams:
    """Convolution followed by batch normalisation (ReLU is applied by the caller)."""

    kernel: Tensor
    bias: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    bn_running_mean: Tensor
    bn_running_var: Tensor

    @classmethod
    def init(cls, rng, k: int, cin: int, cout: int, dtype=np.float32) -> "ConvUnitParams":
        conv = ConvParams.init(rng, k, cin, cout, dtype)
        return cls(
            conv.kernel,
            conv.bias,
            ones((cout,), dtype),
            zeros((cout,), dtype),
            zeros((cout,), dtype, learnable=False),
            ones((cout,), dtype, learnable=False),
        )


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses, lists and tuples and yield dotted names for every tensor."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None or isinstance(value, (int, float, str)):
                continue
            yield from named_tensors(value, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            yield from named_tensors(value, f"{prefix}.{i}" if prefix else str(i))
    else:
        raise TypeError(f"cannot walk {type(obj).__name__} at {prefix!r}")


def registry(obj) -> dict[str, Tensor]:
    reg: dict[str, Tensor] = {}
    seen: set[int] = set()
    for name, t in named_tensors(obj):
        if name in reg:
            raise ValueError(f"duplicate parameter name {name}")
        if id(t) in seen:
            raise ValueError(f"tensor registered twice (second name {name})")
        seen.add(id(t))
        reg[name] = t
    return reg


def learnable(obj) -> dict[str, Tensor]:
    return {k: v for k, v in registry(obj).items() if v.requires_grad}


def zero_grads(obj) -> None:
    for t in registry(obj).values():
        t.grad = None
