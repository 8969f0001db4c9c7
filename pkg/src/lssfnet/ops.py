"""Differentiable primitives on NHWC tensors.

Every function takes and returns :class:`~lssfnet.tensor.Tensor` values and
records a backward rule when any input requires a gradient.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import Tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LN_EPS = 1e-6

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


# -- elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._from_op(out, (a, b), backward, "div")


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (g / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return Tensor._from_op(out, (x,), backward, "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    out = np.clip(x.data, lo, hi)

    def backward(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return Tensor._from_op(out, (x,), backward, "clip")


# -- reductions and reshapes ----------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=x.dtype), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return Tensor._from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat shape mismatch: {ref} vs {t.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    ax = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[ax]:
        raise ValueError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[ax]}")
    pieces = []
    start = 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[ax] = slice(start, start + n)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        pieces.append(Tensor._from_op(np.ascontiguousarray(x.data[index]), (x,), backward, "split"))
        start += n
    return pieces


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


# -- activations ----------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(x.data * mask, (x,), backward, "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._from_op((x.data * cdf).astype(x.dtype), (x,), backward, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clamped so the output stays strictly inside (0, 1)."""
    info = np.finfo(x.dtype)
    out = np.clip(expit(x.data), info.tiny, 1.0 - info.epsneg).astype(x.dtype)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), backward, "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity in ``infer`` mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return Tensor._from_op(x.data * keep, (x,), backward, "dropout")


# -- normalisation --------------------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalisation over all axes but the last.

    In ``train`` mode the batch statistics normalise ``x`` and the running
    estimates are updated in place; ``infer`` mode reads the running
    estimates only.
    """
    if eps <= 0:
        raise ValueError("batch_norm eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm expects gamma/beta of length {c}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data = (momentum * running_mean.data + (1.0 - momentum) * mu).astype(running_mean.dtype)
        running_var.data = (momentum * running_var.data + (1.0 - momentum) * var).astype(running_var.dtype)
    elif mode == "infer":
        mu = running_mean.data
        var = running_var.data
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = (xhat * gamma.data + beta.data).astype(x.dtype)
    m = x.size // c

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if mode == "train":
            dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the channel (last) axis."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    c = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = (xhat * gamma.data + beta.data).astype(x.dtype)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std / c * (
            c * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (x, gamma, beta), backward, "layer_norm")


# -- convolution and resampling -------------------------------------------------

def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of NHWC ``x`` with a ``[k, k, Cin, Cout]`` kernel."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if kcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},)")
    k = kh
    if padding == "same":
        ho, pt, pb = _same_pads(h, k, stride)
        wo, pl, pr = _same_pads(w, k, stride)
    elif padding == "valid":
        if h < k or w < k:
            raise ValueError("valid conv2d input smaller than kernel")
        ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    if k == 1 and stride == 1:
        cols2d = x.data.reshape(-1, cin)
        k2d = kernel.data.reshape(cin, cout)
        out = (cols2d @ k2d).reshape(n, ho, wo, cout)
    else:
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        # win: [n, ho, wo, cin, k, k] -> rows ordered (ki, kj, cin) to match the kernel layout
        cols2d = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * cin)
        k2d = kernel.data.reshape(k * k * cin, cout)
        out = (cols2d @ k2d).reshape(n, ho, wo, cout)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2d = g.reshape(-1, cout)
        dk = (cols2d.T @ g2d).reshape(kernel.shape)
        dcols = (g2d @ k2d.T)
        if k == 1 and stride == 1:
            dx = dcols.reshape(x.shape)
        else:
            dcols = dcols.reshape(n, ho, wo, k, k, cin)
            dxp = np.zeros((n, h + pt + pb, w + pl + pr, cin), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, :, :, i, j]
            dx = dxp[:, pt:pt + h, pl:pl + w]
        grads = [dx, dk]
        if bias is not None:
            grads.append(g2d.sum(axis=0))
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._from_op(out.astype(x.dtype, copy=False), parents, backward, "conv2d")


def depthwise_conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 'same' convolution with a ``[k, k, C]`` kernel, stride 1, no bias."""
    n, h, w, c = x.shape
    k = kernel.shape[0]
    if kernel.shape != (k, k, c) or k % 2 == 0:
        raise ValueError(f"depthwise kernel must be [k,k,{c}] with odd k, got {kernel.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + h, j:j + w] * kernel.data[i, j]

    def backward(g):
        dxp = np.zeros_like(xp)
        dk = np.empty_like(kernel.data)
        for i in range(k):
            for j in range(k):
                dk[i, j] = (xp[:, i:i + h, j:j + w] * g).sum(axis=(0, 1, 2))
                dxp[:, i:i + h, j:j + w] += g * kernel.data[i, j]
        return dxp[:, p:p + h, p:p + w], dk

    return Tensor._from_op(out, (x, kernel), backward, "depthwise_conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first
    element in row-major window order."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((n, h // 2, w // 2, c, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, "maxpool2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return Tensor._from_op(out, (x,), backward, "upsample2")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, keeping singleton H and W axes for broadcasting."""
    return mean(x, axis=(1, 2), keepdims=True)
