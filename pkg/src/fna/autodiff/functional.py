"""Differentiable ops over :class:`Tensor`.

Convolutions are direct (sliding windows + tensordot, or per-tap loops for the
depthwise case); every reduction runs in a fixed order so repeated calls are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels as _k
from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return make_result(ad / bd, (a, b),
                       lambda g: (_unbroadcast(g / bd, ad.shape),
                                  _unbroadcast(-g * ad / (bd * bd), bd.shape)), "div")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu6(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(_k.relu6_forward(xd), (x,),
                       lambda g: (_k.relu6_backward(np.ascontiguousarray(g), xd),), "relu6")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return make_result(np.where(mask, xd, 0).astype(xd.dtype), (x,), lambda g: (g * mask,), "relu")


# -- shape / reduction ----------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype, copy=True),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def cast(x: Tensor, dtype) -> Tensor:
    if x.dtype == dtype:
        return x
    src = x.dtype
    return make_result(x.data.astype(dtype), (x,), lambda g: (g.astype(src),), "cast")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(x.data[index], dtype=dtype), (x,), bw, "getitem")


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(data, tuple(tensors), bw, "stack")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} @ {bd.shape}")
    return make_result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


# -- softmax family -------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), bw, "log_softmax")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood over all samples (and pixels).

    ``logits`` is ``[N, C]`` or ``[N, C, H, W]``; ``targets`` holds integer
    class ids of shape ``[N]`` or ``[N, H, W]``.
    """
    t = np.asarray(targets)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("cross_entropy targets must be integer class ids")
    c = logits.shape[1]
    if t.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"cross_entropy: targets {t.shape} do not match logits {logits.shape}")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise IndexError(f"target class out of range [0, {c})")
    x = logits.data
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    tt = np.expand_dims(t, 1)
    picked = np.take_along_axis(logp, tt, axis=1)
    n = t.size
    loss = np.asarray(-picked.sum() / n, dtype=x.dtype)

    def bw(g):
        p = e / s
        np.put_along_axis(p, tt, np.take_along_axis(p, tt, axis=1) - 1, axis=1)
        return ((g / n) * p,)

    return make_result(loss, (logits,), bw, "cross_entropy")


# -- convolution ----------------------------------------------------------

def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if not p:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p:p + h, p:p + w] = x
    return out


def conv2d_output_hw(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    return (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1


def conv2d_output_shape(in_shape, w_shape, stride: int = 1, padding: int = 0) -> tuple[int, ...]:
    n, _, h, w = in_shape
    return (n, w_shape[0]) + conv2d_output_hw(h, w, w_shape[2], stride, padding)


def _check_conv_args(x: Tensor, weight: Tensor, stride: int, padding: int, depthwise: bool) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"only square kernels are supported, got {weight.shape[2]}x{weight.shape[3]}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    if depthwise:
        if weight.shape[1] != 1 or weight.shape[0] != x.shape[1]:
            raise ShapeError(f"depthwise weight {weight.shape} does not match {x.shape[1]} input channels")
    elif weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv weight expects {weight.shape[1]} input channels, input has {x.shape[1]}")


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None) -> Tensor:
    _check_conv_args(x, weight, stride, padding, depthwise=False)
    xd, wd = x.data, weight.data
    n, c, h, w = xd.shape
    o, _, k, _ = wd.shape
    ho, wo = conv2d_output_hw(h, w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be empty for input {xd.shape}, kernel {k}")

    if k == 1 and stride == 1 and padding == 0:
        w2 = wd.reshape(o, c)
        xf = xd.reshape(n, c, h * w)
        out = np.matmul(w2, xf).reshape(n, o, h, w)

        def bw_core(g):
            gf = g.reshape(n, o, h * w)
            gx = np.matmul(w2.T, gf).reshape(xd.shape) if x.requires_grad else None
            gw = np.tensordot(gf, xf, axes=([0, 2], [0, 2])).reshape(wd.shape) if weight.requires_grad else None
            return gx, gw
    else:
        xp = _pad_hw(xd, padding)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

        def bw_core(g):
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
            if not x.requires_grad:
                return None, gw
            gxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    contrib = np.tensordot(wd[:, :, i, j], g, axes=([0], [1]))  # [C, N, Ho, Wo]
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        contrib.transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            return gx, gw

    out = np.ascontiguousarray(out, dtype=xd.dtype)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
        return make_result(out, (x, weight, bias),
                           lambda g: bw_core(g) + (g.sum(axis=(0, 2, 3)),), "conv2d")
    return make_result(out, (x, weight), bw_core, "conv2d")


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Channel-separable convolution; ``weight`` is ``[C, 1, k, k]``."""
    _check_conv_args(x, weight, stride, padding, depthwise=True)
    xd, wd = x.data, weight.data
    n, c, h, w = xd.shape
    k = wd.shape[2]
    ho, wo = conv2d_output_hw(h, w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"depthwise output would be empty for input {xd.shape}, kernel {k}")
    xp = _pad_hw(xd, padding)
    taps = np.ascontiguousarray(wd[:, 0])  # [C, k, k]
    out = _k.dw_forward(xp, taps, stride, ho, wo)

    def bw(g):
        gw, gxp = _k.dw_backward(np.ascontiguousarray(g), xp, taps, stride,
                                 weight.requires_grad, x.requires_grad)
        gx = None
        if x.requires_grad:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, (gw.reshape(wd.shape) if weight.requires_grad else None)

    return make_result(out, (x, weight), bw, "depthwise_conv2d")


# -- normalization --------------------------------------------------------

@dataclass
class BatchNormParams:
    """Per-channel affine parameters and running statistics of one BN layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = self.gamma.shape[0]
        if not (self.beta.shape == (c,) and self.running_mean.shape == (c,) and self.running_var.shape == (c,)):
            raise ShapeError("BatchNormParams vectors must all have the channel count as length")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def init(cls, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=float(np.float32(eps)),
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def copy(self) -> "BatchNormParams":
        return BatchNormParams(
            gamma=Tensor(self.gamma.data.copy(), requires_grad=self.gamma.requires_grad),
            beta=Tensor(self.beta.data.copy(), requires_grad=self.beta.requires_grad),
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            eps=self.eps,
            momentum=self.momentum,
        )


def batch_norm(x: Tensor, params: BatchNormParams, training: bool, update_stats: bool = True) -> Tensor:
    """``gamma * (x - mean) / sqrt(var + eps) + beta`` per channel.

    In training mode the batch statistics normalize the input and, when
    ``update_stats`` is set, fold into the running estimates with ``momentum``
    (unbiased variance for the running estimate).
    """
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise ShapeError(f"batch_norm: input {x.shape} does not match {params.channels} channels")
    xd = x.data
    gamma, beta = params.gamma, params.beta
    gd = gamma.data.reshape(1, -1, 1, 1)
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        out, xhat, mu, var, inv = _k.bn_train_forward(xd, gamma.data, beta.data, params.eps)
        if update_stats:
            mom = params.momentum
            unbiased = var * (m / max(m - 1, 1))
            rm, rv = params.running_mean, params.running_var
            rm[...] = (1 - mom) * rm + mom * mu.astype(rm.dtype)
            rv[...] = (1 - mom) * rv + mom * unbiased.astype(rv.dtype)
        inv = inv.astype(xd.dtype)

        def bw(g):
            gx, gg, gb = _k.bn_train_backward(np.ascontiguousarray(g), xhat, gamma.data, inv)
            return gx, gg, gb
    else:
        inv = (1.0 / np.sqrt(params.running_var + params.eps)).astype(xd.dtype)
        xhat = (xd - params.running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        out = gd * xhat + beta.data.reshape(1, -1, 1, 1)

        def bw(g):
            return (g * gd * inv.reshape(1, -1, 1, 1),
                    (g * xhat).sum(axis=(0, 2, 3)),
                    g.sum(axis=(0, 2, 3)))

    return make_result(out.astype(xd.dtype, copy=False), (x, gamma, beta), bw, "batch_norm")


# -- pooling / heads ------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """``[N, C, H, W] -> [N, C]``."""
    n, c, h, w = x.shape
    return make_result(x.data.mean(axis=(2, 3)), (x,),
                       lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
                       "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped ``[out, in]``."""
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    out = xd @ wd.T
    if bias is None:
        return make_result(out, (x, weight), lambda g: (g @ wd, g.T @ xd), "linear")
    out = out + bias.data
    return make_result(out, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)), "linear")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return make_result(out, (x,),
                       lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
                       "upsample_nearest")
