"""Differentiable primitives.

Every primitive is reachable by name through :func:`primitive_forward`, and the
module-level functions (``conv2d``, ``relu``...) are the convenient spelling.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import ConfigurationError, DimensionError, Tensor, record


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(kind, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record(a.data + b.data, "add", (a, b), {}, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return record(a.data - b.data, "sub", (a, b), {}, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return record(ad * bd, "mul", (a, b), {}, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return record(x.data * mask, "relu", (x,), {}, bw)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        return (2.0 * xd * g,)

    return record(xd * xd, "square", (x,), {}, bw)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the primitive name
    xd = x.data

    def bw(g):
        return (np.sign(xd) * g,)

    return record(np.abs(xd), "abs", (x,), {}, bw)


def huber_unit(x: Tensor) -> Tensor:
    """0.5 d^2 where |d| < 1, |d| - 0.5 elsewhere."""
    xd = x.data
    inside = np.abs(xd) < 1.0
    out = np.where(inside, 0.5 * xd * xd, np.abs(xd) - 0.5).astype(xd.dtype, copy=False)

    def bw(g):
        return (np.where(inside, xd, np.sign(xd)) * g,)

    return record(out, "huber_unit", (x,), {}, bw)


# ----------------------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    out = np.asarray(x.data.sum(axis=axis), dtype=x.data.dtype)
    return record(out, "sum", (x,), {"axis": axis}, bw)


def mean(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    count = x.data.size if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(x.data.dtype),)

    out = np.asarray(x.data.mean(axis=axis), dtype=x.data.dtype)
    return record(out, "mean", (x,), {"axis": axis}, bw)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.data.dtype),)

    return record(x.data.mean(axis=(2, 3)), "global_avg_pool", (x,), {}, bw)


# ----------------------------------------------------------------------------- softmax family

def _check_tau(tau):
    if not tau > 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")


def log_softmax_temperature(z: Tensor, tau: float = 1.0) -> Tensor:
    """Row-wise log softmax of ``z / tau`` over the last axis."""
    _check_tau(tau)
    s = z.data / tau
    s = s - s.max(axis=-1, keepdims=True)
    out = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def bw(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / tau,)

    return record(out, "log_softmax_temperature", (z,), {"tau": tau}, bw)


def softmax_temperature(z: Tensor, tau: float = 1.0) -> Tensor:
    """Row-wise ``exp(z_i/tau) / sum_j exp(z_j/tau)`` over the last axis."""
    _check_tau(tau)
    s = z.data / tau
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)) / tau,)

    return record(p, "softmax_temperature", (z,), {"tau": tau}, bw)


# ----------------------------------------------------------------------------- dense layers

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` laid out (out_features, in_features)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match {w.shape[0]} outputs")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def bw(g):
        grads = [g @ wd, g.T @ xd]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, "linear", inputs, {}, bw)


def _conv_output_hw(h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    return ho, wo


def _check_conv(x: Tensor, w: Tensor, b: Optional[Tensor], groups: int):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    c, f = x.shape[1], w.shape[0]
    if groups < 1 or c % groups or f % groups:
        raise ConfigurationError(
            f"conv2d: groups={groups} must divide input channels {c} and filters {f}")
    if w.shape[1] != c // groups:
        raise DimensionError(
            f"conv2d: weight expects {w.shape[1] * groups} input channels, input has {c}")
    if b is not None and b.shape != (f,):
        raise DimensionError(f"conv2d: bias {b.shape} does not match {f} filters")


def _gather_cols(xt: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(C, N, Hp, Wp) padded input -> (C, kh, kw, N, ho, wo) columns."""
    c, n = xt.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xt.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols


def _pad_hw(t: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    if top == bottom == left == right == 0:
        return t
    return np.pad(t, ((0, 0), (0, 0), (top, bottom), (left, right)))


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-d cross-correlation with zero padding.

    Works internally in channel-major (C, N, H, W) layout so each kernel tap is
    one strided slice copy. The input gradient is computed as a stride-1
    convolution of the dilated output gradient with the flipped kernels, which
    avoids a slow scatter-add.
    """
    _check_conv(x, w, b, groups)
    n, c, h, wd_ = x.shape
    f, cg, kh, kw = w.shape
    if padding > min(kh, kw) - 1:
        raise ConfigurationError(f"conv2d: padding {padding} exceeds kernel extent - 1")
    ho, wo = _conv_output_hw(h, wd_, kh, kw, stride, padding)
    fg = f // groups
    xt = _pad_hw(x.data.transpose(1, 0, 2, 3), padding, padding, padding, padding)
    cols = _gather_cols(xt, kh, kw, stride, ho, wo).reshape(groups, cg * kh * kw, n * ho * wo)
    wmat = w.data.reshape(groups, fg, cg * kh * kw)
    out = np.matmul(wmat, cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        grads = [None, None]
        if w.requires_grad:
            dw = np.matmul(gt.reshape(groups, fg, n * ho * wo), cols.transpose(0, 2, 1))
            grads[1] = dw.reshape(f, cg, kh, kw)
        if x.requires_grad:
            if stride > 1:
                gd = np.zeros((f, n, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=gt.dtype)
                gd[:, :, ::stride, ::stride] = gt
            else:
                gd = gt
            ph, pw = kh - 1 - padding, kw - 1 - padding
            gd = _pad_hw(gd, ph, h - (gd.shape[2] + ph - kh + 1),
                         pw, wd_ - (gd.shape[3] + pw - kw + 1))
            gcols = _gather_cols(gd, kh, kw, 1, h, wd_).reshape(groups, fg * kh * kw, n * h * wd_)
            wflip = (w.data[:, :, ::-1, ::-1].reshape(groups, fg, cg, kh, kw)
                     .transpose(0, 2, 1, 3, 4).reshape(groups, cg, fg * kh * kw))
            dx = np.matmul(wflip, gcols).reshape(c, n, h, wd_)
            grads[0] = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    attrs = {"stride": stride, "padding": padding, "groups": groups}
    return record(out, "conv2d", inputs, attrs, bw)


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                     stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    """Direct nested-loop convolution used as a test oracle. Slow on purpose."""
    n, c, h, wd_ = x.shape
    f, cg, kh, kw = w.shape
    if c % groups or f % groups or cg != c // groups:
        raise ConfigurationError("conv2d_reference: inconsistent groups")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd_ + 2 * padding - kw) // stride + 1
    fg = f // groups
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for bi in range(n):
        for fi in range(f):
            gi = fi // fg
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if b is None else float(b[fi])
                    for ci in range(cg):
                        cin = gi * cg + ci
                        for ky in range(kh):
                            iy = oy * stride + ky - padding
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - padding
                                if 0 <= ix < wd_:
                                    acc += float(x[bi, cin, iy, ix]) * float(w[fi, ci, ky, kx])
                    out[bi, fi, oy, ox] = acc
    return out


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects N x C x H x W, got {x.shape}")
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record(out, "upsample_nearest", (x,), {"factor": factor}, bw)


# ----------------------------------------------------------------------------- normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over every axis but axis 1.

    In training mode the batch statistics normalize ``x`` and the running
    buffers are updated in place (unbiased variance); in eval mode the running
    buffers are used and left untouched.
    """
    if x.ndim not in (2, 4) or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm: input {x.shape} vs scale {gamma.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    xd = x.data
    if training:
        m = xd.size // xd.shape[1]
        if m < 2:
            raise DimensionError("batch_norm in training mode needs more than one value per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    gd = gamma.data

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd.reshape(bshape)
        if training:
            dx = (dxhat - dxhat.mean(axis=axes, keepdims=True)
                  - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)) * inv_std.reshape(bshape)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return record(out, "batch_norm", (x, gamma, beta),
                  {"training": training, "momentum": momentum, "eps": eps}, bw)


# ----------------------------------------------------------------------------- dispatch

_PRIMITIVES = {
    "linear": linear,
    "conv2d": conv2d,
    "relu": relu,
    "add": add,
    "sub": sub,
    "mul": mul,
    "global_avg_pool": global_avg_pool,
    "batch_norm": batch_norm,
    "log_softmax_temperature": log_softmax_temperature,
    "softmax_temperature": softmax_temperature,
    "mean": mean,
    "sum": sum,
    "square": square,
    "abs": abs,
    "huber_unit": huber_unit,
    "upsample_nearest": upsample_nearest,
}

PRIMITIVE_KINDS = tuple(_PRIMITIVES)


def primitive_forward(kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Apply the primitive ``kind`` to ``inputs`` with keyword ``attrs``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ConfigurationError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **(attrs or {}))
