"""Differentiable ops on NCHW tensors.

Broadcasting is deliberately narrow: binary ops accept identical shapes, a
Python scalar, or a per-channel operand of shape ``(C,1,1)`` / ``(N|1,C,1,1)``
against a 4-D ``(N,C,H,W)`` operand. Anything else is a shape error.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

# ---------------------------------------------------------------------------
# helpers


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        if x.dtype != like.dtype:
            raise TypeError(f"dtype mismatch: {x.dtype} vs {like.dtype}")
        return x
    return Tensor._wrap(np.asarray(x, dtype=like.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    if isinstance(b, Tensor):
        return _lift(a, b), b
    raise TypeError("at least one operand must be a Tensor")


def _is_channel_operand(small: tuple, big: tuple) -> bool:
    if len(big) != 4:
        return False
    n, c = big[0], big[1]
    if len(small) == 3:
        return small == (c, 1, 1)
    if len(small) == 4:
        return small[1] == c and small[2:] == (1, 1) and small[0] in (1, n)
    return False


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b or a == () or b == ():
        return
    if _is_channel_operand(a, b) or _is_channel_operand(b, a):
        return
    raise ValueError(f"{op}: shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum(), dtype=grad.dtype)
    if len(shape) == 3:
        return grad.sum(axis=(0, 2, 3)).reshape(shape)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "div")
    with np.errstate(divide="ignore", invalid="ignore"):  # reported by make_result
        out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, negative_slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, negative_slope).astype(x.dtype)
    out = x.data * scale
    return make_result(out, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def square(x: Tensor) -> Tensor:
    out = x.data * x.data
    return make_result(out, (x,), lambda g: (2 * g * x.data,), "square")


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise FloatingPointError("sqrt of negative value")
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g / (2 * out),), "sqrt")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
}


def elementwise(op: str, a: Tensor, b=None, *, alpha: float = 0.2) -> Tensor:
    """Dispatch one of add/sub/mul/relu/leaky_relu/sigmoid by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    if op == "leaky_relu":
        return fn(a, alpha)
    return fn(a)


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x: Tensor) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return make_result(
        out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    dt = tensors[0].dtype
    if any(t.dtype != dt for t in tensors):
        raise TypeError("concat: mixed dtypes")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return make_result(out, tensors, backward, "concat")


# ---------------------------------------------------------------------------
# convolution


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {ci}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if x.dtype != weight.dtype:
        raise TypeError(f"conv2d: dtype mismatch {x.dtype} vs {weight.dtype}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if kh == 1 and kw == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride]
        w2 = weight.data.reshape(o, c)
        out = np.einsum("oc,nchw->nohw", w2, xs, optimize=True)
        if bias is not None:
            out += bias.data.reshape(1, o, 1, 1)

        def backward(g):
            gx = gw = gb = None
            if x.requires_grad:
                gxs = np.einsum("oc,nohw->nchw", w2, g, optimize=True)
                if stride == 1:
                    gx = gxs
                else:
                    gx = np.zeros(x.shape, dtype=x.dtype)
                    gx[:, :, ::stride, ::stride] = gxs
            if weight.requires_grad:
                gw = np.einsum("nohw,nchw->oc", g, xs, optimize=True).reshape(weight.shape)
            if bias is not None and bias.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb

    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        # N,C,Ho,Wo,kh,kw view; copied once into matrix layout
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
        w2 = weight.data.reshape(o, c * kh * kw)
        out = (cols @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias.data.reshape(1, o, 1, 1)
        out = np.ascontiguousarray(out)

        def backward(g):
            gx = gw = gb = None
            g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
            if weight.requires_grad:
                gw = (g2.T @ cols).reshape(weight.shape)
            if bias is not None and bias.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            if x.requires_grad:
                gcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
                gxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                            gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                        )
                gx = gxp[:, :, padding : padding + h, padding : padding + w]
            return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.astype(x.dtype, copy=False), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# attention / normalization


def softmax_spatial(x: Tensor) -> Tensor:
    """Softmax over all H*W positions of a single-channel map."""
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"softmax_spatial expects N x 1 x H x W, got {x.shape}")
    z = x.data - x.data.max(axis=(2, 3), keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=(2, 3), keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=(2, 3), keepdims=True)),)

    return make_result(s, (x,), backward, "softmax_spatial")


def attention_pool(x: Tensor, weights: Tensor) -> Tensor:
    """Sum of x over H*W weighted by an N x 1 x H x W map -> N x C x 1 x 1."""
    n, c, h, w = x.shape
    if weights.shape != (n, 1, h, w):
        raise ValueError(f"attention_pool: weights {weights.shape} vs features {x.shape}")
    xf = x.data.reshape(n, c, h * w)
    wf = weights.data.reshape(n, h * w, 1)
    out = np.matmul(xf, wf).reshape(n, c, 1, 1)

    def backward(g):
        g2 = g.reshape(n, c, 1)
        gx = (g2 * wf.reshape(n, 1, h * w)).reshape(x.shape) if x.requires_grad else None
        gw = np.matmul(g2.transpose(0, 2, 1), xf).reshape(weights.shape) if weights.requires_grad else None
        return gx, gw

    return make_result(out, (x, weights), backward, "attention_pool")


def layer_norm_channels(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize an N x C x 1 x 1 vector over C, then apply per-channel affine."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ValueError(f"layer_norm_channels expects N x C x 1 x 1, got {x.shape}")
    n, c = x.shape[:2]
    if c < 2:
        raise ValueError("layer_norm_channels: fewer than 2 channels is a degenerate normalization")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layer_norm_channels: gain/bias must have shape ({c},)")
    v = x.data.reshape(n, c)
    mu = v.mean(axis=1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = (xhat * gain.data + bias.data).reshape(n, c, 1, 1).astype(x.dtype, copy=False)

    def backward(g):
        g2 = g.reshape(n, c)
        gx = None
        if x.requires_grad:
            d = g2 * gain.data
            gx = inv * (d - d.mean(axis=1, keepdims=True) - xhat * (d * xhat).mean(axis=1, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    return make_result(out, (x, gain, bias), backward, "layer_norm_channels")


# ---------------------------------------------------------------------------
# resampling


def _partition_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row i averages input cells [floor(i*n/o), ceil((i+1)*n/o))."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        start = (i * n_in) // n_out
        stop = -((-(i + 1) * n_in) // n_out)
        m[i, start:stop] = 1.0 / (stop - start)
    return m


def _nearest_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), (np.arange(n_out) * n_in) // n_out] = 1.0
    return m


def _separable(x: Tensor, mh: np.ndarray, mw: np.ndarray, op: str) -> Tensor:
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True),)

    return make_result(out, (x,), backward, op)


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = x.shape[2:]
    if out_h < 1 or out_w < 1:
        raise ValueError("adaptive_avg_pool: output extent must be >= 1")
    if out_h > h or out_w > w:
        raise ValueError(f"adaptive_avg_pool: output {out_h}x{out_w} exceeds input {h}x{w}")
    return _separable(
        x, _partition_matrix(h, out_h, x.dtype), _partition_matrix(w, out_w, x.dtype), "adaptive_avg_pool"
    )


def avg_pool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even extents, got {h}x{w}")
    return adaptive_avg_pool(x, h // 2, w // 2)


def upsample_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = x.shape[2:]
    return _separable(
        x, _nearest_matrix(h, out_h, x.dtype), _nearest_matrix(w, out_w, x.dtype), "upsample_nearest"
    )


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """N x (C*r*r) x H x W -> N x C x rH x rW; channel c*r*r + i*r + j lands at offset (i, j)."""
    n, cr, h, w = x.shape
    if r < 1 or cr % (r * r):
        raise ValueError(f"pixel_shuffle: {cr} channels not divisible by r^2={r * r}")
    c = cr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: extents {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def backward(g):
        return (g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), (x,), backward, "pixel_unshuffle")
