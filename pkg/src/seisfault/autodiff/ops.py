"""Differentiable ops over Tensors.

Primitives record an OpNode with a backward closure; composites (attention,
linear, mse, ...) are built from primitives and need no backward of their
own. Broadcasting is deliberately restricted to bias-add patterns: `add`
reduces the gradient back over broadcast axes, everything else wants exact
shapes or an explicit reshape.
"""

import math

import numpy as np
from scipy import special

from .. import kernels
from .tensor import ShapeError, Tensor, make_output

LAYER_NORM_EPS = 1e-5


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)


def _reduce_to(g, shape):
    """Sum `g` down to `shape`, undoing a broadcast."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    if out_shape != a.shape and out_shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return make_output(a.data + b.data, "add", (a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)

        def bw_scalar(g):
            return (g * s,)

        return make_output(a.data * np.asarray(s, dtype=a.dtype), "mul", (a,), bw_scalar)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, g * ad

    return make_output(ad * bd, "mul", (a, b), bw)


def sub(a, b):
    return add(a, mul(b, -1.0))


def square(a):
    return mul(a, a)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.swapaxes(-1, -2) if a.requires_grad else None
        gb = ad.swapaxes(-1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_output(ad @ bd, "matmul", (a, b), bw)


# -------------------------------------------------------------- convolutions


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation, weight layout (CO, CI, KH, KW), optional bias (CO,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    _, _, h, wd = x.shape
    co, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError("conv2d", x.shape, w.shape)
    y = kernels.conv2d_forward(x.data, w.data, stride, padding)
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (co,):
            raise ShapeError("conv2d", b.shape, (co,))
        y = y + b.data.reshape(1, co, 1, 1)
        inputs.append(b)
    xd, wdat = x.data, w.data

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.conv_transpose2d_forward(g, wdat, stride, padding, h, wd)
        if w.requires_grad:
            gw = kernels.conv2d_weight_grad(xd, g, kh, kw, stride, padding)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_output(y, "conv2d", tuple(inputs), bw)


def conv_transpose2d(x, w, b=None, stride=2, padding=0, output_padding=0):
    """Transposed convolution, weight layout (CI, CO, KH, KW); exact adjoint
    of conv2d with the same stride/padding."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, w.shape)
    _, _, hi, wi = x.shape
    _, co, kh, kw = w.shape
    out_h = (hi - 1) * stride - 2 * padding + kh + output_padding
    out_w = (wi - 1) * stride - 2 * padding + kw + output_padding
    if out_h <= 0 or out_w <= 0:
        raise ShapeError("conv_transpose2d", x.shape, w.shape)
    y = kernels.conv_transpose2d_forward(x.data, w.data, stride, padding, out_h, out_w)
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (co,):
            raise ShapeError("conv_transpose2d", b.shape, (co,))
        y = y + b.data.reshape(1, co, 1, 1)
        inputs.append(b)
    xd, wdat = x.data, w.data

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.conv2d_forward(g, wdat, stride, padding)
        if w.requires_grad:
            gw = kernels.conv2d_weight_grad(g, xd, kh, kw, stride, padding)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_output(y, "conv_transpose2d", tuple(inputs), bw)


# --------------------------------------------------------------- activations


def relu(x):
    x = as_tensor(x)
    xd = x.data

    def bw(g):
        # subgradient at 0 is 0
        return (g * (xd > 0),)

    return make_output(np.maximum(xd, 0), "relu", (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    y = special.expit(x.data)

    def bw(g):
        return (g * y * (1 - y),)

    return make_output(y, "sigmoid", (x,), bw)


def gelu(x):
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd / np.asarray(math.sqrt(2.0), dtype=xd.dtype)))

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) / np.asarray(math.sqrt(2.0 * math.pi), dtype=xd.dtype)
        return (g * (cdf + xd * pdf),)

    return make_output(xd * cdf, "gelu", (x,), bw)


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_output(y, "softmax", (x,), bw)


# ------------------------------------------------------------- normalization


def layer_norm(x, scale, shift, eps=LAYER_NORM_EPS):
    """Per-feature normalization over the last axis with learnable scale/shift."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError("layer_norm", x.shape, scale.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = xc * inv
    y = xhat * scale.data + shift.data

    def bw(g):
        gx = gs = gb = None
        if x.requires_grad:
            gh = g * scale.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if scale.requires_grad:
            gs = (g * xhat).reshape(-1, c).sum(axis=0)
        if shift.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        return gx, gs, gb

    return make_output(y, "layer_norm", (x, scale, shift), bw)


# ------------------------------------------------------------ shape plumbing


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError("reshape", x.shape, shape)
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return make_output(x.data.reshape(shape), "reshape", (x,), bw)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError("transpose", x.shape, axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_output(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), bw)


# ----------------------------------------------------------------- reductions


def sum(x):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return make_output(np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,), bw)


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=True),)

    return make_output(np.asarray(x.data.mean(), dtype=x.dtype), "mean", (x,), bw)


# --------------------------------------------------------------------- losses


def bce_with_logits(logits, target):
    """Mean binary cross-entropy on raw logits; target must be strictly 0/1."""
    logits = as_tensor(logits)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    tgt = tgt.astype(logits.dtype, copy=False)
    if tgt.shape != logits.shape:
        raise ShapeError("bce_with_logits", logits.shape, tgt.shape)
    if not np.all((tgt == 0) | (tgt == 1)):
        raise ValueError("bce_with_logits: target must be binary (0/1)")
    z = logits.data
    # stable form: max(z,0) - z*t + log(1 + exp(-|z|))
    per = np.maximum(z, 0) - z * tgt + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        return (g * (special.expit(z) - tgt) / n,)

    return make_output(np.asarray(per.mean(), dtype=logits.dtype), "bce_with_logits", (logits,), bw)


def mse(pred, target):
    d = sub(pred, as_tensor(target))
    return mean(square(d))


# ------------------------------------------------------------ linear algebra


def linear(x, w, b=None):
    """x (..., cin) @ w (cin, cout) + b, via explicit reshape."""
    x = as_tensor(x)
    cin, cout = w.shape
    lead = x.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    y = matmul(reshape(x, (rows, cin)), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (cout,))


def multi_head_attention(q_src, kv_src, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Scaled dot-product attention with `heads` heads.

    q_src (B, Nq, c) attends over kv_src (B, Nk, c); self-attention is the
    q_src is kv_src case. Built entirely from primitives.
    """
    b, nq, c = q_src.shape
    nk = kv_src.shape[1]
    if c % heads:
        raise ShapeError("attention", (c,), (heads,))
    dk = c // heads

    def split(t, n):
        t = reshape(t, (b, n, heads, dk))
        t = transpose(t, (0, 2, 1, 3))
        return reshape(t, (b * heads, n, dk))

    q = split(linear(q_src, wq, bq), nq)
    k = split(linear(kv_src, wk, bk), nk)
    v = split(linear(kv_src, wv, bv), nk)
    att = softmax(mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dk)))
    out = matmul(att, v)
    out = reshape(out, (b, heads, nq, dk))
    out = transpose(out, (0, 2, 1, 3))
    out = reshape(out, (b, nq, c))
    return linear(out, wo, bo)
