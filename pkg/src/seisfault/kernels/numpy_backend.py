"""Numpy fallback for the convolution hot kernels.

Same contract as the compiled extension `_convkernels`: three functions over
C-contiguous 4D float32/float64 arrays. This is also the reference the
compiled backend is tested against.

Layout conventions (all row-major):
  conv2d            x (B, CI, H, W),  w (CO, CI, KH, KW)
  conv_transpose2d  x (B, CI, H, W),  w (CI, CO, KH, KW)

`conv_transpose2d_forward` is the exact adjoint of `conv2d_forward` for the
same stride/padding, which is what the autodiff layer relies on: the input
gradient of one op is the forward of the other, and both weight gradients
reduce to `conv2d_weight_grad` with the roles of input and upstream gradient
swapped.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _patch_view(xp, kh, kw, stride, ho, wo):
    # view[b, c, p, q, i, j] == xp[b, c, i*stride + p, j*stride + q]
    sb, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(xp.shape[0], xp.shape[1], kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d_forward(x, w, stride, padding):
    x = np.ascontiguousarray(x)
    b, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = _patch_view(x, kh, kw, stride, ho, wo)
    return np.einsum("bcpqij,ocpq->boij", view, w, optimize=True)


def conv_transpose2d_forward(x, w, stride, padding, out_h, out_w):
    x = np.ascontiguousarray(x)
    b, ci, hi, wi = x.shape
    _, co, kh, kw = w.shape
    # scatter-add into a padded canvas, one strided slice per kernel tap
    full = np.zeros((b, co, out_h + 2 * padding, out_w + 2 * padding), dtype=x.dtype)
    contrib = np.einsum("bcij,copq->bopqij", x, w, optimize=True)
    for p in range(kh):
        for q in range(kw):
            full[:, :, p : p + hi * stride : stride, q : q + wi * stride : stride] += contrib[:, :, p, q]
    if padding:
        full = full[:, :, padding : padding + out_h, padding : padding + out_w]
    return np.ascontiguousarray(full)


def conv2d_weight_grad(x, gy, kh, kw, stride, padding):
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    ho, wo = gy.shape[2], gy.shape[3]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = _patch_view(x, kh, kw, stride, ho, wo)
    return np.einsum("boij,bcpqij->ocpq", gy, view, optimize=True)
