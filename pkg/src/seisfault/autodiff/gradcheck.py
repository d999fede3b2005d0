"""Central-difference verification of every autodiff op.

Checks run in float64. Inputs are drawn on a dyadic grid (multiples of
2^-10) and the step is 2^-13, so for piecewise-linear ops the difference
quotient is computed without rounding error; the identity check in
particular comes out exactly zero. Smooth ops land well below the 1e-4
acceptance bound.

Non-scalar op outputs are read out through sum(y * R) with a fixed random
dyadic weighting R so that degenerate directions (softmax rows summing to
one, for instance) still get exercised.
"""

import numpy as np

from . import ops
from .tensor import Tensor, backward

STEP = 2.0 ** -13


def _grid(rng, shape, keep_away=0.0):
    """Dyadic random values in [-1, 1], optionally pushed away from 0."""
    v = rng.integers(-1024, 1025, size=shape) / 1024.0
    if keep_away:
        v = np.where(v >= 0, v + keep_away, v - keep_away)
    return v


def _param(rng, shape, keep_away=0.0):
    return Tensor(_grid(rng, shape, keep_away), trainable=True, dtype=np.float64)


def _readout(rng, shape):
    """Fixed weighting tensor for the scalar readout sum(y * R)."""
    return Tensor(_grid(rng, shape), dtype=np.float64)


def _unary(fn, shape=(3, 4), keep_away=0.0):
    def build(rng, shapes):
        x = _param(rng, shapes[0] if shapes else shape, keep_away)
        r = _readout(rng, fn(x).shape)
        return [x], lambda: ops.sum(ops.mul(fn(x), r))

    return build


def _check_identity(rng, shapes):
    x = _param(rng, shapes[0] if shapes else (3, 4))
    r = _readout(rng, x.shape)
    return [x], lambda: ops.sum(ops.mul(ops.reshape(x, x.shape), r))


def _check_add(rng, shapes):
    sh = shapes if shapes else ((2, 3, 4), (4,))
    a, b = _param(rng, sh[0]), _param(rng, sh[1])
    r = _readout(rng, np.broadcast_shapes(*sh))
    return [a, b], lambda: ops.sum(ops.mul(ops.add(a, b), r))


def _check_mul(rng, shapes):
    sh = shapes[0] if shapes else (3, 4)
    a, b = _param(rng, sh), _param(rng, sh)
    r = _readout(rng, sh)
    return [a, b], lambda: ops.sum(ops.mul(ops.mul(a, b), r))


def _check_matmul(rng, shapes):
    sh = shapes if shapes else ((3, 4), (4, 2))
    a, b = _param(rng, sh[0]), _param(rng, sh[1])
    r = _readout(rng, ops.matmul(a, b).shape)
    return [a, b], lambda: ops.sum(ops.mul(ops.matmul(a, b), r))


def _check_matmul_batched(rng, shapes):
    return _check_matmul(rng, shapes if shapes else ((2, 3, 4), (2, 4, 2)))


def _conv_check(tconv, default_shapes, stride, padding):
    def build(rng, shapes):
        xs, ws = shapes if shapes else default_shapes
        nbias = ws[1] if tconv else ws[0]
        x, w, b = _param(rng, xs), _param(rng, ws), _param(rng, (nbias,))

        def fwd():
            if tconv:
                return ops.conv_transpose2d(x, w, b, stride=stride, padding=padding)
            return ops.conv2d(x, w, b, stride=stride, padding=padding)

        r = _readout(rng, fwd().shape)
        return [x, w, b], lambda: ops.sum(ops.mul(fwd(), r))

    return build


def _check_layer_norm(rng, shapes):
    sh = shapes[0] if shapes else (2, 8)
    x = _param(rng, sh)
    scale, shift = _param(rng, (sh[-1],)), _param(rng, (sh[-1],))
    r = _readout(rng, sh)
    return [x, scale, shift], lambda: ops.sum(ops.mul(ops.layer_norm(x, scale, shift), r))


def _check_attention(rng, shapes):
    b, n, c, heads = 2, 3, 8, 2
    x = _param(rng, (b, n, c))
    mats = [_param(rng, (c, c)) for _ in range(4)]
    biases = [_param(rng, (c,)) for _ in range(4)]
    r = _readout(rng, (b, n, c))

    def loss():
        wq, wk, wv, wo = mats
        bq, bk, bv, bo = biases
        y = ops.multi_head_attention(x, x, wq, bq, wk, bk, wv, bv, wo, bo, heads)
        return ops.sum(ops.mul(y, r))

    return [x] + mats + biases, loss


def _check_reshape(rng, shapes):
    x = _param(rng, (3, 4))
    r = _readout(rng, (2, 6))
    return [x], lambda: ops.sum(ops.mul(ops.reshape(x, (2, 6)), r))


def _check_transpose(rng, shapes):
    x = _param(rng, (2, 3, 4))
    r = _readout(rng, (4, 2, 3))
    return [x], lambda: ops.sum(ops.mul(ops.transpose(x, (2, 0, 1)), r))


def _check_mean(rng, shapes):
    x = _param(rng, shapes[0] if shapes else (3, 4))
    return [x], lambda: ops.mean(x)


def _check_sum(rng, shapes):
    x = _param(rng, shapes[0] if shapes else (3, 4))
    return [x], lambda: ops.sum(x)


def _check_bce(rng, shapes):
    sh = shapes[0] if shapes else (3, 4)
    x = _param(rng, sh)
    target = rng.integers(0, 2, size=sh).astype(np.float64)
    return [x], lambda: ops.bce_with_logits(x, target)


CHECKS = {
    "identity": _check_identity,
    "add": _check_add,
    "mul": _check_mul,
    "matmul": _check_matmul,
    "matmul_batched": _check_matmul_batched,
    "conv2d": _conv_check(False, ((2, 2, 5, 5), (3, 2, 3, 3)), stride=1, padding=1),
    "conv2d_strided": _conv_check(False, ((1, 2, 6, 6), (2, 2, 2, 2)), stride=2, padding=0),
    "conv_transpose2d": _conv_check(True, ((1, 2, 3, 3), (2, 3, 2, 2)), stride=2, padding=0),
    "layer_norm": _check_layer_norm,
    "relu": _unary(ops.relu, keep_away=0.25),
    "gelu": _unary(ops.gelu),
    "sigmoid": _unary(ops.sigmoid),
    "softmax": _unary(ops.softmax, shape=(3, 5)),
    "attention": _check_attention,
    "reshape": _check_reshape,
    "transpose": _check_transpose,
    "mean": _check_mean,
    "sum": _check_sum,
    "bce_with_logits": _check_bce,
}


def grad_check(op, shapes=None, seed=0):
    """Max over parameters of |analytic - central difference| / max(1, |cd|)."""
    if op not in CHECKS:
        raise KeyError(f"no gradient check registered for op {op!r}")
    rng = np.random.default_rng([seed, 0x5EED])
    params, loss_fn = CHECKS[op](rng, shapes)
    backward(loss_fn())
    worst = 0.0
    for t in params:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + STEP
            hi = float(loss_fn().data)
            flat[i] = orig - STEP
            lo = float(loss_fn().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * STEP)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
