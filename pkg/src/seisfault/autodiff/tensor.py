"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a C-contiguous float32 (or float64, for numerical gradient
checks) numpy buffer. Ops in `ops.py` record an OpNode on their output;
`backward(loss)` topologically orders the recorded nodes and accumulates
gradients onto trainable leaves. Tensors whose subgraph contains no trainable
leaf record nothing, so a frozen backbone adds no tape overhead.
"""

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when an op rejects its operand shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}")


class OpNode:
    """One executed op: inputs, per-input grad requirement, backward closure."""

    __slots__ = ("op", "inputs", "needs", "backward_fn")

    def __init__(self, op, inputs, needs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.needs = needs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "trainable", "node", "_rg")

    def __init__(self, data, trainable=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags["C_CONTIGUOUS"]:  # also keeps 0-d scalars 0-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.trainable = trainable
        self.node = None
        self._rg = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def requires_grad(self):
        # leaves answer from the live trainable flag so freezing takes effect
        # on the next graph; op outputs answer from what was recorded
        return self.trainable if self.node is None else self._rg

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy(), trainable=False)

    def __repr__(self):
        tag = " trainable" if self.trainable else ""
        return f"<Tensor {self.data.shape} {self.data.dtype}{tag}>"

    # thin operator sugar; the functional forms live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, shape):
        from . import ops

        return ops.reshape(self, shape)

    def transpose(self, axes):
        from . import ops

        return ops.transpose(self, axes)


def make_output(data, op, inputs, backward_fn):
    """Wrap an op result, recording the node only if some input needs grad."""
    out = Tensor(data)
    needs = tuple(t.requires_grad for t in inputs)
    if any(needs):
        out.node = OpNode(op, tuple(inputs), needs, backward_fn)
        out._rg = True
    return out


class OpGraph:
    """Topologically ordered record of the ops reachable from one output."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t.node is None:
                continue
            stack.append((t, True))
            for inp, need in zip(t.node.inputs, t.node.needs):
                if need and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)


def backward(loss):
    """Accumulate d(loss)/d(leaf) onto every trainable leaf under `loss`.

    Gradients on fan-out add; tensors with trainable=False keep grad=None.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.node is None:
        if loss.trainable:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    graph = OpGraph.from_output(loss)
    flowing = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.nodes):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        for inp, gi in zip(t.node.inputs, t.node.backward_fn(g)):
            if gi is None:
                continue
            if inp.node is None:
                if inp.trainable:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = flowing.get(id(inp))
                flowing[id(inp)] = gi if prev is None else prev + gi
