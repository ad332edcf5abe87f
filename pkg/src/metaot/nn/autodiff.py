"""A small reverse-mode tape over numpy arrays.

Backward rules are written with the same differentiable ops, so calling
``grad(..., create_graph=True)`` yields cotangents that can themselves be
differentiated. That is what the gradient-of-gradient terms in the W2GN
loss need.
"""
import numpy as np
from scipy.special import expit

_RECORDING = [True]


class Tensor:
    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(value, dtype=None):
    return Tensor(np.asarray(value, dtype=dtype))


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(value, parents, vjp):
    if _RECORDING[0]:
        return Tensor(value, parents, vjp)
    return Tensor(value)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    out = sum_(g, axis=axes, keepdims=True) if axes else g
    return reshape(out, shape)


def add(a, b):
    a, b = _pair(a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(neg(g), b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (unbroadcast(mul(g, b), a.shape), unbroadcast(mul(g, a), b.shape)))


def neg(a):
    return _node(-a.value, (a,), lambda g: (neg(g),))


def square(a):
    return _node(np.square(a.value), (a,), lambda g: (mul(g, mul(a, 2.0)),))


def matmul(a, b):
    a, b = _pair(a, b)
    return _node(a.value @ b.value, (a, b),
                 lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a):
    return _node(a.value.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape):
    old = a.shape
    return _node(np.reshape(a.value, shape), (a,), lambda g: (reshape(g, old),))


def broadcast_to(a, shape):
    old = a.shape
    return _node(np.broadcast_to(a.value, shape), (a,), lambda g: (unbroadcast(g, old),))


def sum_(a, axis=None, keepdims=False):
    old = a.shape

    def vjp(g):
        if not keepdims and axis is not None:
            g = reshape(g, _kept_shape(old, axis))
        elif not keepdims:
            g = reshape(g, (1,) * len(old))
        return (broadcast_to(g, old),)

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def _kept_shape(shape, axis):
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = {ax % len(shape) for ax in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def mean(a, axis=None, keepdims=False):
    count = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def sigmoid(a):
    s_val = expit(a.value)
    out = Tensor(s_val)

    def vjp(g):
        s = out
        return (mul(g, mul(s, sub(1.0, s))),)

    node = _node(s_val, (a,), vjp)
    out.parents, out.vjp = node.parents, node.vjp
    return out


def softplus(a):
    return _node(np.logaddexp(0, a.value).astype(a.dtype), (a,),
                 lambda g: (mul(g, sigmoid(a)),))


def relu(a):
    mask = (a.value > 0).astype(a.dtype)
    return _node(a.value * mask, (a,), lambda g: (mul(g, mask),))


def _toposort(outputs):
    order, seen = [], set()
    stack = [(o, False) for o in outputs]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output, inputs, cotangent=None, create_graph=False):
    """Gradients of ``<output, cotangent>`` with respect to each tensor in ``inputs``.

    ``cotangent`` defaults to ones (so a scalar output gives its plain
    gradient). Inputs that do not influence the output get zero gradients.
    """
    if cotangent is None:
        cotangent = Tensor(np.ones_like(output.value))
    else:
        cotangent = _lift(cotangent, output)
    order = _toposort([output])
    targets = {id(t) for t in inputs}
    needed = set()
    for node in order:
        if id(node) in targets or any(id(p) in needed for p in node.parents):
            needed.add(id(node))
    grads = {id(output): cotangent}
    prev = _RECORDING[0]
    _RECORDING[0] = create_graph
    try:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or not node.parents or id(node) not in needed:
                continue
            local = node.vjp(g)
            for p, gp in zip(node.parents, local):
                if id(p) not in needed:
                    continue
                if id(p) in grads:
                    grads[id(p)] = add(grads[id(p)], gp)
                else:
                    grads[id(p)] = gp
    finally:
        _RECORDING[0] = prev
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.value)))
    return out
