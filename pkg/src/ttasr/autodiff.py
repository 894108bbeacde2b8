"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer; operations
record a vector-Jacobian closure so `backward()` on a scalar accumulates
exact gradients through the recorded graph. The op set is the minimum the
acoustic/label encoders, joint network, and losses need; everything runs
in whatever float dtype the inputs carry (float64 for gradient checks,
float32 for training).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording (decoding, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("implicit gradient only defined for scalars")
            grad = np.ones_like(self.data)
        topo = _toposort(self)
        self.grad = np.asarray(grad)
        for node in topo:
            if node._vjp is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pgrad

    # operator sugar; every implementation lives at module level
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _node(data, parents, vjp) -> Tensor:
    """Result tensor; records the graph only when grads are live."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return list(reversed(order))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def vjp(g):
        return (
            _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape),
            _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape),
        )

    return _node(a.data @ b.data, (a, b), vjp)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _node(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, x.data.shape).copy(),)

    return _node(x.data.mean(axis=axis, keepdims=keepdims), (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _node(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),)
    )


def swapaxes(x, a, b) -> Tensor:
    x = _as_tensor(x)
    return _node(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def getitem(x, key) -> Tensor:
    x = _as_tensor(x)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _node(x.data[key], (x,), vjp)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def softmax(x, axis=-1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(
        y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


def log_softmax(x, axis=-1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _node(
        y, (x,), lambda g: (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
    )


def masked_softmax(x, mask: np.ndarray, axis=-1) -> Tensor:
    """Softmax with positions where mask is False given exactly zero weight.

    Masked scores are replaced by -inf before the stable softmax, so
    out-of-window keys cannot perturb in-window outputs even at the last
    bit. Every slice along `axis` must keep at least one allowed position.
    """
    x = _as_tensor(x)
    scores = np.where(mask, x.data, -np.inf)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(
        y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


def standardize(x, eps: float, axis=-1) -> Tensor:
    """(x - mean) / sqrt(var + eps) along one axis (layer-norm core)."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def vjp(g):
        n = x.data.shape[axis]
        gsum = g.sum(axis=axis, keepdims=True)
        gysum = (g * y).sum(axis=axis, keepdims=True)
        return ((inv / n) * (n * g - gsum - y * gysum),)

    return _node(y, (x,), vjp)


def embedding(table, ids) -> Tensor:
    """Row gather with scatter-add backward; `ids` is a constant int array."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(table.data[ids], (table,), vjp)


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d(x, w, b, strides) -> Tensor:
    """2-D convolution with ceil-mode same padding.

    x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out,);
    strides: (sh, sw). Output: (C_out, ceil(H/sh), ceil(W/sw)).
    Implemented as im2col + one matmul; the backward scatters column
    gradients back through the same slicing pattern.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    c_in, height, width = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if c_in_w != c_in:
        raise ValueError(f"conv channels mismatch: input {c_in}, weight {c_in_w}")
    sh, sw = strides
    out_h, pad_top, pad_bottom = _same_padding(height, kh, sh)
    out_w, pad_left, pad_right = _same_padding(width, kw, sw)

    padded = np.pad(x.data, ((0, 0), (pad_top, pad_bottom), (pad_left, pad_right)))
    cols = np.empty((c_in, kh, kw, out_h, out_w), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[
                :, i : i + sh * out_h : sh, j : j + sw * out_w : sw
            ]
    cols2d = cols.reshape(c_in * kh * kw, out_h * out_w)
    w2d = w.data.reshape(c_out, c_in * kh * kw)
    y = (w2d @ cols2d + b.data[:, None]).reshape(c_out, out_h, out_w)

    def vjp(g):
        g2d = g.reshape(c_out, out_h * out_w)
        grad_w = (g2d @ cols2d.T).reshape(w.data.shape)
        grad_b = g2d.sum(axis=1)
        grad_x = None
        if x.requires_grad:
            grad_cols = (w2d.T @ g2d).reshape(c_in, kh, kw, out_h, out_w)
            grad_padded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[
                        :, i : i + sh * out_h : sh, j : j + sw * out_w : sw
                    ] += grad_cols[:, i, j]
            grad_x = grad_padded[
                :, pad_top : pad_top + height, pad_left : pad_left + width
            ]
        return (grad_x, grad_w, grad_b)

    return _node(y, (x, w, b), vjp)


def conv2d_output_len(size: int, stride: int) -> int:
    """Ceil-mode output length of one same-padded conv dimension."""
    return -(-size // stride)


def custom_op(data, parents, vjp) -> Tensor:
    """Graph node for an externally computed forward/backward pair.

    The dynamic-programming losses compute their exact gradients outside
    the op set; this splices them into the recorded graph.
    """
    return _node(data, tuple(_as_tensor(p) for p in parents), vjp)
