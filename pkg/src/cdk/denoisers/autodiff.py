"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes the output gradient back to them. ``Tensor.backward`` walks the
graph in reverse topological order. Nothing is recorded for tensors that do
not (transitively) require gradients, so inference pays no graph cost.

Images use the NHWC layout internally.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))


def _make(data, parents, backward) -> Tensor:
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def swish(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def bw(g):
        x._accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return _make(out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bw)


# --- shape -----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: x._accumulate(g.transpose(inv)))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        for x, gx in zip(xs, np.split(g, sizes, axis=axis)):
            if x.requires_grad:
                x._accumulate(gx)

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of an NHWC tensor."""
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bw(g):
        b, h, w, c = x.shape
        x._accumulate(g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)))

    return _make(out, (x,), bw)


# --- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if a.ndim >= 2 and b.ndim == 2:
                # fold batch axes into one matmul
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            b._accumulate(gb)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = xp.shape
    cols = np.empty((b, ho, wo, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(b * ho * wo, k * k * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution; ``x`` is NHWC, ``w`` is (k, k, Cin, Cout)."""
    k, _, cin, cout = w.shape
    pad = k // 2
    bsz, h, wd, c = x.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = w.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(bsz, ho, wo, cout)
    if b is not None:
        out += b.data

    def bw(g):
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            w._accumulate((cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(bsz, ho, wo, k, k, cin)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            x._accumulate(dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization over all non-batch axes of a channels-last tensor."""
    shape = x.shape
    b, c = shape[0], shape[-1]
    cg = c // groups
    x3 = x.data.reshape(b, -1, c)
    n = x3.shape[1] * cg

    def group_sum(v3):
        # (b, N, c) -> (b, 1, groups, 1): spatial sum first, it is the contiguous axis
        return v3.sum(axis=1).reshape(b, 1, groups, cg).sum(axis=-1, keepdims=True)

    xg = x3.reshape(b, -1, groups, cg)
    mu = group_sum(x3) / n
    xc = xg - mu
    var = group_sum((xc * xc).reshape(b, -1, c)) / n
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (xc * inv).reshape(shape)
    out = xhat * gamma.data + beta.data

    def bw(g):
        g3 = g.reshape(b, -1, c)
        xh3 = xhat.reshape(b, -1, c)
        gx = g3 * xh3
        if gamma.requires_grad:
            gamma._accumulate(gx.sum(axis=(0, 1)))
        if beta.requires_grad:
            beta._accumulate(g3.sum(axis=(0, 1)))
        if x.requires_grad:
            dxh = g3 * gamma.data
            s1 = group_sum(dxh)
            s2 = group_sum(gx * gamma.data)
            dx = (inv / n) * (n * dxh.reshape(xg.shape) - s1 - xh3.reshape(xg.shape) * s2)
            x._accumulate(dx.reshape(shape))

    return _make(out, (x, gamma, beta), bw)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred.data - target
    n = diff.size
    out = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=pred.data.dtype)
    return _make(out, (pred,), lambda g: pred._accumulate(g * (2.0 / n) * diff))
