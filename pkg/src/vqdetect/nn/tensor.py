"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the op that produced it; :meth:`Tensor.backward`
walks the graph in reverse topological order. Only the ops the detector
models need are provided.
"""
import numpy as np

from .. import kernels

DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype):
    """Switch the dtype used for new tensors (float64 for gradient checks)."""
    global DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                t, done = stack.pop()
                if done:
                    order.append(t)
                    continue
                if id(t) in seen:
                    continue
                seen.add(id(t))
                stack.append((t, True))
                for p in t._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and not t._parents:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not _needs_grad(p):
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable=True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.trainable = trainable


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _node(data, parents, backward):
    out = Tensor(data, dtype=data.dtype)
    live = tuple(p for p in parents if _needs_grad(p))
    if live:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def log(a):
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out, dtype=a.data.dtype), (a,), back)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape):
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b):
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis=1):
    tensors = list(tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[F,C,k,k]``."""
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if c != cw or k != k2:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    cols = kernels.im2col(x.data, k, stride, padding)
    wm = w.data.reshape(f, -1)
    out = (wm @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.data.dtype)

    def back(g):
        gm = g.transpose(1, 0, 2, 3).reshape(f, -1)
        gx = kernels.col2im(wm.T @ gm, x.shape, k, stride, padding) if _needs_grad(x) else None
        gw = (gm @ cols.T).reshape(w.shape) if _needs_grad(w) else None
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back)


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d` for kernel ``w[F,C,k,k]``: maps F channels to C.

    Output spatial size is ``(H - 1) * stride - 2 * padding + k + output_padding``;
    ``output_padding < stride`` picks among the input sizes a strided conv maps
    to the same shape.
    """
    if not 0 <= output_padding < max(stride, 1):
        raise ValueError("output_padding must be in [0, stride)")
    n, f, h, wd = x.shape
    fw, c, k, _ = w.shape
    if f != fw:
        raise ValueError(f"conv_transpose2d channel mismatch: input {x.shape}, kernel {w.shape}")
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wd - 1) * stride - 2 * padding + k + output_padding
    if ho < 1 or wo < 1:
        raise ValueError("conv_transpose2d: empty output")
    wm = w.data.reshape(f, -1)
    xm = x.data.transpose(1, 0, 2, 3).reshape(f, -1)
    out_shape = (n, c, ho, wo)
    out = kernels.col2im(wm.T @ xm, out_shape, k, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, c, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.data.dtype)

    def back(g):
        gcols = kernels.im2col(g, k, stride, padding)
        gx = (wm @ gcols).reshape(f, n, h, wd).transpose(1, 0, 2, 3) if _needs_grad(x) else None
        gw = (xm @ gcols.T).reshape(w.shape) if _needs_grad(w) else None
        if gx is not None:
            gx = np.ascontiguousarray(gx)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back)


def straight_through(encoder_out, quantized):
    """Forward value is ``quantized``; the gradient flows to ``encoder_out`` unchanged."""
    if encoder_out.shape != quantized.shape:
        raise ValueError(f"straight_through shape mismatch: {encoder_out.shape} vs {quantized.shape}")
    q = quantized.data if isinstance(quantized, Tensor) else np.asarray(quantized)
    return _node(q.astype(encoder_out.data.dtype, copy=True), (encoder_out,), lambda g: (g,))


def mse(a, b):
    """Mean squared error between two tensors (``b`` may be a constant)."""
    b = _wrap(b, a)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    return mean(square(a - b))


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on raw logits, numerically stable."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def back(g):
        s = 1.0 / (1.0 + np.exp(-z))
        return (g * (s - y) / n,)

    return _node(np.asarray(loss.mean(), dtype=z.dtype), (logits,), back)
