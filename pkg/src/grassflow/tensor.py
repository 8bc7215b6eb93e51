"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a numpy float array. Operations record their inputs and a
local backward rule; calling ``backward()`` on a scalar output walks the
recorded graph in reverse topological order and accumulates gradients into the
``grad`` field of every leaf that has ``requires_grad`` set.

All forward ops verify their outputs are finite and raise ``NonFiniteError``
otherwise, so NaN/Inf surfaces at the op that produced it instead of
propagating silently.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    """A dense n-d array node in a reverse-mode differentiation graph.

    Leaves are constructed directly; interior nodes are produced by the op
    functions in this module and carry a backward closure. Gradients
    accumulate (add, never overwrite) into ``grad``; clear them explicitly
    with ``zero_grad`` between backward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Reverse-accumulate gradients from this scalar into all leaves."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output, got shape %r"
                             % (self.data.shape,))
        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # convenience arithmetic; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported op")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return "Tensor(shape=%r, dtype=%s, requires_grad=%s)" % (
            self.data.shape, self.data.dtype.name, self.requires_grad)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative post-order; graphs from long training steps can be deep
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
        for p in node._prev:
            stack.append((p, False))
    return order


def _check_finite(arr: np.ndarray, opname: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite values produced by op %r" % opname)


def _node(data: np.ndarray, opname: str, parents: tuple[Tensor, ...],
          backward) -> Tensor:
    _check_finite(data, opname)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
    return out


def _ensure(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    data = a.data + b.data

    def bwd(g):
        return [(a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(g, b.data.shape))]

    return _node(data, "add", (a, b), bwd)


def sub(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    data = a.data - b.data

    def bwd(g):
        return [(a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(-g, b.data.shape))]

    return _node(data, "sub", (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    data = a.data * b.data

    def bwd(g):
        return [(a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape))]

    return _node(data, "mul", (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    data = x.data * c

    def bwd(g):
        return [(x, g * c)]

    return _node(data, "scale", (x,), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        return list(zip(tensors, parts))

    return _node(data, "concat", tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    data = x.data.reshape(shape)

    def bwd(g):
        return [(x, g.reshape(old))]

    return _node(data, "reshape", (x,), bwd)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    data = np.swapaxes(x.data, a, b)

    def bwd(g):
        return [(x, np.swapaxes(g, a, b))]

    return _node(data, "swapaxes", (x,), bwd)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return [(x, full)]

    return _node(data, "narrow", (x,), bwd)


def pad_rows(x: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad along the row (second-to-last) axis."""
    pad = [(0, 0)] * x.data.ndim
    pad[-2] = (before, after)
    data = np.pad(x.data, pad)
    idx = [slice(None)] * x.data.ndim
    idx[-2] = slice(before, before + x.data.shape[-2])
    idx = tuple(idx)

    def bwd(g):
        return [(x, g[idx])]

    return _node(data, "pad_rows", (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError("matmul inner extents differ: %r vs %r"
                         % (a.data.shape, b.data.shape))
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return [(a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape))]

    return _node(data, "matmul", (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T + b`` with weights stored [out, in]."""
    if x.data.shape[-1] != w.data.shape[-1]:
        raise ValueError("linear input extent %d does not match weight %r"
                         % (x.data.shape[-1], w.data.shape))
    data = np.matmul(x.data, w.data.T)
    if b is not None:
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        out_dim, in_dim = w.data.shape
        g2 = g.reshape(-1, out_dim)
        x2 = x.data.reshape(-1, in_dim)
        grads = [(x, np.matmul(g, w.data)), (w, g2.T @ x2)]
        if b is not None:
            grads.append((b, g2.sum(axis=0)))
        return grads

    return _node(data, "linear", parents, bwd)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError("row index out of range [0, %d)" % table.data.shape[0])
    data = table.data[idx]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return [(table, full)]

    return _node(data, "take_rows", (table,), bwd)


# ---------------------------------------------------------------------------
# activations and normalization

def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def bwd(g):
        return [(x, g * s * (1.0 - s))]

    return _node(s, "sigmoid", (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    # exact erf form: 0.5 x (1 + erf(x / sqrt(2)))
    inv_sqrt2 = x.data.dtype.type(0.7071067811865476)
    cdf = 0.5 * (1.0 + erf(x.data * inv_sqrt2))
    data = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * x.data.dtype.type(0.3989422804014327)
        return [(x, g * (cdf + x.data * pdf))]

    return _node(data, "gelu", (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return [(x, s * (g - dot))]

    return _node(s, "softmax", (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        gxhat = g * gain.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = (gxhat - m1 - xhat * m2) * inv
        lead = tuple(range(g.ndim - 1))
        return [(x, gx),
                (gain, (g * xhat).sum(axis=lead)),
                (bias, g.sum(axis=lead))]

    return _node(data, "layer_norm", (x, gain, bias), bwd)


def dropout(x: Tensor, p: float, training: bool, rng) -> Tensor:
    """Inverted dropout; exact identity when not training or p == 0.

    ``rng`` may be an integer seed or a numpy Generator.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must be in [0, 1), got %r" % p)
    if not training or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.data.shape) >= p)
    m = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    data = x.data * m

    def bwd(g):
        return [(x, g * m)]

    return _node(data, "dropout", (x,), bwd)


# ---------------------------------------------------------------------------
# reductions and losses

def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        return [(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))]

    return _node(data, "sum", (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    return scale(tsum(x), 1.0 / n)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over positions of -log softmax(logits)[target].

    ``logits`` is [..., V]; ``targets`` is an integer array of the leading
    shape.
    """
    idx = np.asarray(targets)
    vocab = logits.data.shape[-1]
    if idx.shape != logits.data.shape[:-1]:
        raise ValueError("targets shape %r does not match logits %r"
                         % (idx.shape, logits.data.shape))
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError("target index out of range [0, %d)" % vocab)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]
    n = max(idx.size, 1)
    data = np.asarray(-picked.sum() / n, dtype=logits.data.dtype)

    def bwd(g):
        p = np.exp(logp)
        np.put_along_axis(p, idx[..., None],
                          np.take_along_axis(p, idx[..., None], axis=-1) - 1.0,
                          axis=-1)
        return [(logits, (g / n) * p)]

    return _node(data, "cross_entropy", (logits,), bwd)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, leaves, h: float = 1e-5) -> float:
    """Max relative error between backward grads and central differences.

    ``f`` is a zero-argument function returning a scalar Tensor built from
    ``leaves``; it is re-evaluated with each leaf element perturbed by ±h.
    Run in double precision.
    """
    for leaf in leaves:
        leaf.zero_grad()
    f().backward()
    worst = 0.0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        g = (np.zeros_like(flat) if leaf.grad is None
             else leaf.grad.reshape(-1))
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-8)
            worst = max(worst, err)
    return worst
