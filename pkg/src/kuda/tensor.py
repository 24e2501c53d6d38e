"""Minimal dense-tensor algebra with reverse-mode automatic differentiation.

Everything is float64. Tensors carry at most three axes (batch, length, dim);
attention heads are handled by slicing the dim axis, never by a fourth axis.
The graph is built eagerly: every op closes over its parents and a backward
rule, and ``backward`` on a scalar loss walks the graph in reverse topological
order.
"""

from __future__ import annotations

import math

import numpy as np

# When True, every forward op asserts its output is finite. Slow; enabled by
# the test suite and the gradcheck CLI verb.
CHECK_FINITE = False

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _erf(x: np.ndarray) -> np.ndarray:
    return np.vectorize(math.erf)(x)


class Tensor:
    """A node in the computation graph.

    Leaves created with ``requires_grad=True`` are parameters; their ``grad``
    buffer is populated by ``backward``. Interior nodes hold a backward
    closure that routes the incoming gradient to their parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "_backward_done")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ValueError(f"at most 3 axes supported, got shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward
        self.name = name
        self._backward_done = False
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {name or '<anon>'}")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already called on this loss; rebuild the graph first")
        self._backward_done = True

        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not _needs_grad(parent):
                        continue
                    acc = grads.get(id(parent))
                    if acc is None:
                        grads[id(parent)] = pg.astype(np.float64, copy=True)
                    else:
                        acc += pg
            elif node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward, name=None) -> Tensor:
    req = any(_needs_grad(p) for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (), _backward=backward if req else None, name=name)


def param(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise / affine ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        return [(a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape))]

    return _make(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        return [
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ]

    return _make(out, (a, b), bwd)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def bwd(g):
        return [(a, g * s)]

    return _make(a.data * s, (a,), bwd)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        return [(a, g * out)]

    return _make(out, (a,), bwd)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        return [(a, g / a.data)]

    return _make(out, (a,), bwd)


def square(a) -> Tensor:
    return mul(a, a)


def absolute(a) -> Tensor:
    """|a|, with subgradient 0 at 0 (np.sign(0) == 0)."""
    a = _as_tensor(a)
    sgn = np.sign(a.data)

    def bwd(g):
        return [(a, g * sgn)]

    return _make(np.abs(a.data), (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return [(a, g * mask)]

    return _make(a.data * mask, (a,), bwd)


def gelu(a) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = x * phi

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return [(a, g * (phi + x * pdf))]

    return _make(out, (a,), bwd)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        return [(a, g * (1.0 - out * out))]

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape / reduction ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return [(a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape))]

    return _make(out, (a, b), bwd)


def transpose_last(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)

    def bwd(g):
        return [(a, np.swapaxes(g, -1, -2))]

    return _make(np.swapaxes(a.data, -1, -2), (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        return [(a, g.reshape(a.shape))]

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pairs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pairs.append((t, g[tuple(idx)]))
        return pairs

    return _make(out, tuple(tensors), bwd)


def narrow(a, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of ``size`` entries along ``axis``."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return [(a, full)]

    return _make(a.data[idx], (a,), bwd)


def mean_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.shape[axis]

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [(a, np.broadcast_to(g / n, a.shape).copy())]

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def sum_axis(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, np.broadcast_to(gg, a.shape).copy())]

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [(a, out * (g - dot))]

    return _make(out, (a,), bwd)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = out.squeeze(axis)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, gg * soft)]

    return _make(out, (a,), bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = y * gain.data + bias.data
    d = a.shape[-1]

    def bwd(g):
        gy = g * gain.data
        ga = inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * y, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return [(a, ga), (gain, ggain), (bias, gbias)]

    return _make(out, (a, gain, bias), bwd)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is (d_in, d_out)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def embedding(table, ids) -> Tensor:
    """Row lookup: ids of shape (...,) index the first axis of ``table``."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: id out of range [0, {table.shape[0]}) in {ids}")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return [(table, full)]

    return _make(table.data[ids], (table,), bwd)


def mean(a) -> Tensor:
    """Grand mean over all entries, as a scalar."""
    a = _as_tensor(a)
    n = a.data.size

    def bwd(g):
        return [(a, np.full(a.shape, float(g) / n))]

    return _make(a.data.mean(), (a,), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradient(build_loss, leaves: list[Tensor], h: float = 1e-5, rtol: float = 1e-4) -> float:
    """Compare analytic gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the graph from the current leaf data on every
    call and return a scalar Tensor. Returns the worst relative error over all
    leaves; raises AssertionError if it exceeds ``rtol``.
    """
    for leaf in leaves:
        leaf.grad = np.zeros_like(leaf.data)
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad.copy()

        def f(x, _leaf=leaf):
            _leaf.data = x
            return build_loss().item()

        numeric = finite_difference_grad(f, leaf.data.copy(), h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
        worst = max(worst, rel)
        if rel > rtol:
            raise AssertionError(
                f"gradient check failed for leaf {leaf.name or '<anon>'}: rel err {rel:.3e} > {rtol:.0e}"
            )
    return worst
