"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap flat row-major numpy arrays (rank <= 4). Every differentiable
operation records its parents and a backward closure; calling ``backward`` on
a scalar loss walks the graph once in reverse topological order and
accumulates gradients additively across fan-out.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, MaskError, NumericError, ShapeError, UsageError

MAX_RANK = 4

_FLOAT_DTYPES = (np.float32, np.float64)


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


class Tensor:
    """Dense float array participating in a reverse-mode graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds supported maximum {MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scalar_mul(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    def __rmul__(self, other):
        return scalar_mul(self, float(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _make(data, parents, backward_fn):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _acc(t, g):
    """Accumulate gradient g into tensor t (fan-out sums additively)."""
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product; rank-3 operands are batched over the leading axis."""
    _require_finite("matmul lhs", a.data)
    _require_finite("matmul rhs", b.data)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)
    out = _make(out_data, (a, b), None)

    def backward_fn():
        g = out.grad
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        while ga.ndim > a.ndim:
            ga = ga.sum(axis=0)
        while gb.ndim > b.ndim:
            gb = gb.sum(axis=0)
        _acc(a, ga)
        _acc(b, gb)

    out._backward_fn = backward_fn
    return out


def add(a, b):
    """Elementwise sum; a rank-1 rhs broadcasts along the last axis (bias add)."""
    _require_finite("add lhs", a.data)
    _require_finite("add rhs", b.data)
    bias = b.ndim == 1 and a.ndim > 1
    if bias:
        if b.shape[0] != a.shape[-1]:
            raise ShapeError(f"bias length {b.shape[0]} vs last axis {a.shape[-1]}")
    elif a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b), None)

    def backward_fn():
        g = out.grad
        _acc(a, g)
        if bias:
            _acc(b, g.reshape(-1, b.shape[0]).sum(axis=0))
        else:
            _acc(b, g)

    out._backward_fn = backward_fn
    return out


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    _require_finite("mul lhs", a.data)
    _require_finite("mul rhs", b.data)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = _make(a.data * b.data, (a, b), None)

    def backward_fn():
        _acc(a, out.grad * b.data)
        _acc(b, out.grad * a.data)

    out._backward_fn = backward_fn
    return out


def scalar_mul(a, c):
    _require_finite("scalar_mul input", a.data)
    c = float(c)
    if not np.isfinite(c):
        raise NumericError("non-finite scalar multiplier")
    out = _make(a.data * c, (a,), None)
    out._backward_fn = lambda: _acc(a, out.grad * c)
    return out


def relu(a):
    _require_finite("relu input", a.data)
    out = _make(np.maximum(a.data, 0), (a,), None)
    out._backward_fn = lambda: _acc(a, out.grad * (a.data > 0))
    return out


def sigmoid(a):
    _require_finite("sigmoid input", a.data)
    # tanh form is stable for large |x|; clamp keeps the output strictly
    # inside (0, 1) even where tanh saturates
    fi = np.finfo(a.data.dtype)
    s = np.clip(0.5 * (1.0 + np.tanh(0.5 * a.data)), fi.tiny, 1.0 - fi.epsneg)
    out = _make(s, (a,), None)
    out._backward_fn = lambda: _acc(a, out.grad * s * (1.0 - s))
    return out


def transpose(a):
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose requires rank >= 2")
    out = _make(np.swapaxes(a.data, -1, -2), (a,), None)
    out._backward_fn = lambda: _acc(a, np.swapaxes(out.grad, -1, -2))
    return out


def concat_last(tensors):
    """Concatenate along the last axis."""
    tensors = list(tensors)
    lead = tensors[0].shape[:-1]
    for t in tensors:
        _require_finite("concat input", t.data)
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat leading shapes differ: {t.shape[:-1]} vs {lead}")
    out = _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), None)

    def backward_fn():
        offset = 0
        for t in tensors:
            w = t.shape[-1]
            _acc(t, out.grad[..., offset:offset + w])
            offset += w

    out._backward_fn = backward_fn
    return out


def mean(a, axis=None):
    """Mean reduction over all elements (axis=None) or over the given axes."""
    _require_finite("mean input", a.data)
    out_data = a.data.mean(axis=axis)
    out = _make(np.asarray(out_data), (a,), None)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward_fn():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis=axis)
        _acc(a, np.broadcast_to(g, a.shape) / count)

    out._backward_fn = backward_fn
    return out


def reshape(a, shape):
    out = _make(a.data.reshape(shape), (a,), None)
    out._backward_fn = lambda: _acc(a, out.grad.reshape(a.shape))
    return out


def index(a, key):
    """Basic slicing; gradient scatters back into the sliced positions."""
    out = _make(a.data[key], (a,), None)

    def backward_fn():
        g = np.zeros_like(a.data)
        np.add.at(g, key, out.grad)
        _acc(a, g)

    out._backward_fn = backward_fn
    return out


def scale_channels(a, s):
    """Multiply channel c of a (C x ... ) by scalar s[c]."""
    if s.ndim != 1 or s.shape[0] != a.shape[0]:
        raise ShapeError(f"channel scale length {s.shape} vs channels {a.shape[0]}")
    factor = s.data.reshape((-1,) + (1,) * (a.ndim - 1))
    out = _make(a.data * factor, (a, s), None)

    def backward_fn():
        _acc(a, out.grad * factor)
        _acc(s, (out.grad * a.data).reshape(a.shape[0], -1).sum(axis=1))

    out._backward_fn = backward_fn
    return out


def softmax(a, axis=-1):
    """Numerically stable softmax along one axis (max subtraction)."""
    _require_finite("softmax input", a.data)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), None)

    def backward_fn():
        g = out.grad
        dot = (g * s).sum(axis=axis, keepdims=True)
        _acc(a, s * (g - dot))

    out._backward_fn = backward_fn
    return out


def layer_norm(x, gain, bias, epsilon=1e-5):
    """Normalize last-axis slices to zero mean / unit variance, then affine.

    Zero-variance slices come out as the bias (variance floor epsilon).
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    _require_finite("layer_norm input", x.data)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu) * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), None)

    def backward_fn():
        g = out.grad
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        _acc(x, (gx_hat - m1 - xhat * m2) * inv)
        _acc(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _acc(bias, g.reshape(-1, d).sum(axis=0))

    out._backward_fn = backward_fn
    return out


class CounterRng:
    """Counter-based seeded generator: draw n is a pure function of (seed, n).

    Re-running a training session replays the exact same dropout masks.
    """

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def uniform(self, shape):
        gen = np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))
        self.counter += 1
        return gen.random(shape)


def dropout(x, rate, training, rng=None):
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        out = _make(x.data.copy(), (x,), None)
        out._backward_fn = lambda: _acc(x, out.grad)
        return out
    if rng is None:
        raise UsageError("training-mode dropout requires a seeded generator")
    keep = (rng.uniform(x.shape) >= rate).astype(x.data.dtype)
    factor = keep / (1.0 - rate)
    out = _make(x.data * factor, (x,), None)
    out._backward_fn = lambda: _acc(x, out.grad * factor)
    return out


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "elementwise-mul": mul,
    "scalar-mul": scalar_mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "transpose": transpose,
    "concat-last-axis": lambda *ts: concat_last(ts),
    "mean-reduce": mean,
    "broadcast-add-bias": add,
}


def primitive_forward(kind, *inputs):
    """Dispatch a primitive by name. Convenience front door over the ops above."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise UsageError(f"unknown primitive kind {kind!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from loss."""
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn()


def finite_difference_check(f, x, step=1e-3, sample=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    f maps the Tensor x to a scalar Tensor and must be deterministic. When
    sample is given, only that many randomly chosen coordinates are probed
    (the analytic gradient is still the full backward pass).
    """
    if step <= 0:
        raise UsageError("finite-difference step must be positive")
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    idxs = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        gen = rng if rng is not None else np.random.default_rng(0)
        idxs = gen.choice(flat.size, size=sample, replace=False)
    worst = 0.0
    aflat = analytic.reshape(-1)
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x).item()
        flat[i] = orig - step
        lo = f(x).item()
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * step)
        denom = max(1.0, abs(aflat[i]), abs(numeric))
        worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
