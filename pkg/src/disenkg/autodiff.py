"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value is a numpy array wrapped in a :class:`Tensor`. While gradient
recording is enabled, each operation attaches its inputs and a local-gradient
closure to the output node; :func:`backward` replays those closures in
reverse topological order, accumulating gradients additively across fan-out.

Desk-scale by design: CPU only, no broadcasting in public ops (elementwise
operations demand equal shapes; row/column interactions have dedicated ops),
no higher-order derivatives.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray. Leaf tensors created with
    `requires_grad=True` are the trainable parameters; everything produced by
    an op while recording carries the closure needed for backprop.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A constant copy cut off from the graph."""
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents, backward_fn) -> Tensor:
    """Build an op output, recording the node when differentiation is on."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic (equal shapes only)

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out_data = a.data + b.data

    def bw():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out = _make(out_data, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out_data = a.data - b.data

    def bw():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    out = _make(out_data, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out_data = a.data * b.data

    def bw():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    out = _make(out_data, (a, b), bw)
    return out


def neg(a: Tensor) -> Tensor:
    def bw():
        _accum(a, -out.grad)

    out = _make(-a.data, (a,), bw)
    return out


def diag_scale(w: Tensor, v: Tensor) -> Tensor:
    """Apply diag(w) to v, i.e. elementwise scaling by a diagonal matrix."""
    return mul(w, v)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def bw():
        _accum(a, out.grad)

    out = _make(a.data + c, (a,), bw)
    return out


def mul_scalar(a: Tensor, c: float) -> Tensor:
    def bw():
        _accum(a, out.grad * c)

    out = _make(a.data * c, (a,), bw)
    return out


def scale_rows(m: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of matrix `m` by v[i]."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"scale_rows: got matrix {m.data.shape} and vector {v.data.shape}")
    out_data = m.data * v.data[:, None]

    def bw():
        _accum(m, out.grad * v.data[:, None])
        _accum(v, np.sum(out.grad * m.data, axis=1))

    out = _make(out_data, (m, v), bw)
    return out


def outer_sum(u: Tensor, v: Tensor) -> Tensor:
    """out[i, j] = u[i] + v[j]."""
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"outer_sum: need two vectors, got {u.data.shape} and {v.data.shape}")
    out_data = u.data[:, None] + v.data[None, :]

    def bw():
        _accum(u, np.sum(out.grad, axis=1))
        _accum(v, np.sum(out.grad, axis=0))

    out = _make(out_data, (u, v), bw)
    return out


# ---------------------------------------------------------------------------
# matrix products

def matmul(a: Tensor, b: Tensor) -> Tensor:
    an, bn = a.data.ndim, b.data.ndim
    if an not in (1, 2) or bn not in (1, 2):
        raise ShapeError(f"matmul: got ranks {an} and {bn}; only 1-D/2-D operands supported")
    inner_a = a.data.shape[-1]
    inner_b = b.data.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.data.shape} and {b.data.shape}")
    out_data = a.data @ b.data

    def bw():
        g = out.grad
        if an == 2 and bn == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif an == 2 and bn == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif an == 1 and bn == 2:
            _accum(a, g @ b.data.T)
            _accum(b, np.outer(a.data, g))
        else:  # dot product
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    out = _make(out_data, (a, b), bw)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need a matrix, got shape {a.data.shape}")

    def bw():
        _accum(a, out.grad.T)

    out = _make(a.data.T, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw():
        _accum(a, out.grad * (1.0 - t * t))

    out = _make(t, (a,), bw)
    return out


def relu(a: Tensor) -> Tensor:
    def bw():
        _accum(a, out.grad * (a.data > 0.0))

    out = _make(np.maximum(a.data, 0.0), (a,), bw)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    z[~pos] = ex / (1.0 + ex)
    return z


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def bw():
        _accum(a, out.grad * s * (1.0 - s))

    out = _make(s, (a,), bw)
    return out


def identity(a: Tensor) -> Tensor:
    def bw():
        _accum(a, out.grad)

    out = _make(a.data.copy(), (a,), bw)
    return out


ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid, "identity": identity}


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: input has non-positive entries")

    def bw():
        _accum(a, out.grad / a.data)

    out = _make(np.log(a.data), (a,), bw)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def bw():
        _accum(a, out.grad * e)

    out = _make(e, (a,), bw)
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), computed stably; log(1-sigmoid(x)) is log_sigmoid(-x)."""
    out_data = -np.logaddexp(0.0, -a.data)

    def bw():
        _accum(a, out.grad * _sigmoid(-a.data))

    out = _make(out_data, (a,), bw)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where unclipped."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bw():
        _accum(a, out.grad * inside)

    out = _make(np.clip(a.data, lo, hi), (a,), bw)
    return out


# ---------------------------------------------------------------------------
# softmax family

def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw():
        g = out.grad
        dot = np.sum(g * y, axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    out = _make(y, (a,), bw)
    return out


def segment_softmax(logits: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over groups of a 1-D logit vector; `segments[i]` names the group of entry i."""
    if logits.data.ndim != 1:
        raise ShapeError(f"segment_softmax: need a vector, got shape {logits.data.shape}")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, logits.data)
    e = np.exp(logits.data - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, e)
    y = e / denom[segments]

    def bw():
        g = out.grad
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, g * y)
        _accum(logits, y * (g - dot[segments]))

    out = _make(y, (logits,), bw)
    return out


# ---------------------------------------------------------------------------
# shape manipulation and gather/scatter

def reshape(a: Tensor, shape) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.data.shape} as {tuple(shape)}")

    def bw():
        _accum(a, out.grad.reshape(a.data.shape))

    out = _make(a.data.reshape(shape), (a,), bw)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw():
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out_data.ndim
            sl[axis] = slice(start, stop)
            _accum(t, out.grad[tuple(sl)])

    out = _make(out_data, tensors, bw)
    return out


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    """Gather rows (axis 0) or columns (axis 1); gradient scatter-adds back."""
    if axis not in (0, 1) or a.data.ndim < axis + 1:
        raise ShapeError(f"index_select: axis {axis} invalid for shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out_data = np.take(a.data, idx, axis=axis)

    def bw():
        g = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(g, idx, out.grad)
        else:
            gt = g.swapaxes(0, 1)
            np.add.at(gt, idx, out.grad.swapaxes(0, 1))
        _accum(a, g)

    out = _make(out_data, (a,), bw)
    return out


def segment_sum(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum entries (1-D) or rows (2-D) of `a` into `num_segments` buckets."""
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"segment_sum: need 1-D or 2-D data, got shape {a.data.shape}")
    out_shape = (num_segments,) + a.data.shape[1:]
    out_data = np.zeros(out_shape)
    np.add.at(out_data, segments, a.data)

    def bw():
        _accum(a, out.grad[segments])

    out = _make(out_data, (a,), bw)
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out_data = np.sum(a.data, axis=axis)

    def bw():
        if axis is None:
            _accum(a, np.full_like(a.data, float(out.grad)))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(out.grad, axis), a.data.shape).copy())

    out = _make(out_data, (a,), bw)
    return out


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = np.mean(a.data, axis=axis)

    def bw():
        if axis is None:
            _accum(a, np.full_like(a.data, float(out.grad) / n))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(out.grad, axis), a.data.shape) / n)

    out = _make(out_data, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# structured kernels

def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Valid 2-D convolution, stride 1: x is (B, C, H, W), w is (F, C, kh, kw)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and kernel, got {x.data.shape} and {w.data.shape}")
    B, C, H, W = x.data.shape
    F, Ck, kh, kw = w.data.shape
    if Ck != C or kh > H or kw > W:
        raise ShapeError(f"conv2d: kernel {w.data.shape} does not fit input {x.data.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out_data = np.einsum("bchwij,fcij->bfhw", windows, w.data)

    def bw():
        g = out.grad
        _accum(w, np.einsum("bchwij,bfhw->fcij", windows, g))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            Ho, Wo = g.shape[2], g.shape[3]
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + Ho, j:j + Wo] += np.einsum("bfhw,fc->bchw", g, w.data[:, :, i, j])
            _accum(x, gx)

    out = _make(out_data, (x, w), bw)
    return out


def circular_correlation(a: Tensor, b: Tensor) -> Tensor:
    """out[k] = sum_i a[i] * b[(k+i) mod d], rowwise for 2-D operands."""
    _check_same_shape("circular_correlation", a, b)
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"circular_correlation: need vectors or matrices, got shape {a.data.shape}")
    a2 = a.data if a.data.ndim == 2 else a.data[None, :]
    b2 = b.data if b.data.ndim == 2 else b.data[None, :]
    d = a2.shape[1]
    rng_d = np.arange(d)
    corr_idx = (rng_d[:, None] + rng_d[None, :]) % d   # [k, i] -> (k+i) % d
    conv_idx = (rng_d[None, :] - rng_d[:, None]) % d   # [k, j] -> (j-k) % d
    # accumulate term-by-term in index order so the result matches the naive
    # O(d^2) definition bit for bit
    out_data = np.zeros_like(a2)
    for i in range(d):
        out_data += a2[:, i:i + 1] * np.roll(b2, -i, axis=1)
    if a.data.ndim == 1:
        out_data = out_data[0]

    def bw():
        g = out.grad if out.grad.ndim == 2 else out.grad[None, :]
        ga = np.einsum("ek,eki->ei", g, b2[:, corr_idx])
        gb = np.einsum("ek,ekj->ej", g, a2[:, conv_idx])
        _accum(a, ga if a.data.ndim == 2 else ga[0])
        _accum(b, gb if b.data.ndim == 2 else gb[0])

    out = _make(out_data, (a, b), bw)
    return out


def l1_distance_all(q: Tensor, c: Tensor) -> Tensor:
    """out[b, n] = sum_t |q[b, t] - c[n, t]| against every candidate row of c."""
    if q.data.ndim != 2 or c.data.ndim != 2 or q.data.shape[1] != c.data.shape[1]:
        raise ShapeError(f"l1_distance_all: got shapes {q.data.shape} and {c.data.shape}")
    diff = q.data[:, None, :] - c.data[None, :, :]
    out_data = np.sum(np.abs(diff), axis=2)
    sign = np.sign(diff)

    def bw():
        g = out.grad
        _accum(q, np.einsum("bn,bnt->bt", g, sign))
        _accum(c, -np.einsum("bn,bnt->nt", g, sign))

    out = _make(out_data, (q, c), bw)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is a constant, so no new gradient rule."""
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def backward(loss: Tensor):
    """Accumulate d(loss)/d(node) over the recorded graph; loss must be scalar."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def zero_grads(params):
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


def grads(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backward pass returning one gradient array per named parameter.

    Parameters that do not participate in the loss get zero gradient.
    """
    zero_grads(params)
    backward(loss)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def grad_check(fn, params: dict[str, Tensor], step: float = 1e-5) -> float:
    """Compare analytic gradients of the scalar `fn()` against central differences.

    Returns the worst relative error over every coordinate of every parameter,
    with denominator max(|analytic|, |numeric|, 1e-8). `fn` must rebuild its
    graph from `params` on each call and be deterministic.
    """
    analytic = grads(fn(), params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Xavier/Glorot uniform init; fan-in/out taken from the last two dims."""
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[-1], shape[-2]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
