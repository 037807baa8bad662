"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything the encoder, the heads, and the losses compute lives in a
``Tensor``. The graph is built eagerly by the op functions below, so an
operation this module does not define simply cannot enter a graph:
unsupported math fails where it is written, never inside ``backward()``.

All data is 64-bit: gradients are checked against central finite
differences and the slack for float32 noise is not worth the speed at
this scale.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Finite stand-in for -inf attention logits: exp(-1e9 - max) underflows to
# exactly 0.0 in float64, so masked positions get exactly zero weight while
# backward stays free of inf*0.
NEG_INF = -1e9


class Tensor:
    """A dense float64 array plus reverse-mode bookkeeping.

    data is row-major (C-contiguous); shape * strides never lie about it.
    After backward() on a scalar, every reachable tensor with
    requires_grad holds a grad of identical shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
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

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"expected a scalar tensor, got shape {self.data.shape}")

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # graph construction -------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from this scalar; accumulates into .grad."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar root, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, ax1, ax2):
        return swapaxes(self, ax1, ax2)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _attach(out, parents, backward):
    """Wire a result into the graph when any parent needs gradients."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# primitives -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    return _attach(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _attach(out, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2; lift vectors to [1, d]")
    out = Tensor(np.matmul(a.data, b.data))

    def backward():
        if a.requires_grad:
            ga = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _attach(out, (a, b), backward)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _attach(out, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape) / count)

    return _attach(out, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward():
        _accumulate(x, out.grad.reshape(x.data.shape))

    return _attach(out, (x,), backward)


def swapaxes(x, ax1, ax2):
    x = as_tensor(x)
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, ax1, ax2)))

    def backward():
        _accumulate(x, np.swapaxes(out.grad, ax1, ax2))

    return _attach(out, (x,), backward)


def take(x, idx):
    """Basic indexing/slicing; backward scatters into the source shape."""
    x = as_tensor(x)
    out = Tensor(x.data[idx])

    def backward():
        g = np.zeros_like(x.data)
        np.add.at(g, idx, out.grad)
        _accumulate(x, g)

    return _attach(out, (x,), backward)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward():
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(start, start + size)
            if t.requires_grad:
                _accumulate(t, out.grad[tuple(sl)])
            start += size

    return _attach(out, tuple(tensors), backward)


def embedding(table, ids):
    """Row lookup into table by integer ids; grads scatter-add per row."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        _accumulate(table, g)

    return _attach(out, (table,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def backward():
        g = out.grad
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _attach(out, (x,), backward)


def layer_norm(x, eps=1e-12):
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y)

    def backward():
        g = out.grad
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (g - gm - y * gym))

    return _attach(out, (x,), backward)


def gelu(x):
    """Exact erf-form GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = as_tensor(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * phi)

    def backward():
        density = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        _accumulate(x, out.grad * (phi + x.data * density))

    return _attach(out, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward():
        _accumulate(x, out.grad * (1.0 - t * t))

    return _attach(out, (x,), backward)


def l2_normalize(x, eps=1e-12):
    """Scale rows (last axis) to exactly unit L2 norm; rows with norm below
    eps are divided by eps instead so zero rows stay finite."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    r = np.maximum(norm, eps)
    y = x.data / r
    out = Tensor(y)

    def backward():
        g = out.grad
        # in the normal branch r == norm: d(x/|x|) = g/|x| - x (g.x)/|x|^3;
        # in the clamped branch r == eps is a constant, the map is linear
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        gx = np.where(norm > eps, g / r - x.data * dot / (r * r * r), g / r)
        _accumulate(x, gx)

    return _attach(out, (x,), backward)


def cross_entropy(logits, targets, weights=None):
    """Mean softmax cross-entropy over the last axis, log-sum-exp stabilized.

    targets holds integer class ids with shape logits.shape[:-1]; weights
    (same shape, nonnegative) selects/weights positions -- the MLM stage
    passes the mask of predicted positions. Mean is over total weight.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {logits.data.shape}"
        )
    if weights is None:
        w = np.ones(targets.shape, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("cross_entropy needs positive total weight")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = Tensor((-picked * w).sum() / total)

    def backward():
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        scale = (w / total)[..., None] * out.grad
        _accumulate(logits, (p - onehot) * scale)

    return _attach(out, (logits,), backward)


def forward_backward(root):
    """Run backward from a scalar root; map id(tensor) -> gradient array.

    Covers every requires_grad tensor reachable from the root. Named
    tensors are additionally keyed by name.
    """
    root.backward()
    grads = {}
    for node in _toposort(root):
        if node.requires_grad and node.grad is not None and node._backward is None:
            grads[id(node)] = node.grad
            if node.name is not None:
                grads[node.name] = node.grad
    return grads
