"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive computes its forward value with numpy and, when any input
requires gradients, records a vector-Jacobian closure on the output. A
backward pass replays the recorded graph once in reverse topological order
and accumulates gradients into the leaves. 64-bit floats throughout.
"""

from __future__ import annotations

import numpy as np


class TensorError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

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
        return float(self.data)

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    # arithmetic sugar; everything routes through the primitives below
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable leaf; optimizers key their state slots on the name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_CONSUMED = object()


class Tape:
    """Reverse-topological schedule of the graph reachable from one root."""

    def __init__(self, root: Tensor):
        order = []
        seen = set()
        stack = [(root, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.order = order  # topological: parents before children

    def run(self, root: Tensor):
        root.grad = np.ones_like(root.data)
        for node in reversed(self.order):
            if node._vjp is None:
                continue
            if node._vjp is _CONSUMED:
                raise TensorError("backward called twice without a new forward pass")
            grads = node._vjp(node.grad)
            for parent, gin in zip(node._parents, grads):
                if gin is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = gin.copy() if gin is not None else None
                else:
                    parent.grad = parent.grad + gin
            node._vjp = _CONSUMED
            if node._parents:
                node.grad = None  # free intermediates; leaves keep their grads


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable grad-requiring leaf."""
    if loss.data.size != 1:
        raise TensorError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TensorError("loss does not require gradients")
    if loss._vjp is _CONSUMED:
        raise TensorError("backward called twice without a new forward pass")
    Tape(loss).run(loss)


def _make(data, parents, vjp):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum grad over the axes numpy broadcasting introduced or stretched."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), vjp)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make(data, (a, b), vjp)


def maximum(a, b):
    """Elementwise max; on ties the gradient routes to the first argument."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * take_a, a.shape),
                _unbroadcast(g * (~take_a), b.shape))

    return _make(data, (a, b), vjp)


def broadcast_to(a, shape):
    a = _wrap(a)
    data = np.broadcast_to(a.data, shape).copy()

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise TensorError("matmul expects 2-d tensors")
    if a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _make(data, (a, b), vjp)


def transpose(a):
    a = _wrap(a)
    if a.ndim != 2:
        raise TensorError("transpose expects a 2-d tensor")

    def vjp(g):
        return (g.T,)

    return _make(a.data.T.copy(), (a,), vjp)


def reshape(a, shape):
    a = _wrap(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), vjp)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise TensorError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def narrow(a, axis, start, stop):
    """Contiguous slice [start, stop) along one axis."""
    a = _wrap(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _make(a.data[index].copy(), (a,), vjp)


class IndexPlan:
    """Precomputed scatter structure for repeated gathers with one index."""

    __slots__ = ("index", "n_rows", "order", "starts", "uniques")

    def __init__(self, index, n_rows):
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= n_rows):
            raise TensorError("gather index out of range")
        self.index = index
        self.n_rows = int(n_rows)
        self.order = np.argsort(index, kind="stable")
        si = index[self.order]
        if si.size:
            boundary = np.empty(si.shape[0], dtype=bool)
            boundary[0] = True
            boundary[1:] = si[1:] != si[:-1]
            self.starts = np.flatnonzero(boundary)
            self.uniques = si[self.starts]
        else:
            self.starts = np.empty(0, dtype=np.int64)
            self.uniques = np.empty(0, dtype=np.int64)


def gather_rows(a, plan):
    """Select rows a[index]; the backward pass scatter-adds into the source."""
    a = _wrap(a)
    if not isinstance(plan, IndexPlan):
        plan = IndexPlan(plan, a.shape[0])
    if plan.n_rows != a.shape[0]:
        raise TensorError("gather plan built for a different row count")
    data = a.data[plan.index]

    def vjp(g):
        out = np.zeros_like(a.data)
        if plan.index.size:
            gs = g[plan.order]
            out[plan.uniques] = np.add.reduceat(gs, plan.starts, axis=0)
        return (out,)

    return _make(data, (a,), vjp)


def take_per_row(a, cols):
    """One element per row, a[i, cols[i]], returned as a column."""
    a = _wrap(a)
    cols = np.asarray(cols, dtype=np.int64)
    if cols.shape[0] != a.shape[0]:
        raise TensorError("take_per_row needs one column index per row")
    if cols.size and (cols.min() < 0 or cols.max() >= a.shape[1]):
        raise TensorError("column index out of range")
    rows = np.arange(a.shape[0])
    data = a.data[rows, cols][:, None]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g[:, 0]
        return (out,)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def exp(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _make(data, (a,), vjp)


def log(a):
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    ad = a.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return (g / ad,)

    return _make(data, (a,), vjp)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), vjp)


def leaky_relu(a, slope=0.2):
    a = _wrap(a)
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)

    def vjp(g):
        return (g * scale,)

    return _make(a.data * scale, (a,), vjp)


def elu(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        neg = np.exp(np.minimum(a.data, 0.0)) - 1.0
    mask = a.data > 0
    data = np.where(mask, a.data, neg)

    def vjp(g):
        return (g * np.where(mask, 1.0, neg + 1.0),)

    return _make(data, (a,), vjp)


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), vjp)


def sigmoid(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), vjp)


def prelu(a, slope):
    """PReLU with a learned scalar slope shared across the tensor."""
    a, slope = _wrap(a), _wrap(slope)
    if slope.size != 1:
        raise TensorError("prelu slope must be a scalar")
    mask = a.data > 0
    s = slope.data.item()
    data = np.where(mask, a.data, s * a.data)
    ad = a.data

    def vjp(g):
        ga = g * np.where(mask, 1.0, s)
        gs = np.array((g * ad * (~mask)).sum()).reshape(slope.shape)
        return ga, gs

    return _make(data, (a, slope), vjp)


# ---------------------------------------------------------------------------
# softmax and reductions
# ---------------------------------------------------------------------------

def row_softmax(a):
    a = _wrap(a)
    if a.ndim != 2:
        raise TensorError("row_softmax expects a 2-d tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True) if a.shape[1] else a.data
    with np.errstate(over="ignore"):
        e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(data, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


# ---------------------------------------------------------------------------
# segment operations (the message-passing workhorses)
# ---------------------------------------------------------------------------

class SegmentIndex:
    """Precomputed row grouping; maps each row of a value matrix to a segment."""

    __slots__ = ("index", "num_segments", "order", "sorted_index", "counts",
                 "nonempty", "starts")

    def __init__(self, index, num_segments):
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= num_segments):
            raise TensorError("segment index out of range")
        self.index = index
        self.num_segments = int(num_segments)
        if index.size == 0 or np.all(index[1:] >= index[:-1]):
            self.order = None
            self.sorted_index = index
        else:
            self.order = np.argsort(index, kind="stable")
            self.sorted_index = index[self.order]
        self.counts = np.bincount(self.sorted_index, minlength=self.num_segments)
        self.nonempty = self.counts > 0
        cum = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.starts = cum[self.nonempty]


def _segment(seg, n_rows):
    if not isinstance(seg, SegmentIndex):
        raise TensorError("segment ops need a SegmentIndex")
    if seg.index.shape[0] != n_rows:
        raise TensorError(f"segment index has {seg.index.shape[0]} entries for "
                          f"{n_rows} rows")
    return seg


def _sorted_rows(data, seg):
    return data if seg.order is None else data[seg.order]


def segment_sum(a, seg: SegmentIndex):
    a = _wrap(a)
    seg = _segment(seg, a.shape[0])
    out = np.zeros((seg.num_segments,) + a.shape[1:])
    if seg.index.size:
        out[seg.nonempty] = np.add.reduceat(_sorted_rows(a.data, seg), seg.starts,
                                            axis=0)
    idx = seg.index

    def vjp(g):
        return (g[idx],)

    return _make(out, (a,), vjp)


def segment_mean(a, seg: SegmentIndex):
    a = _wrap(a)
    seg = _segment(seg, a.shape[0])
    out = np.zeros((seg.num_segments,) + a.shape[1:])
    if seg.index.size:
        sums = np.add.reduceat(_sorted_rows(a.data, seg), seg.starts, axis=0)
        out[seg.nonempty] = sums / seg.counts[seg.nonempty][:, None]
    inv = np.zeros(seg.num_segments)
    inv[seg.nonempty] = 1.0 / seg.counts[seg.nonempty]
    scale = inv[seg.index][:, None] if a.ndim > 1 else inv[seg.index]

    def vjp(g):
        return (g[seg.index] * scale,)

    return _make(out, (a,), vjp)


def segment_max(a, seg: SegmentIndex):
    """Per-segment columnwise max; empty segments produce zero rows.

    The gradient routes to the first maximal element in each segment.
    """
    a = _wrap(a)
    seg = _segment(seg, a.shape[0])
    xs = _sorted_rows(a.data, seg)
    out = np.zeros((seg.num_segments,) + a.shape[1:])
    arg_sorted = []  # (segment id, row position in sorted stream per column)
    if seg.index.size:
        out[seg.nonempty] = np.maximum.reduceat(xs, seg.starts, axis=0)
        ends = np.concatenate([seg.starts[1:], [seg.index.shape[0]]])
        for sid, s, e in zip(np.flatnonzero(seg.nonempty), seg.starts, ends):
            arg_sorted.append((sid, s + np.argmax(xs[s:e], axis=0)))

    def vjp(g):
        gs = np.zeros_like(xs)
        for sid, pos in arg_sorted:
            gs[pos, np.arange(gs.shape[1])] += g[sid]
        if seg.order is None:
            return (gs,)
        gout = np.zeros_like(gs)
        gout[seg.order] = gs
        return (gout,)

    return _make(out, (a,), vjp)


def segment_softmax(a, seg: SegmentIndex):
    """Softmax normalized within each segment; empty segments contribute nothing."""
    a = _wrap(a)
    seg = _segment(seg, a.shape[0])
    if seg.index.size == 0:
        return _make(np.zeros_like(a.data), (a,), lambda g: (np.zeros_like(a.data),))
    xs = _sorted_rows(a.data, seg)
    seg_max = np.maximum.reduceat(xs, seg.starts, axis=0)
    full_max = np.zeros((seg.num_segments,) + a.shape[1:])
    full_max[seg.nonempty] = seg_max
    with np.errstate(over="ignore"):
        e = np.exp(xs - full_max[seg.sorted_index])
    denom = np.zeros((seg.num_segments,) + a.shape[1:])
    denom[seg.nonempty] = np.add.reduceat(e, seg.starts, axis=0)
    ys = e / denom[seg.sorted_index]
    if seg.order is None:
        data = ys
    else:
        data = np.zeros_like(ys)
        data[seg.order] = ys

    def vjp(g):
        with np.errstate(invalid="ignore", over="ignore"):
            gs = _sorted_rows(g, seg)
            t = ys * gs
            dot = np.zeros((seg.num_segments,) + a.shape[1:])
            dot[seg.nonempty] = np.add.reduceat(t, seg.starts, axis=0)
            gxs = ys * (gs - dot[seg.sorted_index])
        if seg.order is None:
            return (gxs,)
        gout = np.zeros_like(gxs)
        gout[seg.order] = gxs
        return (gout,)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# regularization layers
# ---------------------------------------------------------------------------

def dropout(a, p, training, rng=None):
    """Inverted dropout: scaling happens at train time, eval is the identity."""
    a = _wrap(a)
    if not 0.0 <= p < 1.0:
        raise TensorError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise TensorError("training-mode dropout needs an rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def vjp(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), vjp)


class BatchNormState:
    """Running statistics for one batch-norm site."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batch_norm(a, gamma, beta, state: BatchNormState, training: bool):
    """Per-feature normalization over the row batch, then affine."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    n = a.shape[0]
    if training:
        mu = a.data.mean(axis=0)
        var = a.data.var(axis=0)  # biased: normalized batch has unit variance
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (a.data - mu) * inv
        m = state.momentum
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased

        def vjp(g):
            dxhat = g * gamma.data
            dvar = (dxhat * (a.data - mu)).sum(axis=0) * (-0.5) * inv ** 3
            dmu = (-dxhat * inv).sum(axis=0) + dvar * (-2.0 / n) * (a.data - mu).sum(axis=0)
            gx = dxhat * inv + dvar * 2.0 * (a.data - mu) / n + dmu / n
            ggamma = (g * xhat).sum(axis=0).reshape(gamma.shape)
            gbeta = g.sum(axis=0).reshape(beta.shape)
            return gx, ggamma, gbeta
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (a.data - state.running_mean) * inv

        def vjp(g):
            gx = g * gamma.data * inv
            ggamma = (g * xhat).sum(axis=0).reshape(gamma.shape)
            gbeta = g.sum(axis=0).reshape(beta.shape)
            return gx, ggamma, gbeta

    data = xhat * gamma.data + beta.data
    return _make(data, (a, gamma, beta), vjp)


def l2_normalize(a, axis=1):
    """Scale rows to unit Euclidean norm; zero rows stay zero."""
    a = _wrap(a)
    norm = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    data = a.data / safe
    ad = a.data

    def vjp(g):
        dot = (g * ad).sum(axis=axis, keepdims=True)
        gx = g / safe - ad * dot / safe ** 3
        return (np.where(zero, 0.0, gx),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# numerical checking
# ---------------------------------------------------------------------------

def grad_check(f, params, eps=1e-3, max_coords=24, rng=None):
    """Max relative error of analytic gradients against central differences.

    f must be deterministic (dropout off, batch norm frozen or eval). Large
    parameters are probed on a seeded sample of coordinates.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise TensorError("grad_check needs a scalar function")
    backward(out)
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        ana = analytic[id(p)].reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(f().data)
            flat[c] = orig - eps
            f_minus = float(f().data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1.0, abs(numeric), abs(ana[c]))
            worst = max(worst, abs(numeric - ana[c]) / denom)
    for p in params:
        p.grad = None
    return worst
