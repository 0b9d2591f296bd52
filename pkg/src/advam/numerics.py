"""Dense float64 tensors with reverse-mode differentiation.

Each differentiable op records its parents and a closure mapping the output
gradient to per-parent gradients. ``Tensor.backward`` walks the recorded
graph once in reverse topological order and then frees it.
"""
from contextlib import contextmanager
import math

import numpy as np

from . import _accel


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GraphError(RuntimeError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._freed = False

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        t._freed = False
        return t

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
    def is_leaf(self):
        return self._backward is None and not self._freed

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self._op}" if self._op != "leaf" else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor._wrap(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _check_live(t):
    if t._freed:
        raise GraphError(f"graph through {t._op} was already consumed by a backward pass")


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every requires_grad ancestor."""
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    _check_live(root)
    if not root.requires_grad:
        raise GraphError("root does not depend on any tensor that requires grad")

    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        _check_live(node)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._freed = True


# elementwise ------------------------------------------------------------------

def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a, c):
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def square(a):
    return mul(a, a)


def leaky_relu(x, slope=0.2):
    # gradient at exactly 0 is taken as the slope
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),), "relu")


# reductions and reshapes -----------------------------------------------------------

def sum(x):
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x):
    n = x.size
    shape = x.shape
    return _make(np.array(x.data.sum() / n), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) == 1:
        rest = math.prod(s for s in shape if s != -1)
        shape = tuple(x.size // rest if s == -1 else s for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for k, (d1, d2) in enumerate(zip(t.shape, ref)) if k != axis
        ):
            raise ShapeError(f"concat along axis {axis}: shapes {ref} and {t.shape} are incompatible")
    sizes = [t.shape[axis] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(lo, hi), axis=axis))
            for lo, hi in zip(edges[:-1], edges[1:])
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw, "concat")


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def _bw(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), _bw, "slice")


# linear algebra ------------------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    def _bw(g):
        da = g @ b.data.T if a.requires_grad else None
        db = a.data.T @ g if b.requires_grad else None
        return da, db

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


def add_bias(x, b):
    """Add a per-feature (2-D input) or per-channel (4-D input) bias."""
    if b.ndim != 1 or x.ndim not in (2, 4) or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match input {x.shape}")
    if x.ndim == 2:
        return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    return _make(
        x.data + b.data[None, :, None, None],
        (x, b),
        lambda g: (g, g.sum(axis=(0, 2, 3))),
        "add_bias",
    )


# convolution -----------------------------------------------------------------------

def conv_output_size(n, k, s, padding):
    if padding == "same":
        return -(-n // s)
    if padding == "valid":
        return (n - k) // s + 1
    raise ValueError(f"unknown padding {padding!r}")


def _pad_amounts(n, k, s, padding):
    if padding == "valid":
        return 0, 0
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _geometry(h, w, kh, kw, sh, sw, padding):
    if sh < 1 or sw < 1:
        raise ShapeError(f"strides must be >= 1, got ({sh}, {sw})")
    pt, pb = _pad_amounts(h, kh, sh, padding)
    pl, pr = _pad_amounts(w, kw, sw, padding)
    if kh > h + pt + pb or kw > w + pl + pr:
        raise ShapeError(
            f"kernel {(kh, kw)} larger than padded input {(h + pt + pb, w + pl + pr)}"
        )
    ho = conv_output_size(h, kh, sh, padding)
    wo = conv_output_size(w, kw, sw, padding)
    return ho, wo, (pt, pb, pl, pr)


def _batched(fn):
    # lets the conv ops accept an unbatched C x H x W input
    def wrapper(x, *args, **kwargs):
        if x.ndim == 3:
            out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(out, out.shape[1:])
        if x.ndim != 4:
            raise ShapeError(f"{fn.__name__}: expected C x H x W or N x C x H x W, got {x.shape}")
        return fn(x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_batched
def conv2d(x, w, stride=(1, 1), padding="valid"):
    """Cross-correlate ``x`` (N x C_in x H x W) with ``w`` (C_out x C_in x kh x kw)."""
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[1] != c:
        raise ShapeError(f"conv2d: filters {w.shape} do not match input {x.shape}")
    cout, _, kh, kw = w.shape
    sh, sw = _pair(stride)
    ho, wo, (pt, pb, pl, pr) = _geometry(h, wd, kh, kw, sh, sw, padding)
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _accel.im2col(xpad, kh, kw, sh, sw, ho, wo)
    w2 = w.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    hp, wp = xpad.shape[2:]

    def _bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        dw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dxpad = _accel.col2im(w2.T @ g2, n, c, hp, wp, kh, kw, sh, sw, ho, wo)
            dx = np.ascontiguousarray(dxpad[:, :, pt:pt + h, pl:pl + wd])
        return dx, dw

    return _make(np.ascontiguousarray(out), (x, w), _bw, "conv2d")


@_batched
def conv2d_transpose(y, w, stride=(1, 1), padding="valid", output_size=None):
    """Adjoint of :func:`conv2d` with the same filters ``w`` (C_y x C_out x kh x kw).

    ``output_size`` picks the (H, W) of the result when several sizes map onto
    the input under the forward conv; the default is the largest for "same"
    padding and the exact inverse for "valid".
    """
    n, cy, hy, wy = y.shape
    if w.ndim != 4 or w.shape[0] != cy:
        raise ShapeError(f"conv2d_transpose: filters {w.shape} do not match input {y.shape}")
    _, cx, kh, kw = w.shape
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ShapeError(f"strides must be >= 1, got ({sh}, {sw})")
    if output_size is None:
        if padding == "same":
            h, wd = hy * sh, wy * sw
        else:
            h, wd = (hy - 1) * sh + kh, (wy - 1) * sw + kw
    else:
        h, wd = (int(v) for v in output_size[-2:])
    ho, wo, (pt, pb, pl, pr) = _geometry(h, wd, kh, kw, sh, sw, padding)
    if (ho, wo) != (hy, wy):
        raise ShapeError(
            f"conv2d_transpose: output {(h, wd)} does not map back to input {(hy, wy)}"
        )
    hp, wp = h + pt + pb, wd + pl + pr
    y2 = y.data.transpose(1, 0, 2, 3).reshape(cy, -1)
    w2 = w.data.reshape(cy, -1)
    xpad = _accel.col2im(w2.T @ y2, n, cx, hp, wp, kh, kw, sh, sw, hy, wy)
    out = np.ascontiguousarray(xpad[:, :, pt:pt + h, pl:pl + wd])

    def _bw(g):
        gpad = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols = _accel.im2col(gpad, kh, kw, sh, sw, hy, wy)
        dy = None
        if y.requires_grad:
            dy = np.ascontiguousarray((w2 @ cols).reshape(cy, n, hy, wy).transpose(1, 0, 2, 3))
        dw = (y2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        return dy, dw

    return _make(out, (y, w), _bw, "conv2d_transpose")


# softmax family -----------------------------------------------------------------

def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite input")


def softmax(x):
    """Row-wise softmax over the last axis (1-D or 2-D input)."""
    _check_finite(x.data, "softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), _bw, "softmax")


def log_softmax_array(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected N x K logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels of shape {labels.shape} for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    _check_finite(logits.data, "cross_entropy")
    logp = log_softmax_array(logits.data)
    rows = np.arange(n)
    value = -logp[rows, labels].sum() / n

    def _bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (float(g) / n),)

    return _make(np.array(value), (logits,), _bw, "cross_entropy")


# gradient checking -----------------------------------------------------------------

def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


# central-difference stencils as (k, c_k): f' ~ sum c_k (f(x+kh) - f(x-kh)) / h.
# Pairing the symmetric points keeps the estimate exactly zero when f ignores x.
_STENCILS = {
    2: ((1, 0.5),),
    4: ((1, 2 / 3), (2, -1 / 12)),
}


def _stencil(order):
    if order not in _STENCILS:
        raise ValueError(f"stencil order must be one of {sorted(_STENCILS)}, got {order}")
    return _STENCILS[order]


def _numeric_partial(evaluate, flat, i, h, order):
    orig = flat[i]
    total = 0.0
    for k, c in _stencil(order):
        flat[i] = orig + k * h
        up = evaluate()
        flat[i] = orig - k * h
        total += c * (up - evaluate())
    flat[i] = orig
    return total / h


def _best_rel_err(analytic, evaluate, flat, i, steps, order):
    return min(float(_rel_err(analytic, _numeric_partial(evaluate, flat, i, h, order))) for h in steps)


def grad_check(f, point, h=1e-6, order=2):
    """Max relative error between backward() and finite differences of ``f`` at ``point``.

    ``h`` may be a sequence of step sizes; each coordinate then reports its
    best agreement over them, so a step that straddles a kink of
    (leaky) ReLU does not mask a correct gradient. ``order=4`` uses the
    five-point stencil.
    """
    steps = _steps(h)
    _stencil(order)
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    f(x).backward()
    analytic = (np.zeros_like(base) if x.grad is None else x.grad).reshape(-1)
    flat = base.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            worst = max(worst, _best_rel_err(analytic[i], lambda: f(Tensor(base)).item(), flat, i,
                                              steps, order))
    return worst


def grad_check_tensors(loss_fn, tensors, h=1e-6, max_coords=None, rng=None, order=2):
    """Like :func:`grad_check`, but perturbs leaf tensors in place.

    ``loss_fn()`` must rebuild the graph from the current tensor values.
    ``max_coords`` caps how many coordinates per tensor are probed (chosen by
    ``rng``), which keeps checks on large parameter sets affordable.
    """
    steps = _steps(h)
    _stencil(order)
    for t in tensors:
        t.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = (np.zeros(t.shape) if t.grad is None else t.grad.copy()).reshape(-1)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        with no_grad():
            for i in coords:
                worst = max(worst, _best_rel_err(analytic[i], lambda: loss_fn().item(), flat, i,
                                                  steps, order))
        t.zero_grad()
    return worst


def _steps(h):
    steps = (h,) if np.isscalar(h) else tuple(h)
    if not steps or any(not step > 0 for step in steps):
        raise ValueError(f"finite-difference steps must be positive, got {h}")
    return steps
