"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor wraps a numpy array. Operations build an implicit tape:
each result remembers its parent tensors and a closure that maps the
incoming gradient to per-parent gradients. ``backward`` on a scalar walks
the tape once in reverse topological order and accumulates gradients into
leaf tensors (inputs and parameters). The tape is rebuilt on every forward
pass; tensor data is never mutated while a tape referencing it is alive.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "ContractError",
    "Tensor",
    "Parameter",
    "tensor",
    "set_finite_checks",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "conv2d",
    "softmax",
    "layer_norm",
    "adaptive_avg_pool2d",
    "upsample_bilinear",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "softplus",
    "absolute",
    "tsum",
    "tmean",
    "reshape",
    "transpose2d",
    "concat",
    "narrow",
    "split",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf assertions on forward results (off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """N-dimensional float64 array participating in autodiff.

    ``requires_grad`` marks tensors whose gradient is wanted. Leaf tensors
    (no parents) accumulate into ``grad``; interior results only route
    gradient flow. Data is treated as immutable once the tensor is part of
    a live tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if 0 in arr.shape:
            raise ShapeError(f"every dimension must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same data, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """Named learnable tensor; ``grad`` is allocated up front and zeroed."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
        self.name = name
        self.value = t

    @property
    def grad(self):
        return self.value.grad

    @property
    def data(self):
        return self.value.data

    @data.setter
    def data(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self.value.data.shape:
            raise ContractError(
                f"parameter {self.name}: cannot replace shape {self.value.data.shape} "
                f"with {arr.shape}"
            )
        self.value.data = arr

    def zero_grad(self):
        self.value.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op result; attach the tape edge only if a parent needs grad."""
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward operation")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _make(data, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; 2-d operands, or 3-d with equal leading batch."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul: ranks must match and be 2 or 3, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw)


def transpose2d(a) -> Tensor:
    """Swap the last two axes (pure index remap)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose2d needs rank >= 2, got shape {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(xs, axis: int) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ContractError("concat: empty tensor list")
    ref = xs[0].shape
    for x in xs[1:]:
        other = x.shape
        if len(other) != len(ref) or any(
            o != r for ax, (o, r) in enumerate(zip(other, ref)) if ax != axis % len(ref)
        ):
            raise ShapeError(f"concat: shape {other} incompatible with {ref} on axis {axis}")
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(xs))
        )

    return _make(data, xs, bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for {a.shape}[{axis}]")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw)


def split(a, sizes, axis: int):
    """Split into consecutive chunks of the given sizes along ``axis``."""
    a = _as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover {a.shape}[{axis}]")
    out, off = [], 0
    for s in sizes:
        out.append(narrow(a, axis, off, s))
        off += s
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data >= 0  # subgradient at 0 takes the identity branch
    data = np.where(mask, a.data, slope * a.data)
    return _make(data, (a,), lambda g: (np.where(mask, g, slope * g),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    a = _as_tensor(a)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _make(y, (a,), bw)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.shape[axis]

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# softmax / layer norm
# ---------------------------------------------------------------------------

def _softmax_grad(y: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    # kept module-level so verification fixtures can fault-inject it
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def softmax(a, axis: int) -> Tensor:
    """Max-subtracted softmax along ``axis``; slices sum to 1."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of bounds for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (_softmax_grad(y, g, axis),))


def layer_norm(a, axis: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize slices along ``axis`` to zero mean / unit variance, then affine."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    axis = axis % a.ndim
    d = a.shape[axis]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} must be ({d},) "
            f"for axis {axis} of {a.shape}"
        )
    bshape = [1] * a.ndim
    bshape[axis] = d
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    data = gb * xhat + bb

    def bw(g):
        ga = None
        if a.requires_grad:
            dxhat = g * gb
            # standard layer-norm backward over the normalized axis
            m1 = dxhat.mean(axis=axis, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
            ga = ivar * (dxhat - m1 - xhat * m2)
        reduce_axes = tuple(i for i in range(a.ndim) if i != axis)
        ggamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        return ga, ggamma, gbeta

    return _make(data, (a, gamma, beta), bw)


# ---------------------------------------------------------------------------
# convolution / pooling / resize
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    if n + 2 * pad < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {n + 2 * pad}")
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(f"conv2d: output size {out} < 1 for input {n}, kernel {k}, "
                         f"stride {stride}, pad {pad}")
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, ci, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, ci, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return view.reshape(b, ci * kh * kw, oh * ow)


def conv2d(x, w, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [b,ci,h,w] with [co,ci,kh,kw] kernels plus bias.

    Output spatial size is floor((n + 2*pad - k) / stride) + 1 per axis and
    must be at least 1.
    """
    x, w, bias = _as_tensor(x), _as_tensor(w), _as_tensor(bias)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input/weight, got {x.shape} and {w.shape}")
    b, ci, h, ww_ = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ShapeError(f"conv2d: input channels {ci} != weight channels {ci_w}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} must be ({co},)")
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(ww_, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, oh, ow))
    w2 = w.data.reshape(co, ci * kh * kw)
    out = w2 @ cols + bias.data.reshape(1, co, 1)
    out = out.reshape(b, co, oh, ow)

    def bw(g):
        g2 = g.reshape(b, co, oh * ow)
        gw = gb = gx = None
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(b, ci, kh, kw, oh, ow)
            hp, wp = h + 2 * pad, ww_ + 2 * pad
            dxp = np.zeros((b, ci, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride,
                        j : j + stride * ow : stride] += dcols[:, :, i, j]
            gx = dxp[:, :, pad : pad + h, pad : pad + ww_] if pad else dxp
        return gx, gw, gb

    return _make(out, (x, w, bias), bw)


def adaptive_avg_pool2d(x, oh: int, ow: int) -> Tensor:
    """Mean over contiguous bins with edges floor(i*n/o); identity when o == n."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d: need 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if not (1 <= oh <= h and 1 <= ow <= w):
        raise ShapeError(f"adaptive_avg_pool2d: target {oh}x{ow} invalid for input {h}x{w}")
    h_starts = [(i * h) // oh for i in range(oh)]
    w_starts = [(i * w) // ow for i in range(ow)]
    h_counts = np.diff(h_starts + [h])
    w_counts = np.diff(w_starts + [w])
    sums = np.add.reduceat(np.add.reduceat(x.data, h_starts, axis=2), w_starts, axis=3)
    areas = np.outer(h_counts, w_counts).astype(np.float64)
    data = sums / areas

    def bw(g):
        scaled = g / areas
        full = np.repeat(np.repeat(scaled, h_counts, axis=2), w_counts, axis=3)
        return (full,)

    return _make(data, (x,), bw)


def _resize_axis(n: int, out: int):
    """Half-pixel-center source coordinates split into floor index and fraction."""
    src = (np.arange(out) + 0.5) * (n / out) - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i0 = np.minimum(i0, n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    return i0, i1, frac


def _resize_matrix(n: int, out: int) -> np.ndarray:
    i0, i1, frac = _resize_axis(n, out)
    m = np.zeros((out, n))
    m[np.arange(out), i0] += 1.0 - frac
    m[np.arange(out), i1] += frac
    return m


def upsample_bilinear(x, oh: int, ow: int) -> Tensor:
    """Bilinear resize with half-pixel centers; constant maps stay constant exactly."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear: need 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if oh < 1 or ow < 1:
        raise ShapeError(f"upsample_bilinear: target {oh}x{ow} must be >= 1x1")
    y0, y1, fy = _resize_axis(h, oh)
    x0, x1, fx = _resize_axis(w, ow)

    # lerp form a + f*(b-a): exact for constant input
    top = x.data[:, :, y0, :]
    rows = top + fy[None, None, :, None] * (x.data[:, :, y1, :] - top)
    left = rows[:, :, :, x0]
    data = left + fx[None, None, None, :] * (rows[:, :, :, x1] - left)

    def bw(g):
        wh = _resize_matrix(h, oh)
        wx = _resize_matrix(w, ow)
        return ((wh.T @ g) @ wx,)

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls on the same tape keep accumulating (two calls double the
    gradients). Leaves never reached keep whatever ``grad`` they had.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward: loss must be a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    flow = {loss: np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(node, None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = flow.get(parent)
            flow[parent] = pg if held is None else held + pg


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Worst relative error of tape gradients against central differences.

    ``f`` must map a tensor to a deterministic scalar tensor. The numeric
    side re-evaluates ``f`` at x +/- eps per coordinate and never touches
    the tape, so the two gradient paths stay independent.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    backward(out)
    analytic = (probe.grad if probe.grad is not None else np.zeros_like(probe.data)).copy()

    numeric = np.zeros_like(probe.data)
    flat_n = numeric.reshape(-1)
    base = x.data.reshape(-1)
    for i in range(base.size):
        for sign in (+1.0, -1.0):
            shifted = base.copy()
            shifted[i] += sign * eps
            val = f(Tensor(shifted.reshape(x.shape))).item()
            flat_n[i] += sign * val
        flat_n[i] /= 2.0 * eps

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
