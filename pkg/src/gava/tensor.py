"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every forward op validates that finite inputs produce finite outputs and
raises NumericError otherwise. Recording happens on a thread-local tape so
independent model instances can run on separate threads; `backward` replays
the tape in reverse and clears it.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, NumericError

_tls = threading.local()


class _Tape:
    __slots__ = ("records", "enabled")

    def __init__(self):
        self.records = []
        self.enabled = True


def _tape() -> _Tape:
    tape = getattr(_tls, "tape", None)
    if tape is None:
        tape = _Tape()
        _tls.tape = tape
    return tape


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class no_grad:
    """Context manager that pauses tape recording (used for eval/predict)."""

    def __enter__(self):
        tape = _tape()
        self._prev = tape.enabled
        tape.enabled = False
        return self

    def __exit__(self, *exc):
        _tape().enabled = self._prev
        return False


def tape_size() -> int:
    return len(_tape().records)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a NaN/Inf anywhere makes the sum non-finite (inf-inf -> nan), so one
    # cheap reduction guards every op; no false negatives for finite data
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(arr.sum())
    if not np.isfinite(total) and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    # ---- basic properties -------------------------------------------------

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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ---- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return pow_(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # ---- method-style ops -------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_out(op, data, inputs, backward_fn) -> Tensor:
    """Wrap a forward result, check finiteness, and record on the tape."""
    _check_finite(data, op)
    out = Tensor(data)
    tape = _tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.records.append(_Record(out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---- elementwise binary ops ------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_out("add", a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make_out("sub", a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make_out("mul", a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = a.data / b.data
    return _make_out("div", out_data, (a, b), bwd)


def pow_(a, k):
    a = _as_tensor(a)
    k = float(k)

    def bwd(g):
        return (g * k * np.power(a.data, k - 1.0),)

    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.power(a.data, k)
    return _make_out("pow", out_data, (a,), bwd)


# ---- elementwise unary ops ---------------------------------------------------


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return _make_out("exp", out_data, (a,), bwd)


def log(a):
    a = _as_tensor(a)

    def bwd(g):
        return (g / a.data,)

    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)
    return _make_out("log", out_data, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out_data * out_data),)

    return _make_out("tanh", out_data, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    # stable: 1/(1+exp(-x)) for x>=0, exp(x)/(1+exp(x)) for x<0
    x = a.data
    e = np.exp(-np.abs(x))
    denom = 1.0 + e
    out_data = np.where(x >= 0, 1.0 / denom, e / denom)

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make_out("sigmoid", out_data, (a,), bwd)


def clamp(a, lo, hi):
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return (g * mask,)

    return _make_out("clamp", out_data, (a,), bwd)


def elu(a, alpha: float = 1.0):
    """Exponential linear unit: x for x >= 0, alpha*(e^x - 1) below."""
    a = _as_tensor(a)
    neg = np.minimum(a.data, 0.0)
    out_data = np.where(a.data >= 0, a.data, alpha * (np.exp(neg) - 1.0))

    def bwd(g):
        return (g * np.where(a.data >= 0, 1.0, out_data + alpha),)

    return _make_out("elu", out_data, (a,), bwd)


def leaky_relu(a, slope: float = 0.2):
    a = _as_tensor(a)
    out_data = np.where(a.data >= 0, a.data, slope * a.data)

    def bwd(g):
        return (g * np.where(a.data >= 0, 1.0, slope),)

    return _make_out("leaky_relu", out_data, (a,), bwd)


def glu(a, axis: int = -1):
    """Gated linear unit: split `axis` in half, first_half * sigmoid(second_half)."""
    a = _as_tensor(a)
    n = a.shape[axis]
    if n % 2 != 0:
        raise DimensionError(f"glu requires an even dimension, got {n} on axis {axis}")
    h = n // 2
    idx_val = [slice(None)] * a.ndim
    idx_gate = [slice(None)] * a.ndim
    idx_val[axis] = slice(0, h)
    idx_gate[axis] = slice(h, n)
    value = getitem(a, tuple(idx_val))
    gate = getitem(a, tuple(idx_gate))
    return mul(value, sigmoid(gate))


def activation(a, kind: str, slope: float = 0.2, alpha: float = 1.0):
    """Dispatch by name: elu, leaky_relu, tanh, sigmoid, glu."""
    if kind == "elu":
        return elu(a, alpha)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "glu":
        return glu(a)
    raise DimensionError(f"unknown activation kind '{kind}'")


# ---- reductions -------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make_out("sum", out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a, axis: int = -1):
    """Numerically stabilized softmax along `axis` (max-subtraction)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make_out("softmax", out_data, (a,), bwd)


# ---- shape ops ---------------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)
    in_shape = a.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return _make_out("reshape", a.data.reshape(shape), (a,), bwd)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _make_out("transpose", a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis: int = -1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make_out("concat", np.concatenate([t.data for t in tensors], axis=axis),
                     tuple(tensors), bwd)


def stack(tensors, axis: int = 0):
    tensors = [_as_tensor(t) for t in tensors]

    def bwd(g):
        slabs = np.split(g, len(tensors), axis=axis)
        return tuple(s.squeeze(axis) for s in slabs)

    return _make_out("stack", np.stack([t.data for t in tensors], axis=axis),
                     tuple(tensors), bwd)


def _is_advanced_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def getitem(a, idx):
    a = _as_tensor(a)
    out_data = a.data[idx]
    # copy so later in-place edits of the source can't alias the view
    if isinstance(out_data, np.ndarray) and out_data.base is not None:
        out_data = out_data.copy()
    advanced = _is_advanced_index(idx)

    def bwd(g):
        acc = np.zeros_like(a.data)
        if advanced:
            np.add.at(acc, idx, g)  # unbuffered add handles repeated indices
        else:
            acc[idx] += g
        return (acc,)

    return _make_out("getitem", out_data, (a,), bwd)


def scatter_add(src, idx, shape):
    """Zeros of `shape` with `src` added at (possibly repeated) `idx`."""
    src = _as_tensor(src)
    out_data = np.zeros(shape, dtype=np.float64)
    np.add.at(out_data, idx, src.data)

    def bwd(g):
        return (g[idx],)

    return _make_out("scatter_add", out_data, (src,), bwd)


# ---- matmul / conv -----------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy-style batched broadcasting on leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            # collapse leading dims into one GEMM instead of a batched
            # product followed by a reduction
            k = a.shape[-1]
            n = g.shape[-1]
            gb = np.matmul(a.data.reshape(-1, k).T, g.reshape(-1, n))
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make_out("matmul", out_data, (a, b), bwd)


def _im2col(xpad: np.ndarray, kh: int, kw: int):
    # (B, C, Hp, Wp) -> (B, Ho*Wo, C*kh*kw)
    windows = np.lib.stride_tricks.sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x, kernel, padding: int = 0):
    """2-D cross-correlation. Input (C,H,W) or (B,C,H,W), kernel (Co,Ci,kh,kw)."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects (B,C,H,W) or (C,H,W) input and 4-D kernel, got {x.shape}, {kernel.shape}")
    co, ci, kh, kw = kernel.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise DimensionError(f"conv2d kernel sides must be 1 or 3, got {kh}x{kw}")
    xa = x.data if batched else x.data[None]
    bsz, cin, h, w = xa.shape
    if cin != ci:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    xpad = np.pad(xa, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, ho, wo = _im2col(xpad, kh, kw)
    kflat = kernel.data.reshape(co, -1)
    out = np.matmul(cols, kflat.T)                      # (B, Ho*Wo, Co)
    out = out.transpose(0, 2, 1).reshape(bsz, co, ho, wo)
    if not batched:
        out = out[0]

    def bwd(g):
        ga4 = g if batched else g[None]
        gflat = ga4.reshape(bsz, co, ho * wo).transpose(0, 2, 1)   # (B, HoWo, Co)
        gk = np.matmul(gflat.reshape(-1, co).T,
                       cols.reshape(-1, cols.shape[-1])).reshape(kernel.shape)
        gcols = np.matmul(gflat, kflat)                            # (B, HoWo, C*kh*kw)
        gcols = gcols.reshape(bsz, ho, wo, cin, kh, kw)
        gpad = np.zeros_like(xpad)
        for i in range(kh):
            for j in range(kw):
                gpad[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gpad[:, :, padding:padding + h, padding:padding + w] if padding else gpad
        if not batched:
            gx = gx[0]
        return gx, gk

    return _make_out("conv2d", out, (x, kernel), bwd)


def dropout(x, rate: float, rng: np.random.Generator, training: bool):
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return _as_tensor(x)
    mask = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, Tensor(mask))


# ---- backward ---------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients into every requires_grad leaf; clears the tape."""
    if not isinstance(loss, Tensor):
        raise DimensionError("backward requires a Tensor loss")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise DimensionError(
            f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _tape()
    if not tape.records:
        raise DimensionError("backward called with an empty tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        gins = rec.backward(g)
        for t, gin in zip(rec.inputs, gins):
            if gin is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gin
            else:
                grads[key] = gin
            if t._leaf:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
    tape.records.clear()
