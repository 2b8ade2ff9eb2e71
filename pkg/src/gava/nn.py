"""Layers, parameter containers, the Adam optimizer, and the gradient checker.

Everything here is built from the primitives in `tensor` and is therefore
differentiable end to end. Parameter registration order is insertion order,
which keeps checkpoints stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always tracks gradients."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Minimal container with named parameters, buffers, and train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(f"unknown buffer '{name}'")
        self.register_buffer(name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._list = list(modules)
        for i, m in enumerate(self._list):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        fan_in = in_ch * ksize * ksize
        fan_out = out_ch * ksize * ksize
        self.weight = Parameter(xavier_uniform(rng, fan_in, fan_out,
                                               (out_ch, in_ch, ksize, ksize)))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def __call__(self, x: Tensor, padding: int = 0) -> Tensor:
        out = T.conv2d(x, self.weight, padding=padding)
        if self.bias is not None:
            shape = (-1, 1, 1) if out.ndim == 3 else (1, -1, 1, 1)
            out = out + self.bias.reshape(shape)
        return out


class GRUCell(Module):
    """Standard gated recurrent unit cell (reset/update gates, candidate state)."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.w_x = Parameter(xavier_uniform(rng, in_dim, 3 * hidden, (in_dim, 3 * hidden)))
        self.w_h = Parameter(xavier_uniform(rng, hidden, 3 * hidden, (hidden, 3 * hidden)))
        self.b_x = Parameter(np.zeros(3 * hidden))
        self.b_h = Parameter(np.zeros(3 * hidden))

    def input_gates(self, x: Tensor) -> Tensor:
        """Input contribution to the gates; for a whole sequence in one matmul."""
        return T.add(T.matmul(x, self.w_x), self.b_x)

    def step(self, gx: Tensor, h: Tensor) -> Tensor:
        if h.shape[-1] != self.hidden:
            raise DimensionError(
                f"GRU hidden size mismatch: state {h.shape} vs hidden {self.hidden}")
        n = self.hidden
        gh = T.add(T.matmul(h, self.w_h), self.b_h)
        r = T.sigmoid(gx[..., 0:n] + gh[..., 0:n])
        z = T.sigmoid(gx[..., n:2 * n] + gh[..., n:2 * n])
        cand = T.tanh(gx[..., 2 * n:] + r * gh[..., 2 * n:])
        return (1.0 - z) * cand + z * h

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step(self.input_gates(x), h)


class LSTMCell(Module):
    """Standard long short-term memory cell. State is an (h, c) pair."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.w_x = Parameter(xavier_uniform(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden)))
        self.w_h = Parameter(xavier_uniform(rng, hidden, 4 * hidden, (hidden, 4 * hidden)))
        self.bias = Parameter(np.zeros(4 * hidden))

    def input_gates(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w_x), self.bias)

    def step(self, gx: Tensor, h: Tensor, c: Tensor):
        if h.shape[-1] != self.hidden or c.shape[-1] != self.hidden:
            raise DimensionError(
                f"LSTM hidden size mismatch: state {h.shape}/{c.shape} vs hidden {self.hidden}")
        n = self.hidden
        g = T.add(gx, T.matmul(h, self.w_h))
        i = T.sigmoid(g[..., 0:n])
        f = T.sigmoid(g[..., n:2 * n])
        cand = T.tanh(g[..., 2 * n:3 * n])
        o = T.sigmoid(g[..., 3 * n:])
        c_new = f * c + i * cand
        h_new = o * T.tanh(c_new)
        return h_new, c_new

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        return self.step(self.input_gates(x), h, c)


def run_gru(cell: GRUCell, x: Tensor, frame_mask: np.ndarray | None = None):
    """Unroll a GRU over axis -2 of `x` (shape (..., T, in_dim)).

    `frame_mask` (..., T) gates the update: where 0 the previous state is
    carried, so gaps in a sequence do not corrupt the hidden state.
    Returns (per_step_states (..., T, H), final_state (..., H)).
    """
    steps = x.shape[-2]
    lead = x.shape[:-2]
    h = Tensor(np.zeros(lead + (cell.hidden,)))
    gx = cell.input_gates(x)  # one matmul for the whole sequence
    outs = []
    for t in range(steps):
        h_new = cell.step(gx[..., t, :], h)
        if frame_mask is not None:
            m = Tensor(frame_mask[..., t:t + 1])
            h = m * h_new + (1.0 - m) * h
        else:
            h = h_new
        outs.append(h)
    return T.stack(outs, axis=-2), h


def run_lstm(cell: LSTMCell, x: Tensor):
    """Unroll an LSTM over axis -2 of `x`; returns per-step hidden states."""
    steps = x.shape[-2]
    lead = x.shape[:-2]
    h = Tensor(np.zeros(lead + (cell.hidden,)))
    c = Tensor(np.zeros(lead + (cell.hidden,)))
    gx = cell.input_gates(x)
    outs = []
    for t in range(steps):
        h, c = cell.step(gx[..., t, :], h, c)
        outs.append(h)
    return T.stack(outs, axis=-2)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / ((var + self.eps) ** 0.5) * self.gamma + self.beta


class BatchNorm2d(Module):
    """Per-channel batch norm over (B, C, H, W) with running-average eval mode."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        shape = (1, c, 1, 1)
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean[:] = m * self.running_mean + (1 - m) * mu.data.reshape(c)
            self.running_var[:] = m * self.running_var + (1 - m) * var.data.reshape(c)
            norm = centered / ((var + self.eps) ** 0.5)
        else:
            mu = Tensor(self.running_mean.reshape(shape))
            var = Tensor(self.running_var.reshape(shape))
            norm = (x - mu) / ((var + self.eps) ** 0.5)
        return norm * self.gamma.reshape(shape) + self.beta.reshape(shape)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)


def masked_softmax(scores: Tensor, valid: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over `axis` restricted to entries where `valid` is 1.

    Invalid entries receive exactly zero weight; rows with no valid entry
    come out all-zero instead of NaN.
    """
    neg = Tensor((1.0 - valid) * -1e9)
    att = T.softmax(scores + neg, axis=axis)
    att = att * Tensor(valid)
    # zero out rows that had no valid entries (softmax of all -1e9 is uniform garbage)
    any_valid = (valid.sum(axis=axis, keepdims=True) > 0).astype(np.float64)
    return att * Tensor(np.broadcast_to(any_valid, att.shape).copy())


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., L, D) -> (..., n_heads, L, D/n_heads)."""
    lead = x.shape[:-2]
    length, dim = x.shape[-2], x.shape[-1]
    if dim % n_heads != 0:
        raise DimensionError(f"dim {dim} not divisible by {n_heads} heads")
    hd = dim // n_heads
    x = x.reshape(lead + (length, n_heads, hd))
    return x.swapaxes(-3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """(..., n_heads, L, hd) -> (..., L, n_heads*hd)."""
    lead = x.shape[:-3]
    n_heads, length, hd = x.shape[-3], x.shape[-2], x.shape[-1]
    x = x.swapaxes(-3, -2)
    return x.reshape(lead + (length, n_heads * hd))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projections and output merge."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.w_o = Linear(dim, dim, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 key_valid: np.ndarray | None = None) -> Tensor:
        hd = q.shape[-1] // self.n_heads
        qh = split_heads(self.w_q(q), self.n_heads)
        kh = split_heads(self.w_k(k), self.n_heads)
        vh = split_heads(self.w_v(v), self.n_heads)
        scores = T.matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
        if key_valid is not None:
            # key_valid (..., Lk) -> broadcast over heads and query positions
            valid = key_valid[..., None, None, :]
            valid = np.broadcast_to(valid, scores.shape).copy()
            att = masked_softmax(scores, valid, axis=-1)
        else:
            att = T.softmax(scores, axis=-1)
        out = T.matmul(att, vh)
        return self.w_o(merge_heads(out))


class Adam:
    """Adaptive-moment optimizer with bias correction; updates in place."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    checked: int
    worst: str = ""
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(f, inputs, tol: float = 1e-4, h: float = 1e-5,
               max_coords: int | None = None,
               rng: np.random.Generator | None = None,
               names=None) -> GradCheckReport:
    """Compare analytic gradients of scalar `f()` against central differences.

    `inputs` are the tensors to perturb; `f` must be pure (a closure re-running
    the forward pass on those same tensors). Relative error uses
    |a - n| / max(1, |a|, |n|) so near-zero gradients are compared absolutely.
    When `max_coords` is set, a deterministic random subset of coordinates per
    input is checked instead of every element.
    """
    inputs = list(inputs)
    if names is None:
        names = [f"input[{i}]" for i in range(len(inputs))]
    if rng is None:
        rng = np.random.default_rng(0)

    for x in inputs:
        x.grad = None
    loss = f()
    T.backward(loss)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy()
                for x in inputs]
    for x in inputs:
        x.grad = None

    report = GradCheckReport(max_rel_err=0.0, tol=tol, checked=0)
    with T.no_grad():
        for x, a, name in zip(inputs, analytic, names):
            flat = x.data.reshape(-1)
            n_el = flat.size
            if max_coords is not None and n_el > max_coords:
                coords = rng.choice(n_el, size=max_coords, replace=False)
            else:
                coords = range(n_el)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                f_plus = float(f().data)
                flat[c] = orig - h
                f_minus = float(f().data)
                flat[c] = orig
                num = (f_plus - f_minus) / (2 * h)
                ana = a.reshape(-1)[c]
                rel = abs(ana - num) / max(1.0, abs(ana), abs(num))
                report.checked += 1
                if rel > report.max_rel_err:
                    report.max_rel_err = rel
                    report.worst = f"{name}[{c}] analytic={ana:.6g} numeric={num:.6g}"
                if rel >= tol:
                    report.failures.append(
                        f"{name}[{c}]: analytic={ana:.6g} numeric={num:.6g} rel={rel:.3g}")
    return report
