"""Gradient-check suite covering every differentiable op and the composed model.

Each check compares reverse-mode gradients against central finite differences
(h = 1e-5) at relative tolerance 1e-4. The composed-model check runs a tiny
configuration end to end through the full loss.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .batch import make_batch
from .config import TrainConfig
from .losses import total_loss
from .model import GavaModel
from .nn import GRUCell, LSTMCell, grad_check, run_gru, run_lstm
from .synth import synth_generate
from .tensor import Tensor

TOL = 1e-4
H = 1e-5


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def op_checks(rng: np.random.Generator):
    """(name, f, inputs) triples for every primitive differentiable op."""
    checks = []

    def add(name, make):
        checks.append((name, make))

    def matmul_case(shape_a, shape_b):
        a, b = _leaf(rng, *shape_a), _leaf(rng, *shape_b)
        return lambda: (T.matmul(a, b) * T.matmul(a, b)).sum(), [a, b]

    add("matmul 2x3 @ 3x4", lambda: matmul_case((2, 3), (3, 4)))
    add("matmul batched", lambda: matmul_case((2, 3, 4), (4, 2)))
    add("matmul broadcast", lambda: matmul_case((2, 2, 3, 4), (2, 1, 4, 3)))

    def unary_case(fn, shape=(3, 4), scale=1.0):
        x = Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
        return lambda: fn(x).sum(), [x]

    add("exp", lambda: unary_case(T.exp))
    add("log (positive)", lambda: unary_case(lambda x: T.log(x * x + 0.5)))
    add("tanh", lambda: unary_case(T.tanh))
    add("sigmoid", lambda: unary_case(T.sigmoid))
    add("elu", lambda: unary_case(lambda x: T.elu(x, 1.0)))
    add("elu alpha=0.7", lambda: unary_case(lambda x: T.elu(x, 0.7)))
    add("leaky_relu", lambda: unary_case(lambda x: T.leaky_relu(x, 0.2)))
    add("softmax", lambda: unary_case(lambda x: (T.softmax(x, axis=-1)
                                                 * Tensor(np.arange(4.0))).sum()))
    add("glu", lambda: unary_case(lambda x: T.glu(x, axis=-1)))
    add("pow", lambda: unary_case(lambda x: (x * x + 1.0) ** 0.5))
    add("mean", lambda: unary_case(lambda x: (x.mean(axis=0) * Tensor(np.arange(1.0, 5.0))).sum()))
    add("clamp interior", lambda: unary_case(lambda x: T.clamp(x, -5.0, 5.0)))

    def binary_case(fn):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
        return lambda: fn(a, b).sum(), [a, b]

    add("add broadcast", lambda: binary_case(lambda a, b: a + b))
    add("mul broadcast", lambda: binary_case(lambda a, b: a * b))
    add("div", lambda: binary_case(lambda a, b: a / (b * b + 1.0)))

    def reshape_case():
        x = _leaf(rng, 3, 4)
        w = Tensor(rng.standard_normal((2, 6)))
        return lambda: (x.reshape((2, 6)) * w).sum(), [x]

    add("reshape", reshape_case)

    def transpose_case():
        x = _leaf(rng, 2, 3, 4)
        return lambda: (x.transpose((2, 0, 1)) * x.transpose((2, 0, 1))).sum(), [x]

    add("transpose", transpose_case)

    def concat_case():
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
        w = Tensor(rng.standard_normal((2, 5)))
        return lambda: (T.concat([a, b], axis=-1) * w).sum(), [a, b]

    add("concat", concat_case)

    def stack_case():
        a, b = _leaf(rng, 3), _leaf(rng, 3)
        return lambda: (T.stack([a, b], axis=0) * T.stack([b, a], axis=0)).sum(), [a, b]

    add("stack", stack_case)

    def getitem_case():
        x = _leaf(rng, 4, 5)
        idx = np.array([0, 2, 2, 3])
        return lambda: (x[idx] * x[idx]).sum() + x[1:3, ::2].sum(), [x]

    add("getitem basic+advanced", getitem_case)

    def scatter_case():
        x = _leaf(rng, 6)
        idx = (np.array([0, 2, 2, 5, 1, 0]),)
        w = Tensor(rng.standard_normal(8))
        return lambda: (T.scatter_add(x, idx, (8,)) * w).sum(), [x]

    add("scatter_add repeated idx", scatter_case)

    def conv_case(ksize, padding, shape):
        x = _leaf(rng, *shape)
        k = _leaf(rng, 3, shape[0], ksize, ksize)
        return lambda: (T.conv2d(x, k, padding=padding) ** 2.0).sum(), [x, k]

    add("conv2d 1x1", lambda: conv_case(1, 0, (2, 5, 5)))
    add("conv2d 3x3 pad 1", lambda: conv_case(3, 1, (2, 5, 5)))

    def gru_case():
        rng2 = np.random.default_rng(7)
        cell = GRUCell(3, 4, rng2)
        x = _leaf(rng, 2, 5, 3)
        params = list(cell.parameters())
        return lambda: run_gru(cell, x)[0].sum(), [x] + params

    add("gru 5-step bptt", gru_case)

    def lstm_case():
        rng2 = np.random.default_rng(8)
        cell = LSTMCell(3, 4, rng2)
        x = _leaf(rng, 2, 5, 3)
        params = list(cell.parameters())
        return lambda: run_lstm(cell, x).sum(), [x] + params

    add("lstm 5-step bptt", lstm_case)
    return checks


def tiny_config() -> TrainConfig:
    return TrainConfig(dim=8, embed_dim=8, n_heads=2, n_layers=1, ff_dim=16,
                       interaction_channels=4, interaction_gru_hidden=4,
                       history_steps=5, future_steps=5, allow_custom_horizon=True,
                       dropout=0.0, grid_slots=7, seed=3)


def composed_model_check(rng: np.random.Generator, max_coords: int = 3,
                         variant: str = "gava"):
    """Full forward+backward gradient check on a tiny model and real batch."""
    import dataclasses
    cfg = dataclasses.replace(tiny_config(), variant=variant)
    samples = synth_generate("car_following", 2, seed=5,
                             history_steps=cfg.history_steps,
                             future_steps=cfg.future_steps, dt=cfg.dt)
    batch = make_batch(samples)
    model = GavaModel(cfg)
    model.eval()  # dropout identity, batch-norm running stats: a pure function

    def f():
        loss, _, _ = total_loss(model(batch), batch)
        return loss

    params = list(model.parameters())
    names = [n for n, _ in model.named_parameters()]
    return grad_check(f, params, tol=TOL, h=H, max_coords=max_coords,
                      rng=rng, names=names)


def run_gradcheck_suite(verbose: bool = False, quick: bool = False) -> bool:
    """Run every op check plus the composed model; True when all pass."""
    rng = np.random.default_rng(12345)
    ok = True
    shapes_seen = 0
    for name, make in op_checks(rng):
        f, inputs = make()
        report = grad_check(f, inputs, tol=TOL, h=H,
                            max_coords=8 if quick else None, rng=rng)
        shapes_seen += 1
        ok &= report.passed
        if verbose:
            status = "pass" if report.passed else "FAIL"
            print(f"gradcheck {status} {name}: max_rel_err={report.max_rel_err:.3g} "
                  f"({report.checked} coords)")
            if not report.passed:
                for line in report.failures[:5]:
                    print(f"  {line}")
    report = composed_model_check(rng, max_coords=2 if quick else 3)
    ok &= report.passed
    if verbose:
        status = "pass" if report.passed else "FAIL"
        print(f"gradcheck {status} composed tiny model: "
              f"max_rel_err={report.max_rel_err:.3g} ({report.checked} coords)")
        if not report.passed:
            for line in report.failures[:10]:
                print(f"  {line}")
    return ok
