"""Tensor core: forward values, backward gradients, and numeric guards."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gava import tensor as T
from gava.errors import DimensionError, NumericError
from gava.nn import Adam, GRUCell, LSTMCell, grad_check, run_gru, run_lstm
from gava.tensor import Tensor, backward, no_grad, tape_size


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[3.0], [4.0]]

    def test_hand_evaluated(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_grad_matches_finite_difference(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        report = grad_check(lambda: T.matmul(a, b).sum(), [a, b])
        assert report.passed, report.worst

    def test_grad_of_sum_is_broadcast_of_transpose(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)))
        backward(T.matmul(a, b).sum())
        expected = np.tile(b.data.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)


class TestConv2d:
    def test_1x1_kernel_scales(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 5)))
        k = Tensor(np.full((1, 1, 1, 1), 2.0))
        out = T.conv2d(x, k, padding=0)
        np.testing.assert_allclose(out.data, 2.0 * x.data)

    def test_3x3_ones_kernel_spreads_block(self):
        x = np.zeros((1, 5, 5))
        x[0, 2, 2] = 1.0
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), padding=1)
        expected = np.zeros((1, 5, 5))
        expected[0, 1:4, 1:4] = 1.0
        np.testing.assert_allclose(out.data, expected)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((1, 1, 5))), Tensor(np.zeros((1, 1, 3, 3))),
                     padding=0)

    def test_kernel_side_constraint(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((1, 6, 6))), Tensor(np.zeros((1, 1, 5, 5))),
                     padding=0)

    def test_grad_matches_finite_difference(self, rng):
        x = Tensor(rng.standard_normal((2, 5, 5)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4, requires_grad=True)
        report = grad_check(lambda: (T.conv2d(x, k, padding=1) ** 2.0).sum(), [x, k])
        assert report.max_rel_err < 1e-4, report.worst


class TestActivations:
    def test_elu_closed_form(self):
        assert T.elu(Tensor(-1.0)).item() == pytest.approx(math.exp(-1) - 1, abs=1e-12)
        assert T.elu(Tensor(2.0)).item() == 2.0

    def test_leaky_relu_closed_form(self):
        assert T.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4)
        assert T.leaky_relu(Tensor(3.0), 0.2).item() == 3.0

    def test_glu_zero_gate_halves(self, rng):
        x = rng.standard_normal(4)
        inp = np.concatenate([x, np.zeros(4)])
        np.testing.assert_allclose(T.glu(Tensor(inp)).data, 0.5 * x, rtol=1e-12)

    def test_glu_odd_dimension_rejected(self):
        with pytest.raises(DimensionError):
            T.glu(Tensor(np.zeros(5)))

    def test_dispatcher(self):
        assert T.activation(Tensor(-1.0), "tanh").item() == pytest.approx(math.tanh(-1))
        assert T.activation(Tensor(-1.0), "sigmoid").item() == pytest.approx(
            1 / (1 + math.e))
        with pytest.raises(DimensionError):
            T.activation(Tensor(0.0), "swish")


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0]), -1).data, [0.5, 0.5])

    def test_closed_form(self):
        out = T.softmax(Tensor([2.0, 0.0]), -1).data
        np.testing.assert_allclose(out, [0.8808, 0.1192], atol=1e-4)

    def test_rows_sum_to_one_and_positive(self, rng):
        x = rng.standard_normal((50, 7)) * 10
        out = T.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
        assert (out > 0).all()

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance(self, xs, c):
        a = T.softmax(Tensor(xs), -1).data
        b = T.softmax(Tensor(np.array(xs) + c), -1).data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestRecurrentCells:
    def _zero_cell(self, cls, in_dim, hidden):
        cell = cls(in_dim, hidden, np.random.default_rng(0))
        for p in cell.parameters():
            p.data[...] = 0.0
        return cell

    def test_gru_zero_fixed_point(self):
        cell = self._zero_cell(GRUCell, 3, 4)
        out = cell(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))
        np.testing.assert_allclose(out.data, 0.0)

    def test_lstm_zero_step(self):
        cell = self._zero_cell(LSTMCell, 3, 4)
        # bias drives the forget gate only; with zero candidate the output is
        # tanh(0) * sigmoid(0) = 0
        cell.bias.data[4:8] = 5.0
        h, c = cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))),
                    Tensor(np.zeros((1, 4))))
        np.testing.assert_allclose(h.data, 0.0)
        np.testing.assert_allclose(c.data, 0.0)

    def test_hidden_size_mismatch(self):
        cell = GRUCell(3, 4, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 5))))

    def test_bptt_gradients_5_steps(self, rng):
        for cls, runner in ((GRUCell, lambda c, x: run_gru(c, x)[0]),
                            (LSTMCell, run_lstm)):
            cell = cls(3, 4, np.random.default_rng(1))
            x = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
            params = [x] + list(cell.parameters())
            report = grad_check(lambda: (runner(cell, x) ** 2.0).sum(), params,
                                max_coords=6, rng=rng)
            assert report.max_rel_err < 1e-4, report.worst

    def test_masked_gru_carries_state_through_gaps(self, rng):
        cell = GRUCell(3, 4, np.random.default_rng(2))
        x = Tensor(rng.standard_normal((1, 4, 3)))
        mask = np.array([[1.0, 0.0, 0.0, 1.0]])
        states, final = run_gru(cell, x, frame_mask=mask)
        np.testing.assert_allclose(states.data[0, 0], states.data[0, 1])
        np.testing.assert_allclose(states.data[0, 1], states.data[0, 2])
        assert not np.allclose(states.data[0, 2], states.data[0, 3])
        np.testing.assert_allclose(final.data[0], states.data[0, 3])


class TestBackward:
    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        with pytest.raises(DimensionError):
            backward(y)

    def test_empty_tape_rejected(self):
        with pytest.raises(DimensionError):
            backward(Tensor(1.0, requires_grad=True))

    def test_tape_cleared_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward((x * x).sum())
        assert tape_size() == 0

    def test_gradients_accumulate_across_backwards(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward((x * x).sum())
        g1 = x.grad.copy()
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2 * g1)

    def test_two_passes_identical(self, rng):
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)

        def run():
            x.grad = None
            backward((T.softmax(x, -1) * x).sum())
            return x.grad.copy()

        np.testing.assert_array_equal(run(), run())

    def test_no_grad_suppresses_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad and tape_size() == 0


class TestNumericGuards:
    def test_overflow_raises(self):
        with pytest.raises(NumericError, match="exp"):
            T.exp(Tensor(1000.0))

    def test_nan_propagation_detected(self):
        with pytest.raises(NumericError):
            T.log(Tensor(-1.0))

    def test_division_by_zero_detected(self):
        with pytest.raises(NumericError, match="div"):
            Tensor(1.0) / Tensor(0.0)


class TestOptimizer:
    def test_first_step_moves_by_lr(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        p.grad = np.ones(1)
        Adam([p], lr=0.1).step()
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_zero_grad_leaves_param(self):
        p = Tensor(np.array([1.5]), requires_grad=True)
        p.grad = np.zeros(1)
        Adam([p], lr=0.1).step()
        assert p.data[0] == 1.5

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.default_rng(7)
            p = Tensor(rng.standard_normal(5), requires_grad=True)
            opt = Adam([p], lr=0.01)
            for _ in range(10):
                p.grad = rng.standard_normal(5)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestThreading:
    def test_independent_graphs_on_separate_threads(self, rng):
        """The tape is thread-local: two models backprop concurrently."""
        import threading

        results = {}

        def work(key, seed):
            local = np.random.default_rng(seed)
            x = Tensor(local.standard_normal((20, 20)), requires_grad=True)
            for _ in range(30):
                backward((T.softmax(x @ x, -1) * x).sum())
            results[key] = x.grad.copy()

        threads = [threading.Thread(target=work, args=(i, 3)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        work("ref", 3)
        np.testing.assert_array_equal(results[0], results["ref"])
        np.testing.assert_array_equal(results[1], results["ref"])


class TestGradCheckShapes:
    """Every differentiable op passes grad_check on at least 3 shapes."""

    @pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 2)])
    def test_elementwise_ops_multiple_shapes(self, shape, rng):
        x = Tensor(rng.standard_normal(shape), requires_grad=True)
        fns = [lambda: T.elu(x).sum(), lambda: T.sigmoid(x).sum(),
               lambda: T.tanh(x).sum(), lambda: T.softmax(x, -1).sum(),
               lambda: (T.exp(x) * T.leaky_relu(x)).sum()]
        for f in fns:
            assert grad_check(f, [x], max_coords=6, rng=rng).passed

    @pytest.mark.parametrize("shapes", [((2, 3), (3, 2)), ((4, 2), (2, 4)),
                                        ((1, 5), (5, 1))])
    def test_matmul_multiple_shapes(self, shapes, rng):
        a = Tensor(rng.standard_normal(shapes[0]), requires_grad=True)
        b = Tensor(rng.standard_normal(shapes[1]), requires_grad=True)
        assert grad_check(lambda: (T.matmul(a, b) ** 2.0).sum(), [a, b],
                          max_coords=6, rng=rng).passed
