"""Priority decoder: transformer blocks, maneuver heads, Gaussian emission."""

import math

import numpy as np
import pytest

from gava import tensor as T
from gava.config import TrainConfig
from gava.decoder import (ContextDecoder, GaussianEmitter, GaussianParams,
                          GaussianTrajectory, IntentionFuse, ManeuverDistribution,
                          ManeuverHeads, VisualEncoder, gaussian_constrain,
                          mode_components, mode_index, mode_name)
from gava.errors import DimensionError
from gava.nn import grad_check
from gava.tensor import Tensor


class TestVisualEncoder:
    def _enc(self, rng, dim=8):
        return VisualEncoder(dim, n_heads=2, ff_dim=16, n_layers=1, rng=rng)

    def test_zero_value_projection_keeps_residual(self, rng):
        enc = self._enc(rng)
        layer = enc.layers[0]
        layer.mha.w_v.weight.data[...] = 0.0
        layer.mha.w_v.bias.data[...] = 0.0
        layer.mha.w_o.bias.data[...] = 0.0
        x = Tensor(rng.standard_normal((1, 5, 8)))
        attended = layer.mha(x, x, x)
        np.testing.assert_allclose(attended.data, 0.0, atol=1e-12)
        out = layer.ln1(x + attended)
        manual = layer.ln1(x)
        np.testing.assert_allclose(out.data, manual.data, atol=1e-12)

    def test_row_permutation_equivariance(self, rng):
        enc = self._enc(rng)
        z = rng.standard_normal((2, 7, 8))
        perm = rng.permutation(7)
        out = enc(Tensor(z)).data
        out_p = enc(Tensor(z[:, perm])).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-9)

    def test_row_permutation_equivariance_with_padding_mask(self, rng):
        enc = self._enc(rng)
        z = rng.standard_normal((1, 7, 8))
        valid = (rng.random((1, 7)) > 0.4).astype(float)
        valid[0, 0] = 1.0
        perm = rng.permutation(7)
        out = enc(Tensor(z), valid).data
        out_p = enc(Tensor(z[:, perm]), valid[:, perm]).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-9)

    def test_gradcheck_one_layer(self, rng):
        enc = self._enc(rng)
        z = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True)
        report = grad_check(lambda: (enc(z) ** 2.0).sum(),
                            [z] + list(enc.parameters()), max_coords=4, rng=rng)
        assert report.passed, report.worst


class TestContextDecoder:
    def test_output_shape_and_gradcheck(self, rng):
        dec = ContextDecoder(dim=8, n_heads=2, ff_dim=16, n_layers=1,
                             history_steps=4, dropout=0.0, rng=rng,
                             dropout_rng=np.random.default_rng(0))
        mem = Tensor(rng.standard_normal((1, 6, 8)), requires_grad=True)
        ctx = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True)
        out = dec(mem, ctx)
        assert out.shape == (1, 4, 8)
        report = grad_check(lambda: (dec(mem, ctx) ** 2.0).sum(), [mem, ctx],
                            max_coords=6, rng=rng)
        assert report.passed, report.worst

    def test_wrong_history_length_rejected(self, rng):
        dec = ContextDecoder(dim=8, n_heads=2, ff_dim=16, n_layers=1,
                             history_steps=4, dropout=0.0, rng=rng,
                             dropout_rng=np.random.default_rng(0))
        with pytest.raises(DimensionError):
            dec(Tensor(np.zeros((1, 6, 8))), Tensor(np.zeros((1, 5, 8))))


class TestManeuverHeads:
    def test_zero_weights_uniform(self, rng):
        heads = ManeuverHeads(8, rng)
        for p in heads.parameters():
            p.data[...] = 0.0
        p_lat, p_lon = heads(Tensor(rng.standard_normal((3, 4, 8))))
        np.testing.assert_allclose(p_lat.data, 1 / 3, atol=1e-12)
        np.testing.assert_allclose(p_lon.data, 1 / 2, atol=1e-12)

    def test_joint_probabilities_sum_to_one(self, rng):
        heads = ManeuverHeads(8, rng)
        p_lat, p_lon = heads(Tensor(rng.standard_normal((5, 4, 8))))
        joint = p_lat.data[:, :, None] * p_lon.data[:, None, :]
        np.testing.assert_allclose(joint.reshape(5, -1).sum(-1), 1.0, atol=1e-9)

    def test_uniform_cross_entropy_closed_form(self, rng):
        heads = ManeuverHeads(8, rng)
        for p in heads.parameters():
            p.data[...] = 0.0
        p_lat, _ = heads(Tensor(np.zeros((1, 2, 8))))
        ce = -math.log(p_lat.data[0, 0])
        assert ce == pytest.approx(math.log(3.0), abs=1e-9)


class TestIntentionFuse:
    def test_future_shape_per_mode(self, rng):
        fuse = IntentionFuse(dim=8, history_steps=4, future_steps=6, rng=rng)
        out = fuse(Tensor(rng.standard_normal((3, 4, 8))))
        assert out.shape == (3, 6, 6, 8)

    def test_modes_differ(self, rng):
        fuse = IntentionFuse(dim=8, history_steps=4, future_steps=6, rng=rng)
        out = fuse(Tensor(rng.standard_normal((1, 4, 8)))).data
        assert not np.allclose(out[0, 0], out[0, 1])

    def test_mode_enumeration(self):
        assert mode_index(*mode_components(5)) == 5
        names = {mode_name(m) for m in range(6)}
        assert "keep/normal" in names and len(names) == 6


class TestGaussianConstrain:
    def test_zero_raw(self):
        mu, sigma, rho = gaussian_constrain(Tensor(np.zeros(5)))
        np.testing.assert_array_equal(mu.data, 0.0)
        np.testing.assert_array_equal(sigma.data, 1.0)
        assert rho.data == 0.0

    def test_rho_saturates_below_one(self):
        raw = np.zeros(5)
        raw[4] = 1e9
        _, _, rho = gaussian_constrain(Tensor(raw))
        assert rho.data == pytest.approx(0.999)
        raw[4] = -1e9
        _, _, rho = gaussian_constrain(Tensor(raw))
        assert rho.data == pytest.approx(-0.999)

    def test_sigma_clamped_at_floor(self):
        raw = np.zeros(5)
        raw[2] = -10.0
        _, sigma, _ = gaussian_constrain(Tensor(raw))
        assert sigma.data[0] == pytest.approx(1e-3, rel=1e-9)

    def test_huge_raw_sigma_stays_finite(self):
        raw = np.zeros(5)
        raw[2:4] = 1e6
        _, sigma, _ = gaussian_constrain(Tensor(raw))
        np.testing.assert_allclose(sigma.data, 1e3)

    def test_totality_on_random_raws(self, rng):
        raw = Tensor(rng.standard_normal((1000, 5)) * 100)
        _, sigma, rho = gaussian_constrain(raw)
        assert sigma.data.min() >= 1e-3 and sigma.data.max() <= 1e3
        assert np.abs(rho.data).max() <= 0.999


class TestGaussianEmitter:
    def test_shapes(self, rng):
        emit = GaussianEmitter(8, rng)
        out = emit(Tensor(rng.standard_normal((2, 6, 5, 8))))
        assert out.shape == (2, 6, 5, 5)


class TestGaussianTrajectory:
    def _traj(self, p_lat, p_lon, means=None, f=4):
        means = means if means is not None else np.zeros((6, f, 2))
        return GaussianTrajectory(
            means=means, sigmas=np.ones((6, f, 2)), rhos=np.zeros((6, f)),
            maneuvers=ManeuverDistribution(p_lateral=np.array(p_lat),
                                           p_longitudinal=np.array(p_lon)))

    def test_best_mode_argmax(self):
        traj = self._traj([0.1, 0.2, 0.7], [0.6, 0.4])
        assert traj.best_mode() == mode_index(2, 0)

    def test_tie_prefers_keep_normal(self):
        traj = self._traj([1 / 3, 1 / 3, 1 / 3], [0.5, 0.5])
        lat, lon = mode_components(traj.best_mode())
        assert (lat, lon) == (1, 0)  # keep / normal

    def test_point_prediction_scale_invariant(self):
        means = np.random.default_rng(0).standard_normal((6, 4, 2))
        a = self._traj([0.2, 0.5, 0.3], [0.9, 0.1], means)
        b = self._traj([0.04, 0.1, 0.06], [0.36, 0.04], means)  # scaled by 0.2/0.4
        np.testing.assert_array_equal(a.point_prediction(), b.point_prediction())

    def test_weighted_mean_mode(self):
        means = np.zeros((6, 2, 2))
        means[0, :, 0] = 1.0
        traj = self._traj([1.0, 0.0, 0.0], [1.0, 0.0], means)
        np.testing.assert_allclose(traj.point_prediction("weighted_mean")[:, 0], 1.0)

    def test_degenerate_mixture_equals_single_mode(self):
        rng = np.random.default_rng(3)
        means = rng.standard_normal((6, 1, 2))
        traj = self._traj([0.0, 1.0, 0.0], [1.0, 0.0], means, f=1)
        y = rng.standard_normal((1, 2))
        expected = math.exp(traj.mode_log_density(mode_index(1, 0), y))
        assert traj.mixture_density(y) == pytest.approx(expected, rel=1e-12)

    def test_mixture_integrates_to_one_single_step(self, rng):
        """2-D trapezoid quadrature over a generous grid sums to ~1."""
        means = rng.standard_normal((6, 1, 2)) * 2
        sigmas = np.exp(rng.standard_normal((6, 1, 2)) * 0.3)
        rhos = 0.5 * np.tanh(rng.standard_normal((6, 1)))
        p_lat = rng.random(3)
        p_lat /= p_lat.sum()
        p_lon = rng.random(2)
        p_lon /= p_lon.sum()
        traj = GaussianTrajectory(means=means, sigmas=sigmas, rhos=rhos,
                                  maneuvers=ManeuverDistribution(p_lat, p_lon))
        lo = means.min() - 8 * sigmas.max()
        hi = means.max() + 8 * sigmas.max()
        xs = np.linspace(lo, hi, 301)
        ys = np.linspace(lo, hi, 301)
        grid = np.array([[traj.mixture_density(np.array([[x, y]]))
                          for x in xs] for y in ys])
        total = np.trapezoid(np.trapezoid(grid, xs, axis=1), ys)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_params_validation(self):
        with pytest.raises(DimensionError):
            GaussianParams(0, 0, -1.0, 1.0, 0.0)
        with pytest.raises(DimensionError):
            GaussianParams(0, 0, 1.0, 1.0, 1.0)
