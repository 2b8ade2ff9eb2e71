"""Acceptance criteria, one test per criterion.

Each test prints one `ACCEPTANCE <n> PASS|FAIL <name>` line (run pytest with
-s to watch them live). Criteria that train models use scaled-down harness
configurations pinned below; tolerances come straight from the criteria.
"""

import dataclasses
import math
import os
import time

import numpy as np
import pytest

from gava import tensor as T
from gava.batch import make_batch
from gava.checkpoint import load_checkpoint, save_checkpoint
from gava.config import TrainConfig
from gava.losses import maneuver_loss, nll_loss, rmse_eval
from gava.model import GavaModel
from gava.scene import DatasetSplit
from gava.synth import synth_generate
from gava.tensor import Tensor
from gava.train import RunLog, train
from gava.vision import GraphAttentionLayer, build_visual_matrix, sector_for_speed


class criterion:
    """Prints the pass/fail line for one acceptance criterion."""

    def __init__(self, number, name):
        self.number = number
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"\nACCEPTANCE {self.number} {status} {self.name}")
        return False


# harness configurations for the training criteria
OVERFIT_CFG = dict(dim=32, embed_dim=16, ff_dim=64, dropout=0.0, seed=0,
                   batch_size=4, epochs=500, learning_rate=4e-3,
                   lr_decay=0.985, lr_decay_start=250, emitter_mu_gain=24.0)
INTERACTION_CFG = dict(dim=32, embed_dim=16, ff_dim=64, dropout=0.1,
                       batch_size=32, epochs=25, learning_rate=3e-3)
ABLATION_CFG = dict(dim=16, embed_dim=8, ff_dim=32, n_heads=2, n_layers=1,
                    interaction_channels=8, interaction_gru_hidden=8,
                    dropout=0.1, batch_size=32, epochs=2, learning_rate=3e-3,
                    seed=0, split_train=0.7, split_val=0.1)


def test_criterion_1_gradient_correctness():
    with criterion(1, "gradient correctness (ops + composed tiny model)"):
        from gava.gradcheck_suite import run_gradcheck_suite
        t0 = time.time()
        assert run_gradcheck_suite(verbose=False, quick=False)
        elapsed = time.time() - t0
        assert elapsed < 120, f"gradient check took {elapsed:.0f}s"


def _oracle_visual_weight(speed_ms, dx, dy, cfg):
    """Independent point-in-sector oracle: if-chain bands, atan2 bearing."""
    kmh = speed_ms * 3.6
    if kmh < 30.0:
        radius, apex = 30.0, 90.0
    elif kmh < 60.0:
        radius, apex = 50.0, 75.0
    elif kmh < 90.0:
        radius, apex = 70.0, 60.0
    else:
        radius, apex = 90.0, 45.0
    dist = math.hypot(dx, dy)
    # heading is +y in this construction
    bearing = abs(math.degrees(math.atan2(dx, dy))) if dist > 0 else 0.0
    if dist <= radius and bearing <= apex / 2.0:
        return 1.0
    if dist <= radius and bearing <= 90.0:
        return cfg.fringe_weight
    return cfg.peripheral_weight


def test_criterion_2_sector_semantics(rng):
    with criterion(2, "visual sector semantics and oracle agreement"):
        cfg = TrainConfig()
        kmh = 1 / 3.6
        low = sector_for_speed(20 * kmh, cfg)
        assert low.radius == 30.0 and low.half_angle * 2 == 90.0
        high = sector_for_speed(95 * kmh, cfg)
        assert high.radius == 90.0 and high.half_angle * 2 == 45.0

        specs = [sector_for_speed(s * kmh, cfg) for s in np.linspace(0, 150, 400)]
        radii = [s.radius for s in specs]
        apexes = [s.half_angle for s in specs]
        assert all(b >= a for a, b in zip(radii, radii[1:]))
        assert all(b <= a for a, b in zip(apexes, apexes[1:]))

        # drive the production matrix over randomized geometries until 10,000
        # (speed, dx, dy) triples are compared; the oracle is the if-chain above
        samples = synth_generate("constant_velocity", 4, seed=7)
        checked = 0
        disagreements = 0
        trial = 0
        while checked < 10_000:
            slot_len = float(rng.uniform(1.0, 12.0))
            lane_w = float(rng.uniform(1.0, 8.0))
            vcfg = dataclasses.replace(cfg, slot_length=slot_len, lane_width=lane_w)
            batch = make_batch(samples)
            batch.target_speed[:] = rng.uniform(0.0, 45.0, batch.target_speed.shape)
            # straight +y motion so the oracle's heading assumption holds
            v = build_visual_matrix(batch, vcfg)
            from gava.vision import cell_centers
            centers = cell_centers(13, 3, slot_len, lane_w)
            for b in range(batch.size):
                for t in range(batch.history_steps):
                    speed = batch.target_speed[b, t]
                    for s in range(13):
                        for c in range(3):
                            expected = _oracle_visual_weight(
                                speed, centers[s, c, 0], centers[s, c, 1], vcfg)
                            checked += 1
                            if v[b, t, s, c] != expected:
                                disagreements += 1
            trial += 1
            assert trial < 100
        assert disagreements == 0, f"{disagreements} of {checked} points disagree"


def test_criterion_3_attention_graph_invariants(rng):
    with criterion(3, "attention and graph invariants"):
        # softmax row sums on 1,000 random instances
        x = rng.standard_normal((1000, 9)) * 8
        rows = T.softmax(Tensor(x), axis=-1).data
        assert np.abs(rows.sum(-1) - 1.0).max() <= 1e-9
        assert (rows > 0).all()

        layer = GraphAttentionLayer(4, 6, rng)
        # GAT attention row sums on 1,000 random graphs
        for _ in range(1000):
            n = int(rng.integers(2, 8))
            nodes = Tensor(rng.standard_normal((n, 4)))
            _, att = layer.attention(nodes, np.ones(n), None, 0.0)
            assert np.abs(att.data.sum(-1) - 1.0).max() <= 1e-9

        # permutation equivariance under 100 random relabelings
        for _ in range(100):
            n = int(rng.integers(3, 9))
            nodes = rng.standard_normal((n, 4))
            bias = (rng.random((n, n)) > 0.5).astype(float)
            bias = np.maximum(bias, bias.T)
            perm = rng.permutation(n)
            out = layer(Tensor(nodes), np.ones(n), bias, 0.8).data
            out_p = layer(Tensor(nodes[perm]), np.ones(n),
                          bias[np.ix_(perm, perm)], 0.8).data
            assert np.abs(out_p - out[perm]).max() <= 1e-9

        # nearby-bias monotonicity on 100 random graphs (mixed rows)
        for _ in range(100):
            n = int(rng.integers(3, 8))
            nodes = Tensor(rng.standard_normal((n, 4)))
            bias = np.zeros((n, n))
            j_biased = int(rng.integers(1, n))
            bias[0, j_biased] = 1.0
            _, a1 = layer.attention(nodes, np.ones(n), bias, 0.3)
            _, a2 = layer.attention(nodes, np.ones(n), bias, 1.3)
            assert a2.data[0, j_biased] > a1.data[0, j_biased]


def _grid_density(mu, sigma, rho, joint, xs, ys):
    """Vectorized bivariate-normal mixture density on a grid (test-local)."""
    gx, gy = np.meshgrid(xs, ys)
    total = np.zeros_like(gx)
    for m in range(mu.shape[0]):
        sx, sy, r = sigma[m, 0, 0], sigma[m, 0, 1], rho[m, 0]
        zx = (gx - mu[m, 0, 0]) / sx
        zy = (gy - mu[m, 0, 1]) / sy
        q = (zx ** 2 - 2 * r * zx * zy + zy ** 2) / (1 - r ** 2)
        norm = 1.0 / (2 * np.pi * sx * sy * math.sqrt(1 - r ** 2))
        total += joint[m] * norm * np.exp(-0.5 * q)
    return total


def test_criterion_4_mixture_validity(rng):
    with criterion(4, "gaussian constraint totality and mixture normalization"):
        from gava.decoder import gaussian_constrain
        raw = Tensor(rng.standard_normal((1000, 5)) * 50)
        _, sigma, rho = gaussian_constrain(raw)
        assert sigma.data.min() >= 1e-3 - 1e-15
        assert sigma.data.max() <= 1e3 + 1e-9
        assert np.abs(rho.data).max() <= 0.999 + 1e-15

        cfg = TrainConfig(dim=8, embed_dim=8, n_heads=2, n_layers=1, ff_dim=16,
                          interaction_channels=4, interaction_gru_hidden=4,
                          history_steps=5, future_steps=1,
                          allow_custom_horizon=True, dropout=0.0, grid_slots=7)
        samples = synth_generate("car_following", 10, seed=11, history_steps=5,
                                 future_steps=1)
        for i in range(10):
            model = GavaModel(dataclasses.replace(cfg, seed=100 + i))
            traj = model.predict(samples[i])
            joint = traj.maneuvers.joint()
            span = np.abs(traj.means).max() + 8 * traj.sigmas.max()
            xs = np.linspace(-span, span, 401)
            grid = _grid_density(traj.means, traj.sigmas, traj.rhos, joint, xs, xs)
            total = np.trapezoid(np.trapezoid(grid, xs, axis=1), xs)
            assert abs(total - 1.0) <= 1e-3, f"model {i}: integral {total}"


def test_criterion_5_loss_oracles():
    with criterion(5, "closed-form loss oracles"):
        f = 5
        mu = Tensor(np.zeros((1, 6, f, 2)))
        sigma = Tensor(np.ones((1, 6, f, 2)))
        rho = Tensor(np.zeros((1, 6, f)))
        val = nll_loss(mu, sigma, rho, np.zeros((1, f, 2)),
                       np.array([1]), np.array([0]))
        assert abs(float(val.data) - math.log(2 * math.pi)) <= 1e-9

        p_lat = Tensor(np.full((1, 3), 1 / 3))
        p_lon = Tensor(np.full((1, 2), 1 / 2))
        ce = maneuver_loss(p_lat, p_lon, np.array([2]), np.array([1]))
        assert abs(float(ce.data) - (math.log(3) + math.log(2))) <= 1e-9


def test_criterion_6_overfit_sanity():
    with criterion(6, "overfit on 32 constant-velocity samples"):
        t0 = time.time()
        samples = synth_generate("constant_velocity", 32, seed=1)
        cfg = TrainConfig(**OVERFIT_CFG)
        model, _ = train(cfg, DatasetSplit(train=samples, val=[], test=[]))
        table = rmse_eval(model, samples, cfg)
        elapsed = time.time() - t0
        print(f"\n  overfit rmse: { {k: round(v, 4) for k, v in table.items()} } "
              f"({elapsed:.0f}s)")
        assert elapsed < 600, f"overfit took {elapsed:.0f}s"
        assert table[1] < 0.10, f"RMSE@1s = {table[1]:.4f}"
        assert table[5] < 0.50, f"RMSE@5s = {table[5]:.4f}"


def test_criterion_7_interaction_signal():
    with criterion(7, "car-following interaction signal (-IaM degrades >= 20%)"):
        samples = synth_generate("car_following", 512, seed=100)
        idx = np.random.default_rng(7).permutation(len(samples))
        train_s = [samples[i] for i in idx[:384]]
        test_s = [samples[i] for i in idx[384:]]
        dataset = DatasetSplit(train=train_s, val=[], test=test_s)
        ratios = []
        for seed in range(5):
            results = {}
            for variant in ("gava", "gava-iam"):
                cfg = TrainConfig(variant=variant, seed=seed, **INTERACTION_CFG)
                model, _ = train(cfg, dataset)
                results[variant] = rmse_eval(model, test_s, cfg)[5]
            ratios.append(results["gava-iam"] / results["gava"])
            print(f"\n  seed {seed}: gava={results['gava']:.3f} "
                  f"-IaM={results['gava-iam']:.3f} ratio={ratios[-1]:.3f}")
        median = float(np.median(ratios))
        assert median >= 1.20, f"median -IaM/gava ratio {median:.3f} < 1.20"


def test_criterion_8_protocol_conformance(rng):
    with criterion(8, "3s/5s protocol and RMSE bucket conformance"):
        cfg = TrainConfig()
        assert cfg.dt == 0.2 and cfg.history_steps == 15 and cfg.future_steps == 25
        assert cfg.history_steps * cfg.dt == pytest.approx(3.0)
        assert cfg.future_steps * cfg.dt == pytest.approx(5.0)

        tiny = TrainConfig(dim=8, embed_dim=8, n_heads=2, n_layers=1, ff_dim=16,
                           interaction_channels=4, interaction_gru_hidden=4,
                           dropout=0.0, seed=5)
        samples = synth_generate("car_following", 12, seed=3)
        model = GavaModel(tiny)
        table = rmse_eval(model, samples, tiny)
        assert sorted(table) == [1, 2, 3, 4, 5]

        # independent brute-force recomputation from raw prediction dumps
        sq_by_second = {k: [] for k in range(1, 6)}
        for s in samples:
            traj = model.predict(s)
            point = traj.point_prediction(tiny.point_prediction)
            for step in range(s.future_steps):
                second = math.ceil((step + 1) * tiny.dt - 1e-12)
                err = point[step] - s.future[step]
                sq_by_second[second].append(err[0] ** 2 + err[1] ** 2)
        for k in range(1, 6):
            brute = math.sqrt(np.mean(sq_by_second[k]))
            assert abs(brute - table[k]) <= 1e-9, f"bucket {k}"


def test_criterion_9_determinism_and_persistence(tmp_path):
    with criterion(9, "seeded determinism and checkpoint persistence"):
        samples = synth_generate("car_following", 24, seed=5)
        cfg = TrainConfig(dim=16, embed_dim=8, ff_dim=32, n_heads=2, n_layers=1,
                          interaction_channels=8, interaction_gru_hidden=8,
                          epochs=3, batch_size=8, seed=9)
        dataset = DatasetSplit(train=samples[:16], val=samples[16:], test=[])
        _, rows_a = train(cfg, dataset)
        model, rows_b = train(cfg, dataset)
        assert rows_a == rows_b, "loss traces differ between identical runs"

        path = str(tmp_path / "model.ckpt")
        save_checkpoint(model, cfg, path)
        loaded, _ = load_checkpoint(path)
        # round the original to storage precision; eval must then be identical
        for _, p in model.named_parameters():
            p.data[...] = p.data.astype("<f4").astype(np.float64)
        for _, buf in model.named_buffers():
            buf[...] = buf.astype("<f4").astype(np.float64)
        before = rmse_eval(model, samples, cfg)
        after = rmse_eval(loaded, samples, cfg)
        assert before == after, "eval changed across checkpoint round trip"


def test_criterion_10_ablation_harness(tmp_path):
    with criterion(10, "ablation harness emits the comparison table"):
        t0 = time.time()
        from gava.train import format_ablation_table, run_ablation
        from gava.scene import build_samples
        from gava.synth import synth_tables
        # every agent is a target: leaders see their follower in the rear
        # (peripheral) band, so the -VaM variant genuinely differs
        samples = []
        for table in synth_tables("car_following", 32, seed=20):
            samples.extend(build_samples(table, 15, 25, dt=0.2))
        samples += synth_generate("lane_change", 16, seed=21)
        samples += synth_generate("constant_velocity", 16, seed=22)
        from gava.scene import split_samples
        cfg = TrainConfig(**ABLATION_CFG)
        dataset = split_samples(samples, cfg.split_train, cfg.split_val)
        out = str(tmp_path / "ablation")
        os.makedirs(out, exist_ok=True)
        log = RunLog(os.path.join(out, "ablation.log"))
        results = run_ablation(cfg, dataset, out_dir=out, log=log)
        assert set(results) == {"gava", "gava-iam", "gava-vam", "gava-nvm"}
        for table in results.values():
            assert sorted(table) == [1, 2, 3, 4, 5]
            assert all(np.isfinite(v) for v in table.values())
        text = format_ablation_table(results)
        print("\n" + text)
        lines = text.splitlines()
        assert len(lines) == 6  # header + five horizon rows
        elapsed = time.time() - t0
        assert elapsed < 1800, f"ablation harness took {elapsed:.0f}s"
