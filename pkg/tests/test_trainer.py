"""Two-site alternating least squares: environments, solves, sweeps."""

import numpy as np
import pytest

from synthdata import random_mps, random_product_state
from wmera.coarsegrain import ScaleData
from wmera.errors import ArgumentError, DimensionError
from wmera.mps import MPS, BondTensor, canonicalize, merge_bond, product_state, split_bond
from wmera.trainer import (
    Environment,
    TrainConfig,
    cost,
    evaluate,
    local_gradient,
    model_output,
    model_outputs,
    random_weights,
    solve_local,
    sweep,
    train,
)


def linear_dataset(rng, n_sites, n_samples, coeffs=None, bias=0.0):
    """Targets linear in the raw inputs, so a bond-2 chain can fit exactly."""
    if coeffs is None:
        coeffs = rng.uniform(-1.0, 1.0, n_sites)
    samples, ys = [], []
    for _ in range(n_samples):
        x = rng.uniform(0.0, 1.0, n_sites)
        samples.append(product_state([np.array([1.0, v]) for v in x]))
        ys.append(bias + float(coeffs @ x))
    return ScaleData(samples, np.array(ys))


def sign_dataset(rng, n_sites, n_samples):
    """Labels +1/-1 decided by one coordinate, linearly separable."""
    samples, ys = [], []
    for _ in range(n_samples):
        x = rng.uniform(0.0, 1.0, n_sites)
        samples.append(product_state([np.array([1.0, v]) for v in x]))
        ys.append(1.0 if x[0] > 0.5 else -1.0)
    return ScaleData(samples, np.array(ys))


class TestConfigValidation:
    def test_rejects_bad_values(self):
        for kwargs in ({"n_sweeps": 0}, {"delta_weights": -1.0}, {"chi_max": 0},
                       {"lam": -0.1}, {"cg_max_iters": 0}, {"init_bond": 0},
                       {"cg_tol": -1e-3}):
            with pytest.raises(ArgumentError):
                TrainConfig(**kwargs)

    def test_defaults_are_valid(self):
        cfg = TrainConfig()
        assert cfg.n_sweeps == 5 and cfg.lam == 0.0


class TestEnvironment:
    def test_window_rows_reproduce_model_outputs(self):
        """phi @ B.ravel() must equal the zipper inner products at any bond."""
        rng = np.random.default_rng(40)
        data = ScaleData([random_mps(6, 2, rng) for _ in range(7)],
                         rng.standard_normal(7))
        for j in (0, 2, 4):
            w = canonicalize(random_mps(6, 3, rng), j)
            env = Environment(w, data)
            env.refresh_left(w, up_to=j)
            env.refresh_right(w, down_to=j + 2)
            phi = env.window_matrix(j)
            b = merge_bond(w, j)
            got = phi @ b.value.ravel()
            want = model_outputs(w, data)
            np.testing.assert_allclose(got, want, atol=1e-10, rtol=1e-10)

    def test_advance_matches_refresh(self):
        rng = np.random.default_rng(41)
        data = ScaleData([random_mps(5, 2, rng) for _ in range(4)],
                         rng.standard_normal(4))
        w = canonicalize(random_mps(5, 2, rng), 0)
        env = Environment(w, data)
        env.refresh_left(w, up_to=2)
        fresh = Environment(w, data)
        fresh.left = [row[:] for row in fresh.left]
        for j in (0, 1):
            fresh.advance_left(w, j)
        for s in range(4):
            np.testing.assert_allclose(env.left[s][2], fresh.left[s][2], atol=1e-12)

    def test_mismatched_sites_rejected(self):
        rng = np.random.default_rng(42)
        data = ScaleData([random_mps(4, 2, rng)], np.array([1.0]))
        with pytest.raises(DimensionError):
            Environment(random_mps(6, 2, rng), data)


class TestGradient:
    def test_matches_central_differences(self):
        """Descent direction vs finite differences of the full-chain cost."""
        rng = np.random.default_rng(43)
        step = 1e-5
        data = linear_dataset(rng, 6, 12)
        w = canonicalize(random_mps(6, 3, rng), 2)
        env = Environment(w, data)
        env.refresh_left(w, up_to=2)
        env.refresh_right(w, down_to=4)
        b = merge_bond(w, 2)
        grad = local_gradient(env, b).value.ravel()
        fd = np.empty_like(grad)
        flat = b.value.ravel().copy()
        for k in range(flat.size):
            for sgn, slot in ((1.0, 0), (-1.0, 1)):
                pert = flat.copy()
                pert[k] += sgn * step
                block = BondTensor(pert.reshape(b.value.shape), 2)
                w_pert, _ = split_bond(w, block, 0.0, None, new_center=2)
                if slot == 0:
                    up = cost(w_pert, data)
                else:
                    down = cost(w_pert, data)
            fd[k] = (up - down) / (2.0 * step)
        # local_gradient returns the descent direction, hence the sign flip
        rel = np.max(np.abs(-fd - grad)) / max(np.max(np.abs(grad)), 1e-30)
        assert rel <= 1e-6

    def test_ridge_term_included(self):
        rng = np.random.default_rng(44)
        data = linear_dataset(rng, 4, 6)
        w = canonicalize(random_mps(4, 2, rng), 1)
        env = Environment(w, data)
        env.refresh_left(w, up_to=1)
        env.refresh_right(w, down_to=3)
        b = merge_bond(w, 1)
        g0 = local_gradient(env, b, lam=0.0).value
        g1 = local_gradient(env, b, lam=0.5).value
        np.testing.assert_allclose(g1, g0 - 1.0 * b.value, atol=1e-12)


class TestLocalSolve:
    def _window(self, rng, n_sites=5, n_samples=20, j=1):
        data = linear_dataset(rng, n_sites, n_samples)
        w = canonicalize(random_mps(n_sites, 2, rng), j)
        env = Environment(w, data)
        env.refresh_left(w, up_to=j)
        env.refresh_right(w, down_to=j + 2)
        return data, w, env, merge_bond(w, j)

    def test_matches_dense_least_squares(self):
        rng = np.random.default_rng(45)
        data, w, env, b = self._window(rng)
        solved = solve_local(b, env, cg_max_iters=200, cg_tol=1e-14)
        phi = env.window_matrix(b.site_index)
        y = data.labels
        x_ref, *_ = np.linalg.lstsq(phi, y, rcond=None)
        c_ref = 0.5 * np.mean((phi @ x_ref - y) ** 2)
        c_got = 0.5 * np.mean((phi @ solved.value.ravel() - y) ** 2)
        assert c_got <= c_ref + 1e-9 * max(1.0, c_ref)

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(46)
        for _ in range(5):
            data, w, env, b = self._window(rng, n_samples=6)
            phi = env.window_matrix(b.site_index)
            y = data.labels
            before = 0.5 * np.mean((phi @ b.value.ravel() - y) ** 2)
            solved = solve_local(b, env, cg_max_iters=3)
            after = 0.5 * np.mean((phi @ solved.value.ravel() - y) ** 2)
            assert after <= before + 1e-14

    def test_optimal_start_is_fixed_point(self):
        rng = np.random.default_rng(47)
        data, w, env, b = self._window(rng)
        first = solve_local(b, env, cg_max_iters=400, cg_tol=1e-14)
        again = solve_local(first, env, cg_max_iters=400, cg_tol=1e-14)
        np.testing.assert_allclose(again.value, first.value, atol=1e-9)


class TestSweep:
    def test_cost_never_rises_at_solves(self):
        rng = np.random.default_rng(48)
        data = linear_dataset(rng, 6, 25)
        cfg = TrainConfig(n_sweeps=2, delta_weights=1e-12, chi_max=6, seed=0)
        w = random_weights(6, cfg)
        events = []
        w, stats = sweep(w, data, cfg, "lr", monitor=events.append)
        for ev in events:
            assert ev.cost_solved <= ev.cost_before + 1e-12
            assert ev.cost_truncated <= ev.cost_solved + 1e-8

    def test_alternating_directions_share_environment(self):
        rng = np.random.default_rng(49)
        data = linear_dataset(rng, 5, 15)
        cfg = TrainConfig(n_sweeps=1, delta_weights=1e-12, chi_max=4, seed=1)
        w = canonicalize(random_weights(5, cfg), 0)
        env = Environment(w, data)
        env.refresh_right(w)
        w, s1 = sweep(w, data, cfg, "lr", env=env)
        w, s2 = sweep(w, data, cfg, "rl", env=env)
        # a stale environment would leave the second pass inconsistent with
        # a from-scratch evaluation of the same weights
        assert abs(s2.cost - cost(w, data)) < 1e-10 * max(1.0, s2.cost)

    def test_rejects_unknown_direction(self):
        rng = np.random.default_rng(50)
        data = linear_dataset(rng, 4, 5)
        cfg = TrainConfig()
        with pytest.raises(ArgumentError):
            sweep(random_weights(4, cfg), data, cfg, "up")


class TestTrain:
    def test_linear_target_is_learned(self):
        """Targets that are sums of single-site terms sit inside the model
        class, so sweeping should drive the cost into the noise."""
        rng = np.random.default_rng(51)
        data = linear_dataset(rng, 8, 200, bias=0.3)
        cfg = TrainConfig(n_sweeps=5, delta_weights=1e-12, chi_max=8, seed=2)
        w, stats = train(data, cfg)
        assert stats[-1].cost < 1e-6
        assert evaluate(w, data, "regression") < 1e-2

    def test_capped_rank_never_thrashes(self):
        """With a bond cap below the solver's transient rank the pass must
        reject unkeepable updates instead of oscillating."""
        rng = np.random.default_rng(61)
        data = linear_dataset(rng, 8, 40, bias=0.3)
        cfg = TrainConfig(n_sweeps=5, delta_weights=1e-12, chi_max=4, seed=2,
                          cg_max_iters=200, cg_tol=1e-12)
        w, stats = train(data, cfg)
        costs = [s.cost for s in stats]
        assert all(b <= a * (1.0 + 1e-9) + 1e-12 for a, b in zip(costs, costs[1:]))
        assert stats[-1].truncated_weight < 1e-12

    def test_classification_separable(self):
        rng = np.random.default_rng(52)
        data = sign_dataset(rng, 6, 60)
        cfg = TrainConfig(n_sweeps=4, delta_weights=1e-10, chi_max=8, seed=3)
        w, stats = train(data, cfg, task="classification")
        assert stats[-1].train_metric >= 0.95

    def test_stats_shape(self):
        rng = np.random.default_rng(53)
        data = linear_dataset(rng, 4, 10)
        cfg = TrainConfig(n_sweeps=3, chi_max=4, seed=4)
        w, stats = train(data, cfg)
        assert len(stats) == 3
        assert [s.sweep_index for s in stats] == [0, 1, 2]
        for s in stats:
            assert s.max_bond <= 4
            assert s.wall_time >= 0.0
            assert s.truncated_weight >= 0.0

    def test_chi_cap_respected(self):
        rng = np.random.default_rng(54)
        data = linear_dataset(rng, 8, 30)
        cfg = TrainConfig(n_sweeps=2, delta_weights=0.0, chi_max=3, seed=5)
        w, _ = train(data, cfg)
        assert w.max_bond <= 3

    def test_warm_start_used(self):
        rng = np.random.default_rng(55)
        data = linear_dataset(rng, 5, 20)
        cfg = TrainConfig(n_sweeps=2, chi_max=4, seed=6)
        w1, stats1 = train(data, cfg)
        cfg2 = TrainConfig(n_sweeps=1, chi_max=4, seed=7)
        w2, stats2 = train(data, cfg2, w0=w1)
        assert stats2[-1].cost <= stats1[-1].cost + 1e-10

    def test_deterministic_across_runs_and_threads(self):
        rng = np.random.default_rng(56)
        data = linear_dataset(rng, 6, 18)
        cfg = TrainConfig(n_sweeps=2, chi_max=4, seed=8)
        w_a, stats_a = train(data, cfg, threads=1)
        w_b, stats_b = train(data, cfg, threads=1)
        w_c, stats_c = train(data, cfg, threads=4)
        for sa, sb, sc in zip(stats_a, stats_b, stats_c):
            assert sa.cost == sb.cost == sc.cost
            assert sa.train_metric == sb.train_metric == sc.train_metric
        for ca, cb, cc in zip(w_a.cores, w_b.cores, w_c.cores):
            np.testing.assert_array_equal(ca, cb)
            np.testing.assert_array_equal(ca, cc)

    def test_single_sample_fits_exactly(self):
        rng = np.random.default_rng(57)
        data = linear_dataset(rng, 4, 1)
        cfg = TrainConfig(n_sweeps=2, chi_max=4, seed=9)
        w, stats = train(data, cfg)
        assert stats[-1].cost < 1e-16
        assert abs(model_output(w, data.samples[0]) - data.labels[0]) < 1e-7


class TestEvaluate:
    def test_regression_metric_is_mean_abs(self):
        rng = np.random.default_rng(58)
        data = linear_dataset(rng, 4, 12)
        w = random_weights(4, TrainConfig(seed=10))
        f = model_outputs(w, data)
        want = float(np.mean(np.abs(f - data.labels)))
        assert abs(evaluate(w, data, "regression") - want) < 1e-12

    def test_classification_tie_counts_as_positive(self):
        zeros = MPS([np.zeros((1, 2, 1)) for _ in range(4)])
        rng = np.random.default_rng(59)
        data = ScaleData([random_product_state(4, rng) for _ in range(8)],
                         np.array([1.0, -1.0] * 4))
        # all outputs are exactly zero, predicted class is +1
        assert evaluate(zeros, data, "classification") == 0.5

    def test_unknown_task_rejected(self):
        rng = np.random.default_rng(60)
        data = linear_dataset(rng, 4, 3)
        with pytest.raises(ArgumentError):
            evaluate(random_weights(4, TrainConfig()), data, "ranking")
