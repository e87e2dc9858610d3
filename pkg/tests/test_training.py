"""Optimizers, schedules, batch score ascent, and online estimation.

Oracles: Adam's fixed points and step-size bound follow from its defining
update equations (checked symbolically for a constant gradient); the online
estimator is checked against the known generating parameter of simulated
data.
"""

import numpy as np
import pytest

from conftest import linear_pair, simulate_linear_path
from smcforecast.baselines import LinearGaussianModel
from smcforecast.data import windows_from_arrays
from smcforecast.ssm import NonlinearGaussianSSM, init_ssm, simulate
from smcforecast.training import (
    AdamState,
    StepSchedule,
    TrainConfig,
    adam_step,
    recursive_mle,
    train_smcl,
    validation_loglik,
)
from smcforecast.util import NumericalError, rng_for


class TestAdam:
    def test_ascends_constant_gradient(self):
        state = AdamState.create(3)
        params = np.zeros(3)
        g = np.array([1.0, -2.0, 0.5])
        for _ in range(10):
            state, params = adam_step(state, params, g, learning_rate=0.1)
        assert np.all(np.sign(params) == np.sign(g))

    def test_first_step_size_equals_learning_rate(self):
        """With bias correction the first update has magnitude exactly lr."""
        state = AdamState.create(2)
        params = np.array([1.0, -1.0])
        g = np.array([3.0, -7.0])
        _, new = adam_step(state, params, g, learning_rate=0.05)
        np.testing.assert_allclose(np.abs(new - params), 0.05, rtol=1e-6)

    def test_step_magnitude_bounded_by_lr(self):
        state = AdamState.create(4)
        params = np.zeros(4)
        rng = rng_for(40, 0)
        for _ in range(50):
            g = rng.standard_normal(4) * 10
            state, new = adam_step(state, params, g, learning_rate=0.01)
            assert np.all(np.abs(new - params) <= 0.01 * 1.2)
            params = new

    def test_non_finite_gradient_skips(self):
        state = AdamState.create(2)
        params = np.array([1.0, 2.0])
        with pytest.warns(RuntimeWarning):
            state, new = adam_step(state, params, np.array([np.nan, 0.0]),
                                   learning_rate=0.1)
        np.testing.assert_array_equal(new, params)
        assert state.skipped == 1
        assert state.t == 0

    def test_pure_no_aliasing(self):
        state = AdamState.create(2)
        params = np.zeros(2)
        s2, p2 = adam_step(state, params, np.ones(2), learning_rate=0.1)
        assert np.all(params == 0.0)
        assert np.all(state.m == 0.0)
        assert s2.t == 1 and not np.array_equal(p2, params)


class TestStepSchedule:
    def test_values_decay_polynomially(self):
        s = StepSchedule(gamma0=0.2, alpha=0.8)
        ks = np.array([1, 2, 10])
        want = 0.2 * ks ** -0.8
        got = np.array([s.gamma(int(k)) for k in ks])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_alpha_range_enforced(self):
        with pytest.raises(ValueError):
            StepSchedule(alpha=0.5)
        with pytest.raises(ValueError):
            StepSchedule(alpha=1.0001)
        with pytest.raises(ValueError):
            StepSchedule(gamma0=0.0)
        StepSchedule(alpha=1.0)


def feature_windows(n=220, seed=0):
    """Small feature/target windows from a smooth driven process."""
    rng = rng_for(seed, 50)
    t = np.arange(n)
    u = np.stack([np.sin(t / 6.0 + j) for j in range(3)], axis=1)
    u += 0.05 * rng.standard_normal(u.shape)
    y = 0.5 + 0.25 * np.tanh(u[:, 0] + 0.5 * u[:, 1])
    y += 0.02 * rng.standard_normal(n)
    return windows_from_arrays(u, y, stride=12)


class TestTrainSmcl:
    def make_model(self, seed=0):
        return NonlinearGaussianSSM(
            init_ssm(rng_for(seed, 51), d_x=3, d_u=3, rho_x=-1.5, rho_y=-2.0))

    def test_validation_loglik_improves(self):
        ws = feature_windows()
        model = self.make_model()
        cfg = TrainConfig(n_particles=60, max_epochs=4, learning_rate=2e-2,
                          patience=10, seed=6)
        before = validation_loglik(model, ws[:3], 200, rng_for(52, 0))
        trained, rows = train_smcl(ws[3:], ws[:3], model, cfg)
        after = validation_loglik(trained, ws[:3], 200, rng_for(52, 0))
        assert after > before
        assert [r["epoch"] for r in rows] == list(range(len(rows)))

    def test_deterministic_for_fixed_seed(self):
        ws = feature_windows()
        cfg = TrainConfig(n_particles=40, max_epochs=2, seed=3)
        m1, r1 = train_smcl(ws[2:], ws[:2], self.make_model(), cfg)
        m2, r2 = train_smcl(ws[2:], ws[:2], self.make_model(), cfg)
        np.testing.assert_array_equal(m1.params_vector(), m2.params_vector())
        assert r1 == r2

    @pytest.mark.parametrize("mode", ["pathspace", "paris"])
    def test_both_smoothing_modes_run(self, mode):
        ws = feature_windows(n=130)
        cfg = TrainConfig(n_particles=30, max_epochs=1, seed=4,
                          smoothing_mode=mode)
        model, rows = train_smcl(ws[1:], ws[:1], self.make_model(), cfg)
        assert len(rows) == 1
        assert rows[0]["skipped_batches"] == 0

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(smoothing_mode="bogus")


class TestRecursiveMle:
    def test_tracks_generating_coefficient(self):
        """Online score ascent pulls a mis-set coefficient toward truth."""
        true_model, _ = linear_pair(a=0.8, c=1.0, sigma_x=0.5, sigma_y=0.5)
        ys = simulate_linear_path(true_model, 3000, rng_for(60, 0))
        start = LinearGaussianModel(
            a=np.array([[0.3]]), c=np.array([1.0]),
            rho_x=np.array([np.log(0.5)]), rho_y=np.log(0.5), free=("a",))
        fitted, traj = recursive_mle(
            start, np.zeros((3000, 0)), ys, StepSchedule(gamma0=0.2, alpha=0.7),
            n_particles=150, rng=rng_for(60, 1))
        assert traj.shape == (3001, 1)
        assert abs(float(fitted.a[0, 0]) - 0.8) < 0.1
        # estimates over the last quarter hover around the truth
        tail = traj[-750:, 0]
        assert abs(tail.mean() - 0.8) < 0.1

    def test_trajectory_starts_at_initial_params(self):
        model, _ = linear_pair(a=0.5)
        ys = simulate_linear_path(model, 50, rng_for(61, 0))
        start = LinearGaussianModel(
            a=np.array([[0.4]]), c=np.array([1.2]),
            rho_x=np.array([np.log(0.5)]), rho_y=np.log(0.4), free=("a",))
        _, traj = recursive_mle(start, np.zeros((50, 0)), ys,
                                StepSchedule(), 50, rng_for(61, 1))
        np.testing.assert_allclose(traj[0], [0.4])
