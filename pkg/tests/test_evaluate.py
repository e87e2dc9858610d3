"""Forecast evaluation: error metrics, per-window bundles, suite aggregation.

Oracles: the metrics have one-line closed forms evaluated by hand; interval
coverage of a well-specified forecaster is checked against its nominal level;
threading must not change any aggregate (per-window randomness is keyed, not
shared).
"""

import numpy as np
import pytest

from conftest import linear_pair
from smcforecast.baselines import simulate_hmm
from smcforecast.data import windows_from_arrays
from smcforecast.evaluate import (
    HmmForecaster,
    SmclForecaster,
    evaluate_suite,
    evaluate_window,
    picp,
    rmse,
)
from smcforecast.ssm import NonlinearGaussianSSM, init_ssm, simulate
from smcforecast.util import rng_for


class TestMetrics:
    def test_rmse_hand_case(self):
        assert np.isclose(rmse([1.0, 2.0, 3.0], [1.0, 2.0, 5.0]),
                          np.sqrt(4.0 / 3.0))

    def test_rmse_zero_for_exact(self):
        assert rmse([0.5, 0.7], [0.5, 0.7]) == 0.0

    def test_picp_hand_case(self):
        got = picp([0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0],
                   [0.5, 1.0, -0.1, 2.0])
        assert np.isclose(got, 0.5)

    def test_picp_closed_interval(self):
        assert picp([1.0], [2.0], [1.0]) == 1.0
        assert picp([1.0], [2.0], [2.0]) == 1.0


def ssm_windows(model, n_windows, rng, d_u):
    """Simulated windows whose inputs and targets obey the model exactly."""
    H = 24
    T = n_windows * 2 * H
    t = np.arange(T)
    us = np.stack([np.sin(t / (5.0 + j)) for j in range(d_u)], axis=1)
    us += 0.1 * rng.standard_normal(us.shape)
    ys = simulate(model, us, rng)
    out = []
    for w in range(n_windows):
        s = w * 2 * H
        out.append(windows_from_arrays(
            us[s:s + 2 * H], ys[s + 1:s + 2 * H + 1], stride=1)[0])
    return out


class TestSmclForecaster:
    def test_bundle_contents(self):
        rng = rng_for(70, 0)
        model = NonlinearGaussianSSM(init_ssm(rng, d_x=3, d_u=2,
                                              rho_x=-1.2, rho_y=-1.5))
        w = ssm_windows(model, 1, rng, 2)[0]
        bundle = evaluate_window(SmclForecaster(model, n_particles=100), w,
                                 n_draws=150, rng=rng_for(70, 1))
        assert bundle.trajectories.shape == (150, 24)
        assert bundle.mean.shape == (24,)
        assert np.all(bundle.lower <= bundle.upper)
        assert 0.0 <= bundle.picp <= 1.0
        assert bundle.rmse >= 0.0
        assert bundle.window_start == w.start

    def test_true_model_intervals_cover_near_nominal(self):
        rng = rng_for(71, 0)
        model = NonlinearGaussianSSM(init_ssm(rng, d_x=3, d_u=2, scale=0.6,
                                              rho_x=-1.0, rho_y=-1.3))
        windows = ssm_windows(model, 30, rng, 2)
        summary, bundles = evaluate_suite(
            SmclForecaster(model, n_particles=150), windows,
            n_draws=150, seed=71)
        assert len(bundles) == 30
        assert 0.88 <= summary["picp_mean"] <= 1.0

    def test_threads_do_not_change_results(self):
        rng = rng_for(72, 0)
        model = NonlinearGaussianSSM(init_ssm(rng, d_x=2, d_u=2))
        windows = ssm_windows(model, 6, rng, 2)
        s1, b1 = evaluate_suite(SmclForecaster(model, n_particles=60),
                                windows, n_draws=60, seed=5, threads=1)
        s4, b4 = evaluate_suite(SmclForecaster(model, n_particles=60),
                                windows, n_draws=60, seed=5, threads=4)
        assert s1 == s4
        for x, y in zip(b1, b4):
            np.testing.assert_array_equal(x.trajectories, y.trajectories)

    def test_summary_fields(self):
        rng = rng_for(73, 0)
        model = NonlinearGaussianSSM(init_ssm(rng, d_x=2, d_u=2))
        windows = ssm_windows(model, 3, rng, 2)
        summary, _ = evaluate_suite(SmclForecaster(model, n_particles=40),
                                    windows, n_draws=40, seed=1)
        for key in ("forecaster", "n_windows", "n_draws", "horizon",
                    "lookback", "rmse_mean", "rmse_std", "picp_mean",
                    "picp_std"):
            assert key in summary, key
        assert summary["n_windows"] == 3
        assert summary["horizon"] == 24


class TestHmmForecaster:
    def test_true_model_intervals_cover_near_nominal(self):
        _, hmm = linear_pair(a=0.9, c=1.0, sigma_x=0.4, sigma_y=0.3)
        rng = rng_for(74, 0)
        windows = []
        for _ in range(30):
            _, ys = simulate_hmm(hmm, 49, rng)
            windows.append(windows_from_arrays(
                np.zeros((48, 0)), ys[1:], stride=1)[0])
        summary, _ = evaluate_suite(HmmForecaster(hmm, use_inputs=False),
                                    windows, n_draws=200, seed=74)
        assert 0.88 <= summary["picp_mean"] <= 1.0

    def test_deterministic_per_seed(self):
        _, hmm = linear_pair()
        rng = rng_for(75, 0)
        _, ys = simulate_hmm(hmm, 49, rng)
        w = windows_from_arrays(np.zeros((48, 0)), ys[1:], stride=1)[0]
        f = HmmForecaster(hmm, use_inputs=False)
        b1 = evaluate_window(f, w, 50, rng_for(75, 1))
        b2 = evaluate_window(f, w, 50, rng_for(75, 1))
        np.testing.assert_array_equal(b1.trajectories, b2.trajectories)
