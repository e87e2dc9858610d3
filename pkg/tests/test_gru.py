"""Recurrent feature extractor: forward pass, exact gradients, training loop.

Oracles: a deliberately naive per-element reference cell (plain Python loops
over scalar gate equations) re-derives the forward pass; central finite
differences of the scalar loss re-derive every gradient block.
"""

import numpy as np
import pytest

from conftest import fd_grad
from smcforecast.data import windows_from_arrays
from smcforecast.gru import (
    InputTrainConfig,
    extract_features,
    gru_forward,
    gru_hash,
    init_aux_head,
    init_gru,
    input_gradients,
    input_loss,
    pack_input_params,
    train_input_model,
    unpack_input_params,
)
from smcforecast.util import rng_for


def sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def reference_cell_forward(cell, x_seq, h0):
    """One GRU layer, computed step by step with scalar-style numpy.

    Gate convention: r and z from [x, h]; candidate n uses r applied to the
    hidden-to-hidden term only, each gate with separate input and hidden
    biases.
    """
    h = h0.copy()
    out = []
    for x in x_seq:
        r = sigmoid(cell.w_ir @ x + cell.b_ir + cell.w_hr @ h + cell.b_hr)
        z = sigmoid(cell.w_iz @ x + cell.b_iz + cell.w_hz @ h + cell.b_hz)
        n = np.tanh(cell.w_in @ x + cell.b_in + r * (cell.w_hn @ h + cell.b_hn))
        h = (1 - z) * n + z * h
        out.append(h.copy())
    return np.stack(out)


class TestForward:
    def test_matches_reference_loops(self):
        rng = rng_for(3, 0)
        gru = init_gru(rng, d_in=4, d_hidden=5, n_layers=3)
        x = rng.standard_normal((11, 4))
        got = gru_forward(gru, x)
        cur = x
        for cell in gru.layers:
            cur = reference_cell_forward(cell, cur, np.zeros(5))
        np.testing.assert_allclose(got, cur, rtol=1e-12, atol=1e-12)

    def test_batched_matches_single(self):
        rng = rng_for(3, 1)
        gru = init_gru(rng, d_in=3, d_hidden=4, n_layers=2)
        xb = rng.standard_normal((6, 9, 3))
        got = gru_forward(gru, xb)
        assert got.shape == (6, 9, 4)
        for b in range(6):
            np.testing.assert_allclose(got[b], gru_forward(gru, xb[b]),
                                       rtol=1e-13)

    def test_cache_does_not_change_output(self):
        rng = rng_for(3, 2)
        gru = init_gru(rng, d_in=3, d_hidden=4)
        x = rng.standard_normal((7, 3))
        plain = gru_forward(gru, x)
        cached, caches = gru_forward(gru, x, return_cache=True)
        np.testing.assert_array_equal(plain, cached)
        assert len(caches) == len(gru.layers)

    def test_extract_features_hash_tracks_weights(self):
        rng = rng_for(3, 3)
        gru = init_gru(rng, d_in=6)
        x = rng.standard_normal((20, 6))
        fs = extract_features(gru, x)
        assert fs.model_hash == gru_hash(gru)
        other = init_gru(rng_for(3, 4), d_in=6)
        assert extract_features(other, x).model_hash != fs.model_hash


class TestGradients:
    def case(self, seed, B=2, T=6, d=3, h=4):
        rng = rng_for(seed, 10)
        gru = init_gru(rng, d_in=d, d_hidden=h, n_layers=2)
        head = init_aux_head(rng, d_feat=h, d_hidden=3)
        u = rng.standard_normal((B, T, d))
        y = rng.standard_normal((B, T))
        return gru, head, u, y

    def test_loss_value_consistent(self):
        gru, head, u, y = self.case(0)
        loss, _, _ = input_gradients(gru, head, u, y)
        assert np.isclose(loss, input_loss(gru, head, u, y), rtol=1e-12)

    def test_gradient_matches_finite_difference(self):
        for seed in range(3):
            gru, head, u, y = self.case(seed)
            _, g_gru, g_head = input_gradients(gru, head, u, y)
            got = pack_input_params(g_gru, g_head)
            vec0 = pack_input_params(gru, head)

            def fn(v):
                g2, h2 = unpack_input_params(v, gru, head)
                return input_loss(g2, h2, u, y)

            want = fd_grad(fn, vec0, eps=1e-6)
            np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)


class TestTraining:
    def make_windows(self, n=160, seed=0):
        rng = rng_for(seed, 20)
        t = np.arange(n)
        u = np.stack([np.sin(t / 4.0 + j) for j in range(6)], axis=1)
        u += 0.05 * rng.standard_normal(u.shape)
        y = 0.5 + 0.3 * np.sin(t / 4.0)
        return windows_from_arrays(u, y, stride=8)

    def test_loss_decreases_and_logs(self):
        ws = self.make_windows()
        cfg = InputTrainConfig(max_epochs=6, patience=6, seed=4,
                               learning_rate=5e-3)
        gru, head, rows = train_input_model(ws, ws[:2], cfg)
        assert rows[-1]["train_mse"] < rows[0]["train_mse"]
        assert {"epoch", "train_mse", "val_mse", "skipped_batches"} <= set(rows[0])

    def test_training_deterministic(self):
        ws = self.make_windows()
        cfg = InputTrainConfig(max_epochs=3, seed=9)
        g1, h1, r1 = train_input_model(ws, ws[:2], cfg)
        g2, h2, r2 = train_input_model(ws, ws[:2], cfg)
        np.testing.assert_array_equal(pack_input_params(g1, h1),
                                      pack_input_params(g2, h2))
        assert r1 == r2

    def test_seed_changes_result(self):
        ws = self.make_windows()
        g1, h1, _ = train_input_model(ws, ws[:2],
                                      InputTrainConfig(max_epochs=2, seed=1))
        g2, h2, _ = train_input_model(ws, ws[:2],
                                      InputTrainConfig(max_epochs=2, seed=2))
        assert not np.array_equal(pack_input_params(g1, h1),
                                  pack_input_params(g2, h2))
