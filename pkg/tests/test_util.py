"""Numerics and IO helpers.

Oracles: scipy.special implements logsumexp/softmax independently, so weight
normalization is checked against it; hashing and atomic writes are checked by
direct byte comparison.
"""

import json
import os

import numpy as np
import pytest
import scipy.special

from smcforecast.util import (
    NumericalError,
    array_sha256,
    atomic_write_bytes,
    atomic_write_json,
    atomic_write_text,
    logsumexp,
    normalize_log_weights,
    rng_for,
    spawn_rngs,
)


class TestLogsumexp:
    def test_matches_scipy(self, rng):
        a = rng.standard_normal((5, 7)) * 30
        np.testing.assert_allclose(logsumexp(a, axis=-1),
                                   scipy.special.logsumexp(a, axis=-1),
                                   rtol=1e-12)
        np.testing.assert_allclose(logsumexp(a, axis=0),
                                   scipy.special.logsumexp(a, axis=0),
                                   rtol=1e-12)

    def test_no_overflow_for_large_inputs(self):
        a = np.array([1e4, 1e4 - 1.0])
        expected = 1e4 + np.log1p(np.exp(-1.0))
        assert np.isclose(logsumexp(a), expected)

    def test_handles_minus_inf_entries(self):
        a = np.array([0.0, -np.inf, -np.inf])
        assert np.isclose(logsumexp(a), 0.0)


class TestNormalizeLogWeights:
    def test_matches_scipy_softmax(self, rng):
        logw = rng.standard_normal((4, 9)) * 20
        w, logz = normalize_log_weights(logw)
        np.testing.assert_allclose(w, scipy.special.softmax(logw, axis=-1),
                                   rtol=1e-12)
        np.testing.assert_allclose(logz, scipy.special.logsumexp(logw, axis=-1),
                                   rtol=1e-12)

    def test_rows_sum_to_one(self, rng):
        w, _ = normalize_log_weights(rng.standard_normal((3, 50)) * 100)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=1e-12)

    def test_zero_weight_particles_allowed(self):
        w, logz = normalize_log_weights(np.array([0.0, -np.inf, 0.0]))
        np.testing.assert_allclose(w, [0.5, 0.0, 0.5])
        assert np.isclose(logz, np.log(2.0))

    def test_all_minus_inf_rejected(self):
        with pytest.raises(NumericalError):
            normalize_log_weights(np.full(4, -np.inf))

    def test_nan_rejected(self):
        with pytest.raises(NumericalError):
            normalize_log_weights(np.array([0.0, np.nan]))

    def test_plus_inf_rejected(self):
        with pytest.raises(NumericalError):
            normalize_log_weights(np.array([0.0, np.inf]))


class TestKeyedRngs:
    def test_same_key_same_stream(self):
        a = rng_for(11, 3, 5).standard_normal(4)
        b = rng_for(11, 3, 5).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = rng_for(11, 3, 5).standard_normal(4)
        b = rng_for(11, 3, 6).standard_normal(4)
        c = rng_for(12, 3, 5).standard_normal(4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_order_independence(self):
        """Draws for key (2,) do not depend on whether key (1,) was used."""
        first = rng_for(0, 2).standard_normal(3)
        rng_for(0, 1).standard_normal(1000)
        second = rng_for(0, 2).standard_normal(3)
        np.testing.assert_array_equal(first, second)

    def test_spawn_rngs_independent_of_count(self):
        a = spawn_rngs(5, 3)
        b = spawn_rngs(5, 6)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.standard_normal(2),
                                          y.standard_normal(2))


class TestHashing:
    def test_deterministic(self, rng):
        a = rng.standard_normal((4, 3))
        assert array_sha256(a) == array_sha256(a.copy())

    def test_sensitive_to_values_and_shape(self, rng):
        a = rng.standard_normal(12)
        b = a.copy()
        b[3] += 1e-14
        assert array_sha256(a) != array_sha256(b)
        assert array_sha256(a) != array_sha256(a.reshape(3, 4))

    def test_multiple_arrays_order_sensitive(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        assert array_sha256(a, b) != array_sha256(b, a)


class TestAtomicWrites:
    def test_text_round_trip(self, tmp_path):
        p = tmp_path / "x.txt"
        atomic_write_text(p, "hello\n")
        assert p.read_text() == "hello\n"

    def test_bytes_round_trip(self, tmp_path):
        p = tmp_path / "x.bin"
        atomic_write_bytes(p, b"\x00\x01")
        assert p.read_bytes() == b"\x00\x01"

    def test_json_sorted_and_stable(self, tmp_path):
        p = tmp_path / "x.json"
        atomic_write_json(p, {"b": 1, "a": [1.5, "z"]})
        text = p.read_text()
        assert json.loads(text) == {"b": 1, "a": [1.5, "z"]}
        assert text.index('"a"') < text.index('"b"')

    def test_no_temp_file_left_behind(self, tmp_path):
        atomic_write_text(tmp_path / "y.txt", "data")
        assert sorted(os.listdir(tmp_path)) == ["y.txt"]
