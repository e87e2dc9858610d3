"""Shared utilities: exceptions, log-space helpers, RNG streams, atomic IO."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


class ConfigError(Exception):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class SchemaError(DataError):
    """Input file does not match the expected schema."""


class StaleFeatureError(DataError):
    """Feature file was produced by a different input-model checkpoint."""


class NumericalError(Exception):
    """Non-finite values or collapsed computations (CLI exit code 4)."""


def logsumexp(a, axis=-1):
    """Stable log(sum(exp(a))) along ``axis``; -inf rows stay -inf."""
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def normalize_log_weights(logw, axis=-1):
    """Return (weights on the simplex, log normalizer) with max-subtraction.

    Individual -inf entries are fine (zero-probability particles); NaN, +inf,
    or a row that is entirely -inf raises NumericalError.
    """
    logw = np.asarray(logw, dtype=float)
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise NumericalError(
            "weight collapse: NaN or +inf log weights; inputs to the "
            "observation density are likely non-finite"
        )
    amax = np.max(logw, axis=axis, keepdims=True)
    if not np.all(np.isfinite(amax)):
        raise NumericalError(
            "weight collapse: a particle system has zero total weight"
        )
    w = np.exp(logw - amax)
    s = np.sum(w, axis=axis, keepdims=True)
    return w / s, np.squeeze(np.log(s) + amax, axis=axis)


def spawn_rngs(seed, n):
    """n independent, reproducible generator streams from one seed."""
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def rng_for(seed, *key):
    """Keyed generator stream: reproducible and order-independent.

    Streams for distinct keys are independent, so callers can index streams
    by (epoch, batch) or window id without threading generator state around.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    )


def array_sha256(*arrays) -> str:
    """Content hash of float arrays (shape- and byte-sensitive)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def atomic_write_bytes(path, payload: bytes):
    """Write via temp file + rename so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
