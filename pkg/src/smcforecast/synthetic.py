"""Synthetic ETT-style data: hourly load covariates driving an oil temperature.

The generator mimics the transformer-temperature setting: six load series with
daily and weekly cycles plus AR(1) noise, and a target that responds
nonlinearly to load through first-order thermal inertia. It backs the CLI
smoke tests and stands in for the real ETTh1 file on machines without it.
"""

from __future__ import annotations

import numpy as np

from .data import COVARIATE_COLUMNS, TimeSeriesDataset, hourly_timestamps
from .util import atomic_write_text

_LOAD_LEVEL = np.array([5.8, 2.1, 4.2, 1.1, 3.2, 0.9])
_DAILY_AMP = np.array([2.4, 0.9, 2.0, 0.6, 1.1, 0.4])
_WEEKLY_AMP = np.array([1.1, 0.4, 0.9, 0.3, 0.5, 0.2])
_NOISE_STD = np.array([0.9, 0.45, 0.8, 0.35, 0.5, 0.3])


def make_ett_like(n_rows, seed=0) -> TimeSeriesDataset:
    """Deterministic ETT-shaped dataset with n_rows hourly records."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    t = np.arange(n_rows, dtype=float)

    phase_d = rng.uniform(0.0, 2 * np.pi, size=6)
    phase_w = rng.uniform(0.0, 2 * np.pi, size=6)
    daily = np.sin(2 * np.pi * t[:, None] / 24.0 + phase_d)
    weekly = np.sin(2 * np.pi * t[:, None] / 168.0 + phase_w)

    ar = np.zeros((n_rows, 6))
    eps = rng.normal(size=(n_rows, 6)) * _NOISE_STD
    for k in range(1, n_rows):
        ar[k] = 0.92 * ar[k - 1] + eps[k]
    loads = _LOAD_LEVEL + _DAILY_AMP * daily + _WEEKLY_AMP * weekly + ar

    # Oil temperature: saturating response to a load mix (the heat balance
    # flattens once the cooler runs at capacity), a multiplicative interaction
    # between the high- and low-voltage useful loads, a seasonal baseline, and
    # weak first-order thermal inertia. The load response is deliberately far
    # from linear in the individual load channels.
    season = 21.0 + 9.5 * np.sin(2 * np.pi * t / 8760.0 - 0.6)
    mix = 0.65 * loads[:, 0] - 0.40 * loads[:, 2] + 0.75 * loads[:, 4]
    drive = np.tanh(0.50 * mix - 1.2)
    interact = np.tanh(
        0.22 * (loads[:, 0] - _LOAD_LEVEL[0]) * (loads[:, 4] - _LOAD_LEVEL[4])
    )
    target_level = (season + 8.0 * drive + 4.5 * interact
                    + 1.6 * np.sin(2 * np.pi * t / 24.0 + 0.8))

    ot = np.zeros(n_rows)
    ot[0] = target_level[0]
    shocks = rng.normal(size=n_rows)
    for k in range(1, n_rows):
        ot[k] = (0.60 * ot[k - 1] + 0.40 * target_level[k]
                 + 0.32 * shocks[k])

    return TimeSeriesDataset(
        timestamps=hourly_timestamps(n_rows),
        inputs=np.round(loads, 3),
        target=np.round(ot, 3),
    )


def write_ett_like_csv(path, n_rows, seed=0) -> TimeSeriesDataset:
    """Write the synthetic dataset as a loader-compatible CSV; returns it."""
    ds = make_ett_like(n_rows, seed=seed)
    lines = ["date," + ",".join(COVARIATE_COLUMNS) + ",OT"]
    stamps = ds.timestamps.astype("datetime64[s]").astype(object)
    for i in range(len(ds)):
        cells = [stamps[i].strftime("%Y-%m-%d %H:%M:%S")]
        cells += [f"{v:.3f}" for v in ds.inputs[i]]
        cells.append(f"{ds.target[i]:.3f}")
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return ds
