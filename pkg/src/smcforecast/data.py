"""ETT-style dataset loading, normalization, windowing, and feature files."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .util import DataError, SchemaError, StaleFeatureError, atomic_write_bytes

COVARIATE_COLUMNS = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL"]
TARGET_COLUMN = "OT"
DATE_COLUMN = "date"

LOOKBACK = 24
HORIZON = 24
WINDOW = LOOKBACK + HORIZON

# Target is min-max scaled into [TARGET_LO, TARGET_HI]; the margin keeps
# normalized targets away from the sigmoid asymptotes of the observation map.
TARGET_LO = 0.05
TARGET_HI = 0.95


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Hourly multivariate series: covariates ``inputs`` and scalar ``target``."""

    timestamps: np.ndarray  # (T,) datetime64[s], strictly increasing, 1h apart
    inputs: np.ndarray      # (T, 6) float64
    target: np.ndarray      # (T,) float64

    def __post_init__(self):
        if self.inputs.shape[0] != self.target.shape[0]:
            raise DataError(
                f"inputs rows ({self.inputs.shape[0]}) != target rows "
                f"({self.target.shape[0]})"
            )
        if self.timestamps.shape[0] != self.inputs.shape[0]:
            raise DataError("timestamps length does not match data rows")
        if len(self.timestamps) > 1:
            gaps = np.diff(self.timestamps.astype("datetime64[s]").astype(np.int64))
            if not np.all(gaps == 3600):
                bad = int(np.argmax(gaps != 3600))
                raise DataError(
                    f"timestamps are not strictly increasing with 1-hour spacing "
                    f"(first violation after row {bad})"
                )

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-column standardization for inputs, min-max scaling for the target."""

    input_mean: np.ndarray  # (6,)
    input_std: np.ndarray   # (6,)
    target_min: float
    target_max: float


@dataclass(frozen=True)
class WindowSample:
    """One 48-hour sample: 24h lookback followed by a 24h forecast horizon."""

    u_past: np.ndarray    # (24, d)
    y_past: np.ndarray    # (24,)
    u_future: np.ndarray  # (24, d)
    y_future: np.ndarray  # (24,)
    start: int            # row index of the first lookback hour

    @property
    def u_full(self):
        return np.concatenate([self.u_past, self.u_future], axis=0)

    @property
    def y_full(self):
        return np.concatenate([self.y_past, self.y_future], axis=0)


@dataclass(frozen=True)
class FeatureSequence:
    """Extracted features for a full series plus the hash of the producing model."""

    features: np.ndarray  # (T, d_feat) float64
    model_hash: str


def _parse_timestamp(text, row):
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise DataError(f"row {row}: cannot parse timestamp {text!r}")


def load_ett_csv(path) -> TimeSeriesDataset:
    """Load a CSV with header ``date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT``.

    Rows are kept in file order. Missing columns raise SchemaError naming the
    column; a non-numeric cell raises DataError with its row index.
    """
    try:
        f = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in [DATE_COLUMN] + COVARIATE_COLUMNS + [TARGET_COLUMN]:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        date_i = header.index(DATE_COLUMN)
        cov_i = [header.index(c) for c in COVARIATE_COLUMNS]
        tgt_i = header.index(TARGET_COLUMN)

        stamps, rows_u, rows_y = [], [], []
        for row_idx, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {row_idx}: expected {len(header)} cells, got {len(row)}"
                )
            stamps.append(_parse_timestamp(row[date_i].strip(), row_idx))
            try:
                rows_u.append([float(row[i]) for i in cov_i])
                rows_y.append(float(row[tgt_i]))
            except ValueError:
                raise DataError(f"row {row_idx}: non-numeric cell") from None

    if not rows_y:
        raise DataError(f"{path}: no data rows")
    timestamps = np.array(stamps, dtype="datetime64[s]")
    return TimeSeriesDataset(
        timestamps=timestamps,
        inputs=np.asarray(rows_u, dtype=np.float64),
        target=np.asarray(rows_y, dtype=np.float64),
    )


def fit_normalizer(dataset: TimeSeriesDataset) -> NormStats:
    """Fit standardization/min-max stats; call on the training split only."""
    if len(dataset) == 0:
        raise DataError("cannot fit normalizer on an empty dataset")
    mean = dataset.inputs.mean(axis=0)
    std = dataset.inputs.std(axis=0)
    for j, s in enumerate(std):
        if s <= 0.0:
            raise DataError(f"constant input column {COVARIATE_COLUMNS[j]!r}")
    tmin = float(dataset.target.min())
    tmax = float(dataset.target.max())
    if not tmin < tmax:
        raise DataError(f"constant target column {TARGET_COLUMN!r}")
    return NormStats(input_mean=mean, input_std=std, target_min=tmin, target_max=tmax)


def normalize_target(values, stats: NormStats):
    span = stats.target_max - stats.target_min
    unit = (np.asarray(values, dtype=float) - stats.target_min) / span
    return TARGET_LO + unit * (TARGET_HI - TARGET_LO)


def inverse_target(values, stats: NormStats):
    """Inverse of :func:`normalize_target`; exact affine round trip."""
    span = stats.target_max - stats.target_min
    unit = (np.asarray(values, dtype=float) - TARGET_LO) / (TARGET_HI - TARGET_LO)
    return stats.target_min + unit * span


def apply_normalizer(dataset: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        timestamps=dataset.timestamps,
        inputs=(dataset.inputs - stats.input_mean) / stats.input_std,
        target=normalize_target(dataset.target, stats),
    )


def _slice(dataset: TimeSeriesDataset, a, b) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        timestamps=dataset.timestamps[a:b],
        inputs=dataset.inputs[a:b],
        target=dataset.target[a:b],
    )


def chronological_split(dataset: TimeSeriesDataset, fractions=(0.6, 0.2, 0.2)):
    """Contiguous, ordered, non-overlapping train/val/test segments."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be positive and sum to 1, got {fr}")
    T = len(dataset)
    n_train = int(round(T * fr[0]))
    n_val = int(round(T * fr[1]))
    bounds = (0, n_train, n_train + n_val, T)
    parts = [_slice(dataset, bounds[i], bounds[i + 1]) for i in range(3)]
    for name, part in zip(("train", "val", "test"), parts):
        if len(part) < WINDOW:
            raise DataError(
                f"{name} segment has {len(part)} rows; "
                f"at least {WINDOW} needed for one window"
            )
    return tuple(parts)


def windows_from_arrays(inputs, target, stride=1, lookback=LOOKBACK, horizon=HORIZON):
    """Contiguous windows over parallel (T, d) inputs and (T,) target arrays."""
    inputs = np.asarray(inputs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    T = inputs.shape[0]
    total = lookback + horizon
    if T < total:
        raise DataError(f"series of length {T} is shorter than one {total}-row window")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    out = []
    for s in range(0, T - total + 1, stride):
        out.append(
            WindowSample(
                u_past=inputs[s : s + lookback],
                y_past=target[s : s + lookback],
                u_future=inputs[s + lookback : s + total],
                y_future=target[s + lookback : s + total],
                start=s,
            )
        )
    return out


def make_windows(dataset: TimeSeriesDataset, stride=1, lookback=LOOKBACK, horizon=HORIZON):
    """Window a dataset; count = floor((T - 48) / stride) + 1."""
    return windows_from_arrays(
        dataset.inputs, dataset.target, stride=stride, lookback=lookback, horizon=horizon
    )


# Feature file: little-endian layout, documented in README.md.
#   bytes 0-3    magic b"SMCF"
#   bytes 4-7    uint32 format version (currently 1)
#   bytes 8-15   uint64 T
#   bytes 16-23  uint64 d_feat
#   bytes 24-87  producing-model sha256 as 64 ASCII hex bytes
#   bytes 88-    T * d_feat float64, row-major
_FEATURE_MAGIC = b"SMCF"
_FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIQQ64s")


def save_features(path, features: FeatureSequence):
    arr = np.ascontiguousarray(features.features, dtype="<f8")
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    hash_bytes = features.model_hash.encode("ascii")
    if len(hash_bytes) != 64:
        raise DataError("model hash must be 64 hex characters")
    header = _HEADER.pack(
        _FEATURE_MAGIC, _FEATURE_VERSION, arr.shape[0], arr.shape[1], hash_bytes
    )
    atomic_write_bytes(path, header + arr.tobytes())


def load_features(path, expected_model_hash=None) -> FeatureSequence:
    """Read a feature file; verify the producing-model hash when given."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated feature file")
    magic, version, T, d_feat, hash_bytes = _HEADER.unpack_from(raw)
    if magic != _FEATURE_MAGIC:
        raise SchemaError(f"{path}: not a feature file (bad magic)")
    if version != _FEATURE_VERSION:
        raise SchemaError(f"{path}: unsupported feature format version {version}")
    body = raw[_HEADER.size :]
    if len(body) != T * d_feat * 8:
        raise DataError(f"{path}: payload size does not match header")
    model_hash = hash_bytes.decode("ascii")
    if expected_model_hash is not None and model_hash != expected_model_hash:
        raise StaleFeatureError(
            f"{path}: features were produced by model {model_hash[:12]}..., "
            f"expected {expected_model_hash[:12]}..."
        )
    arr = np.frombuffer(body, dtype="<f8").reshape(T, d_feat).copy()
    return FeatureSequence(features=arr, model_hash=model_hash)


def hourly_timestamps(n, start="2016-07-01 00:00:00"):
    """Synthetic helper: n hourly datetimes from ``start``."""
    t0 = datetime.strptime(start, "%Y-%m-%d %H:%M:%S")
    return np.array(
        [t0 + timedelta(hours=i) for i in range(n)], dtype="datetime64[s]"
    )


def stack_windows(windows):
    """Stack WindowSamples into batch arrays (W, 48, d) and (W, 48)."""
    if not windows:
        raise DataError("empty window list")
    u = np.stack([w.u_full for w in windows], axis=0)
    y = np.stack([w.y_full for w in windows], axis=0)
    return u, y
