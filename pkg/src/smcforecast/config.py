"""Run configuration: one INI-style file, fully validated before any compute.

Every key has a default mirroring the experimental setup (100 particles,
batch 32, 50 epochs, 24h lookback and horizon, 4-dimensional linear
baseline), so a config file only needs the keys it overrides. Validation
collects every violation (unknown keys, bad types, out-of-range values) and
reports them all in a single ConfigError.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .util import ConfigError


@dataclass(frozen=True)
class RunConfig:
    # [run]
    seed: int = 0
    threads: int = 0          # 0 means use the machine's core count
    out_dir: str = "out"
    # [data]
    csv: str = ""
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    train_stride: int = 1
    eval_stride: int = 24
    # [input_model]
    input_hidden: int = 6
    input_layers: int = 3
    head_hidden: int = 6
    input_learning_rate: float = 0.01
    input_batch_size: int = 32
    input_max_epochs: int = 50
    input_patience: int = 5
    # [ssm]
    d_x: int = 6
    n_particles: int = 100
    smoothing_mode: str = "paris"
    paris_k: int = 2
    # [training]
    learning_rate: float = 0.005
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    smcl_stride: int = 6
    # [eval]
    n_draws: int = 100
    # [hmm]
    hmm_d: int = 4
    hmm_max_iters: int = 50
    hmm_tol: float = 1e-6
    hmm_inputs: str = "covariates"
    # [recursive]
    gamma0: float = 0.1
    alpha: float = 0.7


# section -> {config key -> dataclass field}
_SCHEMA = {
    "run": {"seed": "seed", "threads": "threads", "out_dir": "out_dir"},
    "data": {
        "csv": "csv",
        "train_fraction": "train_fraction",
        "val_fraction": "val_fraction",
        "test_fraction": "test_fraction",
        "train_stride": "train_stride",
        "eval_stride": "eval_stride",
    },
    "input_model": {
        "hidden": "input_hidden",
        "layers": "input_layers",
        "head_hidden": "head_hidden",
        "learning_rate": "input_learning_rate",
        "batch_size": "input_batch_size",
        "max_epochs": "input_max_epochs",
        "patience": "input_patience",
    },
    "ssm": {
        "d_x": "d_x",
        "n_particles": "n_particles",
        "smoothing_mode": "smoothing_mode",
        "paris_k": "paris_k",
    },
    "training": {
        "learning_rate": "learning_rate",
        "batch_size": "batch_size",
        "max_epochs": "max_epochs",
        "patience": "patience",
        "stride": "smcl_stride",
    },
    "eval": {"n_draws": "n_draws"},
    "hmm": {
        "d": "hmm_d",
        "max_iters": "hmm_max_iters",
        "tol": "hmm_tol",
        "inputs": "hmm_inputs",
    },
    "recursive": {"gamma0": "gamma0", "alpha": "alpha"},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(field_name, raw, problems, where):
    kind = _FIELD_TYPES[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        problems.append(f"{where}: cannot parse {raw!r} as {kind}")
        return None


def _validate(cfg: RunConfig, problems):
    def check(ok, message):
        if not ok:
            problems.append(message)

    check(cfg.seed >= 0, f"[run] seed must be >= 0, got {cfg.seed}")
    check(cfg.threads >= 0, f"[run] threads must be >= 0, got {cfg.threads}")
    check(bool(cfg.out_dir), "[run] out_dir must not be empty")

    frac_sum = cfg.train_fraction + cfg.val_fraction + cfg.test_fraction
    check(
        cfg.train_fraction > 0 and cfg.val_fraction > 0 and cfg.test_fraction > 0,
        "[data] split fractions must all be positive",
    )
    check(abs(frac_sum - 1.0) < 1e-6,
          f"[data] split fractions must sum to 1, got {frac_sum!r}")
    check(cfg.train_stride >= 1, f"[data] train_stride must be >= 1, got {cfg.train_stride}")
    check(cfg.eval_stride >= 1, f"[data] eval_stride must be >= 1, got {cfg.eval_stride}")

    for name, value in [
        ("input_model hidden", cfg.input_hidden),
        ("input_model layers", cfg.input_layers),
        ("input_model head_hidden", cfg.head_hidden),
        ("input_model batch_size", cfg.input_batch_size),
        ("input_model max_epochs", cfg.input_max_epochs),
        ("input_model patience", cfg.input_patience),
        ("ssm d_x", cfg.d_x),
        ("ssm paris_k", cfg.paris_k),
        ("training batch_size", cfg.batch_size),
        ("training max_epochs", cfg.max_epochs),
        ("training patience", cfg.patience),
        ("training stride", cfg.smcl_stride),
        ("eval n_draws", cfg.n_draws),
        ("hmm d", cfg.hmm_d),
        ("hmm max_iters", cfg.hmm_max_iters),
    ]:
        section, key = name.split(" ", 1)
        check(value >= 1, f"[{section}] {key} must be >= 1, got {value}")

    check(cfg.n_particles >= 2,
          f"[ssm] n_particles must be >= 2, got {cfg.n_particles}")
    check(cfg.smoothing_mode in ("paris", "pathspace"),
          f"[ssm] smoothing_mode must be 'paris' or 'pathspace', "
          f"got {cfg.smoothing_mode!r}")
    check(cfg.input_learning_rate > 0,
          f"[input_model] learning_rate must be > 0, got {cfg.input_learning_rate}")
    check(cfg.learning_rate > 0,
          f"[training] learning_rate must be > 0, got {cfg.learning_rate}")
    check(cfg.hmm_tol > 0, f"[hmm] tol must be > 0, got {cfg.hmm_tol}")
    check(cfg.hmm_inputs in ("covariates", "none"),
          f"[hmm] inputs must be 'covariates' or 'none', got {cfg.hmm_inputs!r}")
    check(cfg.gamma0 > 0, f"[recursive] gamma0 must be > 0, got {cfg.gamma0}")
    check(0.5 < cfg.alpha <= 1.0,
          f"[recursive] alpha must lie in (0.5, 1], got {cfg.alpha}")


def load_config(path=None, overrides=None) -> RunConfig:
    """Parse, merge overrides (field name -> value), and validate.

    ``path`` may be None to start from pure defaults. Raises ConfigError
    listing every problem found: unknown sections or keys, unparseable
    values, and range violations.
    """
    problems = []
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SCHEMA:
                problems.append(f"unknown config section [{section}]")
                continue
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    problems.append(f"unknown key {key!r} in section [{section}]")
                    continue
                field_name = _SCHEMA[section][key]
                parsed = _parse_value(field_name, raw, problems,
                                      f"[{section}] {key}")
                if parsed is not None:
                    values[field_name] = parsed
    if overrides:
        values.update(overrides)

    if not problems:
        cfg = RunConfig(**values)
        _validate(cfg, problems)
    if problems:
        raise ConfigError(
            "invalid configuration:\n  " + "\n  ".join(problems)
        )
    return cfg


def config_as_dict(cfg: RunConfig) -> dict:
    """Plain dict view, stored in checkpoints for provenance."""
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
