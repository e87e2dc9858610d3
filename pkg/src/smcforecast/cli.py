"""Command line front end orchestrating the two-stage pipeline.

Subcommands mirror the pipeline stages: ``train-input`` fits the recurrent
extractor, ``extract-features`` materializes its hidden states,
``train-smcl`` fits the particle-filtered last layer, ``recursive-mle`` runs
the online estimator, ``forecast`` and ``evaluate`` score the model, and
``baseline-hmm`` fits and scores the linear comparison. Artifacts land in the
output directory atomically and re-running any command with the same seed
reproduces them byte for byte. Exit codes: 0 success, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import em_fit
from .checkpoint import (
    blocks_to_gru,
    blocks_to_hmm,
    blocks_to_ssm,
    gru_to_blocks,
    hmm_to_blocks,
    load_checkpoint,
    save_checkpoint,
    ssm_to_blocks,
)
from .config import RunConfig, config_as_dict, load_config
from .data import (
    chronological_split,
    fit_normalizer,
    load_ett_csv,
    load_features,
    normalize_target,
    save_features,
    windows_from_arrays,
)
from .evaluate import HmmForecaster, SmclForecaster, evaluate_suite, evaluate_window
from .gru import (
    InputTrainConfig,
    extract_features,
    gru_hash,
    train_input_model,
)
from .report import (
    save_evaluation_figure,
    save_fan_chart,
    save_parameter_trace,
    save_training_curves,
)
from .ssm import NonlinearGaussianSSM, init_ssm
from .training import StepSchedule, TrainConfig, recursive_mle, train_smcl
from .util import (
    ConfigError,
    DataError,
    NumericalError,
    atomic_write_json,
    atomic_write_text,
    rng_for,
)

INPUT_MODEL_FILE = "input_model.json"
FEATURES_FILE = "features.bin"
SSM_MODEL_FILE = "ssm_model.json"
HMM_MODEL_FILE = "hmm_model.json"


def _fmt(value):
    """CSV cell formatting: repr keeps floats bit-exact across reload."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _provenance(cfg: RunConfig) -> dict:
    """Config snapshot stored in checkpoints.

    Filesystem locations are dropped so the same run written to a different
    directory produces byte-identical artifacts.
    """
    meta = config_as_dict(cfg)
    del meta["out_dir"]
    del meta["csv"]
    return meta


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(cell) for cell in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


class _Pipeline:
    """Splits, normalization, and window construction shared by commands."""

    def __init__(self, cfg: RunConfig):
        if not cfg.csv:
            raise ConfigError("[data] csv is required for this command")
        self.cfg = cfg
        dataset = load_ett_csv(cfg.csv)
        fractions = (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction)
        train, val, test = chronological_split(dataset, fractions)
        self.stats = fit_normalizer(train)
        self.n_total = len(dataset)
        self.end_train = len(train)
        self.end_val = len(train) + len(val)
        self.inputs = (dataset.inputs - self.stats.input_mean) / self.stats.input_std
        self.target = normalize_target(dataset.target, self.stats)

    def segment(self, name):
        bounds = {
            "train": (0, self.end_train),
            "val": (self.end_train, self.end_val),
            "test": (self.end_val, self.n_total),
        }
        return bounds[name]

    def windows(self, name, source, stride):
        """Windows over one split; ``source`` is (T, d) aligned with the data."""
        lo, hi = self.segment(name)
        wins = windows_from_arrays(source[lo:hi], self.target[lo:hi], stride=stride)
        return wins


def _load_input_model(out_dir):
    ckpt = load_checkpoint(os.path.join(out_dir, INPUT_MODEL_FILE),
                           expect_kind="input_model")
    gru, head = blocks_to_gru(ckpt.blocks)
    return ckpt, gru, head


def _load_features_checked(out_dir, gru):
    return load_features(os.path.join(out_dir, FEATURES_FILE),
                         expected_model_hash=gru_hash(gru))


def _load_ssm(out_dir):
    ckpt = load_checkpoint(os.path.join(out_dir, SSM_MODEL_FILE), expect_kind="ssm")
    return ckpt, NonlinearGaussianSSM(blocks_to_ssm(ckpt.blocks))


def cmd_train_input(cfg: RunConfig, out_dir):
    pipe = _Pipeline(cfg)
    train_w = pipe.windows("train", pipe.inputs, cfg.train_stride)
    val_w = pipe.windows("val", pipe.inputs, cfg.eval_stride)
    tcfg = InputTrainConfig(
        d_hidden=cfg.input_hidden, n_layers=cfg.input_layers,
        head_hidden=cfg.head_hidden, learning_rate=cfg.input_learning_rate,
        batch_size=cfg.input_batch_size, max_epochs=cfg.input_max_epochs,
        patience=cfg.input_patience, seed=cfg.seed,
    )
    gru, head, log_rows = train_input_model(train_w, val_w, tcfg)

    meta = _provenance(cfg)
    meta["extractor_hash"] = gru_hash(gru)
    save_checkpoint(os.path.join(out_dir, INPUT_MODEL_FILE), "input_model",
                    gru_to_blocks(gru, head), meta)
    _write_csv(
        os.path.join(out_dir, "input_training_log.csv"),
        ["epoch", "train_mse", "val_mse", "skipped_batches"],
        [[r["epoch"], r["train_mse"], r["val_mse"], r["skipped_batches"]]
         for r in log_rows],
    )
    save_training_curves(os.path.join(out_dir, "input_training_curves.png"),
                         log_rows, "train_mse", "val_mse",
                         "mean squared error", title="input model training")
    print(f"trained input model: {len(log_rows)} epochs, "
          f"final val mse {log_rows[-1]['val_mse']:.5f}")
    return 0


def cmd_extract(cfg: RunConfig, out_dir):
    pipe = _Pipeline(cfg)
    _, gru, _ = _load_input_model(out_dir)
    feats = extract_features(gru, pipe.inputs)
    save_features(os.path.join(out_dir, FEATURES_FILE), feats)
    print(f"extracted features: {feats.features.shape[0]} rows x "
          f"{feats.features.shape[1]} dims, model {feats.model_hash[:12]}")
    return 0


def cmd_train_smcl(cfg: RunConfig, out_dir):
    pipe = _Pipeline(cfg)
    input_ckpt, gru, _ = _load_input_model(out_dir)
    hash_before = gru_hash(gru)
    feats = _load_features_checked(out_dir, gru)

    train_w = pipe.windows("train", feats.features, cfg.smcl_stride)
    val_w = pipe.windows("val", feats.features, cfg.eval_stride)
    model = NonlinearGaussianSSM(init_ssm(
        rng_for(cfg.seed, 3), d_x=cfg.d_x, d_u=feats.features.shape[1],
        rho_x=-2.0, rho_y=-2.0,
    ))
    tcfg = TrainConfig(
        n_particles=cfg.n_particles, batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs, learning_rate=cfg.learning_rate,
        patience=cfg.patience, smoothing_mode=cfg.smoothing_mode,
        paris_k=cfg.paris_k, seed=cfg.seed,
    )
    model, log_rows = train_smcl(train_w, val_w, model, tcfg)
    if gru_hash(gru) != hash_before:
        raise NumericalError("extractor weights changed during stage-2 training")

    meta = _provenance(cfg)
    meta["feature_hash"] = feats.model_hash
    meta["input_model_hash"] = input_ckpt.sha256
    save_checkpoint(os.path.join(out_dir, SSM_MODEL_FILE), "ssm",
                    ssm_to_blocks(model.params), meta)
    _write_csv(
        os.path.join(out_dir, "smcl_training_log.csv"),
        ["epoch", "score_norm", "val_loglik", "mean_ess", "skipped_batches"],
        [[r["epoch"], r["score_norm"], r["val_loglik"], r["mean_ess"],
          r["skipped_batches"]] for r in log_rows],
    )
    save_training_curves(os.path.join(out_dir, "smcl_training_curves.png"),
                         log_rows, "val_loglik", None,
                         "validation log-likelihood",
                         title="state-space layer training")
    print(f"trained state-space layer: {len(log_rows)} epochs, "
          f"best val loglik {max(r['val_loglik'] for r in log_rows):.3f}")
    return 0


def cmd_recursive(cfg: RunConfig, out_dir):
    pipe = _Pipeline(cfg)
    _, gru, _ = _load_input_model(out_dir)
    feats = _load_features_checked(out_dir, gru)
    _, model = _load_ssm(out_dir)

    lo, hi = pipe.segment("train")
    us = feats.features[lo + 1:hi]
    ys = pipe.target[lo:hi]
    schedule = StepSchedule(gamma0=cfg.gamma0, alpha=cfg.alpha)
    model, trajectory = recursive_mle(
        model, us, ys, schedule, cfg.n_particles, rng_for(cfg.seed, 4),
        mode=cfg.smoothing_mode, paris_k=cfg.paris_k,
    )

    header = ["step"] + [f"theta_{j}" for j in range(trajectory.shape[1])]
    _write_csv(os.path.join(out_dir, "parameter_trace.csv"), header,
               [[k] + list(trajectory[k]) for k in range(trajectory.shape[0])])
    save_parameter_trace(os.path.join(out_dir, "parameter_trace.png"),
                         trajectory, title="online parameter estimation")
    meta = _provenance(cfg)
    save_checkpoint(os.path.join(out_dir, "ssm_model_recursive.json"), "ssm",
                    ssm_to_blocks(model.params), meta)
    print(f"recursive estimation: {trajectory.shape[0] - 1} observations, "
          f"{trajectory.shape[1]} parameters tracked")
    return 0


def cmd_forecast(cfg: RunConfig, out_dir, window_index):
    pipe = _Pipeline(cfg)
    _, gru, _ = _load_input_model(out_dir)
    feats = _load_features_checked(out_dir, gru)
    _, model = _load_ssm(out_dir)

    windows = pipe.windows("test", feats.features, cfg.eval_stride)
    if not 0 <= window_index < len(windows):
        raise DataError(
            f"window index {window_index} out of range; the test split has "
            f"{len(windows)} windows at stride {cfg.eval_stride}"
        )
    window = windows[window_index]
    forecaster = SmclForecaster(model, n_particles=cfg.n_particles)
    bundle = evaluate_window(forecaster, window, cfg.n_draws,
                             rng_for(cfg.seed, window_index))

    stem = f"forecast_{window_index:04d}"
    rows = [
        [h + 1, window.y_future[h], bundle.mean[h], bundle.lower[h], bundle.upper[h]]
        for h in range(len(bundle.mean))
    ]
    _write_csv(os.path.join(out_dir, stem + ".csv"),
               ["horizon_hour", "actual", "mean", "lower", "upper"], rows)
    save_fan_chart(os.path.join(out_dir, stem + ".png"), window.y_past,
                   window.y_future, bundle.mean, bundle.lower, bundle.upper,
                   title=f"window {window_index} (start row {window.start})")
    print(f"forecast window {window_index}: rmse {bundle.rmse:.4f}, "
          f"coverage {bundle.picp:.3f}")
    return 0


def _write_evaluation(out_dir, prefix, summary, bundles):
    _write_csv(
        os.path.join(out_dir, prefix + "_windows.csv"),
        ["window_start", "rmse", "picp"],
        [[b.window_start, b.rmse, b.picp] for b in bundles],
    )
    atomic_write_json(os.path.join(out_dir, prefix + "_summary.json"), summary)
    save_evaluation_figure(
        os.path.join(out_dir, prefix + ".png"),
        [b.window_start for b in bundles],
        [b.rmse for b in bundles],
        [b.picp for b in bundles],
        title=f"{summary['forecaster']}: rmse {summary['rmse_mean']:.3f}, "
              f"picp {summary['picp_mean']:.3f}",
    )


def cmd_evaluate(cfg: RunConfig, out_dir, threads):
    pipe = _Pipeline(cfg)
    _, gru, _ = _load_input_model(out_dir)
    feats = _load_features_checked(out_dir, gru)
    _, model = _load_ssm(out_dir)

    windows = pipe.windows("test", feats.features, cfg.eval_stride)
    forecaster = SmclForecaster(model, n_particles=cfg.n_particles)
    summary, bundles = evaluate_suite(forecaster, windows, n_draws=cfg.n_draws,
                                      seed=cfg.seed, threads=threads,
                                      stats=pipe.stats)
    _write_evaluation(out_dir, "evaluation", summary, bundles)
    seconds = float(np.mean([b.seconds for b in bundles]))
    print(f"evaluated {summary['n_windows']} windows: "
          f"rmse {summary['rmse_mean']:.4f}, picp {summary['picp_mean']:.3f} "
          f"({seconds * 1000:.0f} ms/window)")
    return 0


def cmd_baseline_hmm(cfg: RunConfig, out_dir, threads):
    pipe = _Pipeline(cfg)
    lo, hi = pipe.segment("train")
    use_inputs = cfg.hmm_inputs == "covariates"
    train_inputs = pipe.inputs[lo:hi] if use_inputs else None
    params, logliks = em_fit(
        pipe.target[lo:hi], train_inputs, d=cfg.hmm_d,
        max_iters=cfg.hmm_max_iters, tol=cfg.hmm_tol, seed=cfg.seed,
    )

    meta = _provenance(cfg)
    save_checkpoint(os.path.join(out_dir, HMM_MODEL_FILE), "hmm",
                    hmm_to_blocks(params), meta)
    _write_csv(os.path.join(out_dir, "hmm_em_log.csv"),
               ["iteration", "loglik"],
               [[i, float(v)] for i, v in enumerate(logliks)])

    windows = pipe.windows("test", pipe.inputs, cfg.eval_stride)
    forecaster = HmmForecaster(params, use_inputs=use_inputs)
    summary, bundles = evaluate_suite(forecaster, windows, n_draws=cfg.n_draws,
                                      seed=cfg.seed, threads=threads,
                                      stats=pipe.stats)
    _write_evaluation(out_dir, "hmm_evaluation", summary, bundles)
    print(f"baseline fit ({len(logliks)} EM iterations) and evaluated "
          f"{summary['n_windows']} windows: rmse {summary['rmse_mean']:.4f}, "
          f"picp {summary['picp_mean']:.3f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smcforecast",
        description="Two-stage probabilistic forecasting: recurrent features "
                    "with a particle-filtered state-space last layer.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override [run] seed")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: machine cores)")
    common.add_argument("--out", default=None,
                        help="output directory (default from config)")
    common.add_argument("--data", default=None,
                        help="override [data] csv path")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-input", parents=[common],
                   help="fit the recurrent feature extractor (stage 1)")
    sub.add_parser("extract-features", parents=[common],
                   help="materialize extractor hidden states for all rows")
    sub.add_parser("train-smcl", parents=[common],
                   help="fit the state-space layer by particle score ascent")
    sub.add_parser("recursive-mle", parents=[common],
                   help="online parameter estimation over the training stream")
    fc = sub.add_parser("forecast", parents=[common],
                        help="forecast one test window and plot the fan chart")
    fc.add_argument("--window", type=int, default=0,
                    help="test-split window index")
    sub.add_parser("evaluate", parents=[common],
                   help="score the model over all test windows")
    sub.add_parser("baseline-hmm", parents=[common],
                   help="fit and evaluate the linear Gaussian baseline")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be >= 0, got {args.seed}")
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.data is not None:
            overrides["csv"] = args.data
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, overrides)
        threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
        out_dir = cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)

        if args.command == "train-input":
            return cmd_train_input(cfg, out_dir)
        if args.command == "extract-features":
            return cmd_extract(cfg, out_dir)
        if args.command == "train-smcl":
            return cmd_train_smcl(cfg, out_dir)
        if args.command == "recursive-mle":
            return cmd_recursive(cfg, out_dir)
        if args.command == "forecast":
            return cmd_forecast(cfg, out_dir, args.window)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out_dir, threads)
        if args.command == "baseline-hmm":
            return cmd_baseline_hmm(cfg, out_dir, threads)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
