"""Optimizers and the two likelihood-driven training loops.

``adam_step`` is shared by both stages. ``train_smcl`` runs epoch-based score
ascent for the state-space layer on feature windows: each minibatch gets a
fresh particle filter pass whose smoothed score drives one Adam step.
``recursive_mle`` is the fully online variant that updates the parameters
after every single observation with a decaying step size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import stack_windows
from .smc import (
    filter_step,
    init_cloud,
    loglik_estimate,
    run_filter,
    smoothed_score,
)
from .util import NumericalError, rng_for


@dataclass(frozen=True)
class AdamState:
    """First and second moment accumulators plus step and skip counters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    skipped: int = 0

    @classmethod
    def create(cls, n_params):
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(state: AdamState, params, gradient, learning_rate,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update ascending along ``gradient``; pure, returns new values.

    A non-finite gradient leaves the parameters untouched, emits a warning,
    and increments the skip counter.
    """
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(gradient)):
        warnings.warn("skipping optimizer step: non-finite gradient",
                      RuntimeWarning, stacklevel=2)
        return AdamState(state.m, state.v, state.t, state.skipped + 1), params
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params + learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, t, state.skipped), new_params


@dataclass(frozen=True)
class TrainConfig:
    """Settings for particle score ascent on the state-space layer."""

    n_particles: int = 100
    batch_size: int = 32
    max_epochs: int = 50
    learning_rate: float = 5e-3
    patience: int = 5
    smoothing_mode: str = "paris"
    paris_k: int = 2
    seed: int = 0
    max_skip_fraction: float = 0.2

    def __post_init__(self):
        if self.smoothing_mode not in ("pathspace", "paris"):
            raise ValueError(
                f"smoothing_mode must be 'pathspace' or 'paris', "
                f"got {self.smoothing_mode!r}"
            )


def _window_arrays(windows):
    """Stack windows and split them filter-style: ys (W, T+1), us (W, T, d)."""
    u, y = stack_windows(windows)
    return u[:, 1:, :], y


def validation_loglik(model, windows, n_particles, rng):
    """Mean per-window log-likelihood estimate, score-free filtering."""
    us, ys = _window_arrays(windows)
    trace = run_filter(model, us, ys, n_particles, rng, mode="none")
    return float(np.mean(loglik_estimate(trace)))


def train_smcl(train_windows, val_windows, model, config: TrainConfig):
    """Score ascent for the nonlinear state-space layer.

    Each minibatch of feature windows is filtered jointly; the batch gradient
    is the mean over windows of the smoothed score, fed to Adam. Validation
    log likelihood is estimated after every epoch and drives early stopping;
    the parameters with the best validation value are returned.

    Returns (model, log_rows); each row records epoch, mean batch score norm,
    validation log likelihood, mean effective sample size, and skip counts.
    Raises NumericalError if more than ``config.max_skip_fraction`` of an
    epoch's batches produced unusable gradients.
    """
    us_tr, ys_tr = _window_arrays(train_windows)
    n_windows = ys_tr.shape[0]
    shuffle_rng = rng_for(config.seed, 0)

    theta = model.params_vector()
    state = AdamState.create(theta.shape[0])
    best = (-np.inf, theta.copy())
    wait = 0
    log_rows = []
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n_windows)
        n_batches = 0
        skipped = 0
        norms = []
        ess_means = []
        for b, lo in enumerate(range(0, n_windows, config.batch_size)):
            sel = order[lo:lo + config.batch_size]
            n_batches += 1
            rng = rng_for(config.seed, 1, epoch, b)
            current = model.with_params(theta)
            try:
                trace = run_filter(
                    current, us_tr[sel], ys_tr[sel], config.n_particles, rng,
                    mode=config.smoothing_mode, paris_k=config.paris_k,
                )
                score = smoothed_score(trace).mean(axis=0)
            except NumericalError:
                skipped += 1
                continue
            if not np.all(np.isfinite(score)):
                skipped += 1
                continue
            state, theta = adam_step(state, theta, score, config.learning_rate)
            norms.append(float(np.linalg.norm(score)))
            ess_means.append(float(np.mean(trace.ess)))
        if skipped > config.max_skip_fraction * n_batches:
            raise NumericalError(
                f"epoch {epoch}: {skipped}/{n_batches} batches skipped; "
                f"the filter is numerically degenerate at the current "
                f"parameters"
            )
        val_rng = rng_for(config.seed, 2, epoch)
        val_ll = validation_loglik(model.with_params(theta), val_windows,
                                   config.n_particles, val_rng)
        log_rows.append({
            "epoch": epoch,
            "score_norm": float(np.mean(norms)) if norms else float("nan"),
            "val_loglik": val_ll,
            "mean_ess": float(np.mean(ess_means)) if ess_means else float("nan"),
            "skipped_batches": skipped,
        })
        if val_ll > best[0]:
            best = (val_ll, theta.copy())
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return model.with_params(best[1]), log_rows


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step sizes gamma_k = gamma0 * k^(-alpha)."""

    gamma0: float = 0.1
    alpha: float = 0.7

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError(
                f"alpha must lie in (0.5, 1] for convergence, got {self.alpha}"
            )

    def gamma(self, k):
        return self.gamma0 * float(k) ** (-self.alpha)


def recursive_mle(model, us, ys, schedule: StepSchedule, n_particles, rng,
                  mode="paris", paris_k=2):
    """Online parameter estimation along one long observation record.

    After each filter step the parameters move along the increment of the
    smoothed score statistic, theta_k = theta_{k-1} + gamma_k (S_k - S_{k-1}),
    and the updated model drives the next step. Returns (model, trajectory)
    where trajectory has shape (T+1, P) and row k holds theta after
    observation k. Non-finite increments skip the update but the filter keeps
    running.
    """
    us = np.asarray(us, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n_steps = us.shape[0]
    if ys.shape[0] != n_steps + 1:
        raise ValueError(
            f"expected {n_steps + 1} observations for {n_steps} transitions, "
            f"got {ys.shape[0]}"
        )

    theta = model.params_vector()
    trajectory = np.empty((n_steps + 1, theta.shape[0]))
    trajectory[0] = theta
    current = model.with_params(theta)

    cloud, _ = init_cloud(current, ys[0], n_particles, rng, mode=mode)
    score_prev = np.einsum("n,np->p", cloud.weights, cloud.tau)
    for k in range(1, n_steps + 1):
        cloud, _ = filter_step(current, cloud, us[k - 1], ys[k], rng,
                               mode=mode, paris_k=paris_k)
        score = np.einsum("n,np->p", cloud.weights, cloud.tau)
        increment = score - score_prev
        if np.all(np.isfinite(increment)):
            theta = theta + schedule.gamma(k) * increment
            current = current.with_params(theta)
        else:
            warnings.warn(f"step {k}: non-finite score increment, update skipped",
                          RuntimeWarning, stacklevel=2)
        score_prev = score
        trajectory[k] = theta
    return current, trajectory
