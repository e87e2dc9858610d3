"""Bootstrap particle filter with online score accumulation.

The filter targets a state-space model through a small duck-typed interface
(``sample_init``, ``log_init``, ``sample_transition``, ``log_transition``,
``sample_observation``, ``log_observation``, gradient blocks, and for noise
hooks ``transition_mean``). Particles are propagated from the prior kernel and
weighted by the observation density, with multinomial resampling at every
step. All operations are batched: arrays carry arbitrary leading axes, with
particles on the second-to-last state axis, so many independent windows run
through one filter call.

Score estimation piggybacks on filtering via per-particle statistics
``tau_k^i`` that estimate the smoothed sum of complete-data gradient terms
along the history of particle i. Two update rules share this storage:

* ``pathspace``: tau follows the resampling ancestor, so the weighted sum
  reproduces the gradient of the particle estimate of log p(Y) along
  surviving ancestral lines. Cheap, but the variance grows quickly with the
  sequence length as ancestral paths coalesce.
* ``paris``: tau is refreshed by averaging over ``paris_k`` backward-kernel
  draws per particle, which keeps the variance linear in the sequence length
  at O(N^2) cost per step.

RNG draw order within a step is fixed: resampling uniforms, then propagation
noise, then backward-sampling gumbels. Tests can override each stage through
the explicit hook arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import normalize_log_weights

_PAIR_BUDGET = 30_000_000  # scratch floats allowed for (rows, N_new, N_old) blocks


@dataclass
class ParticleCloud:
    """Weighted particle system at one time index.

    ``tau`` holds the per-particle smoothed score statistic (None when the
    filter runs in score-free mode). ``ancestors`` are the resampling indices
    that produced this cloud; ``origins`` track each particle's ancestor at
    time 0, which measures path degeneracy.
    """

    particles: np.ndarray      # (..., N, d_x)
    log_weights: np.ndarray    # (..., N) unnormalized
    weights: np.ndarray        # (..., N) normalized
    ancestors: np.ndarray      # (..., N) int64
    origins: np.ndarray        # (..., N) int64
    tau: np.ndarray | None     # (..., N, P)
    k: int

    @property
    def n_particles(self):
        return self.particles.shape[-2]


@dataclass
class FilterTrace:
    """Filter output: final cloud plus per-step diagnostics.

    ``log_increments[..., k]`` is log((1/N) sum of unnormalized weights) at
    step k, so the total over k estimates log p(y_{0:T}).
    """

    mode: str
    n_steps: int
    cloud: ParticleCloud
    log_increments: np.ndarray      # (..., T+1)
    ess: np.ndarray                 # (..., T+1)
    unique_origins: np.ndarray | None  # (..., T+1) int64, only when tracked
    clouds: list | None             # per-step clouds when stored


def ess(weights) -> np.ndarray:
    """Effective sample size 1 / sum(w^2) along the particle axis."""
    weights = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(weights * weights, axis=-1)


def multinomial_resample(weights, rng, n_draws=None, gumbels=None):
    """i.i.d. categorical indices proportional to ``weights``.

    ``weights`` has shape (..., N); the result has shape (..., n_draws).
    When ``gumbels`` of shape (..., n_draws, N) is supplied the draws use the
    argmax-of-perturbed-logits construction instead of consuming ``rng``,
    which gives tests exact control over the randomness per (slot, particle).
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[-1]
    m = n if n_draws is None else int(n_draws)
    if gumbels is not None:
        logits = np.log(np.maximum(weights, 1e-300))
        return np.argmax(logits[..., None, :] + gumbels, axis=-1)
    lead = weights.shape[:-1]
    flat = weights.reshape(-1, n)
    u = rng.random(flat.shape[:1] + (m,))
    out = np.empty((flat.shape[0], m), dtype=np.int64)
    for row in range(flat.shape[0]):
        cdf = np.cumsum(flat[row])
        out[row] = np.searchsorted(cdf, u[row] * cdf[-1], side="right")
    np.minimum(out, n - 1, out=out)
    return out.reshape(lead + (m,))


def _take_particles(arr, idx):
    """Gather along the particle axis: arr (..., N, d), idx (..., M)."""
    return np.take_along_axis(arr, idx[..., None], axis=-2)


def _take_flat(arr, idx):
    """Gather along the last axis: arr (..., N), idx (..., M)."""
    return np.take_along_axis(arr, idx, axis=-1)


def _count_unique(origins):
    """Number of distinct origin labels per particle system."""
    flat = origins.reshape(-1, origins.shape[-1])
    counts = np.array([np.unique(row).size for row in flat], dtype=np.int64)
    return counts.reshape(origins.shape[:-1])


def init_cloud(model, y0, n_particles, rng, mode="paris", lead_shape=()):
    """Time-0 cloud: prior draws weighted by the first observation.

    Returns (cloud, log_increment). ``lead_shape`` adds batch axes; ``y0``
    must broadcast against it.
    """
    if n_particles < 2:
        raise ValueError(f"need at least 2 particles, got {n_particles}")
    if mode not in ("pathspace", "paris", "none"):
        raise ValueError(f"unknown smoothing mode {mode!r}")
    lead = tuple(lead_shape)
    x = model.sample_init(rng, lead + (n_particles,))
    y0 = np.asarray(y0, dtype=float)
    logw = model.log_observation(x, y0[..., None])
    w, lse = normalize_log_weights(logw)
    inc = lse - np.log(n_particles)

    tau = None
    if mode != "none":
        tau = model.grad_log_init(x) + model.grad_log_observation(x, y0[..., None])
    idx = np.broadcast_to(np.arange(n_particles, dtype=np.int64),
                          lead + (n_particles,)).copy()
    cloud = ParticleCloud(particles=x, log_weights=logw, weights=w,
                          ancestors=idx, origins=idx.copy(), tau=tau, k=0)
    return cloud, inc


def _paris_tau(model, cloud, u, x_new, paris_k, rng, backward_gumbels):
    """Backward-sampled tau refresh: mean over paris_k draws per particle.

    Draw J ~ Categorical(prop. to w_old^j m(x_old^j -> x_new^i)) via the
    gumbel-argmax construction, then average tau_old^J plus the transition
    gradient along (x_old^J -> x_new^i). Work is chunked so the (rows, N_new,
    N_old) scratch block stays within a fixed budget.
    """
    n_old = cloud.n_particles
    n_new = x_new.shape[-2]
    lead = x_new.shape[:-2]
    d_x = x_new.shape[-1]
    n_par = cloud.tau.shape[-1]

    x_old = cloud.particles.reshape(-1, n_old, d_x)
    tau_old = cloud.tau.reshape(-1, n_old, n_par)
    logw_old = np.log(np.maximum(cloud.weights, 1e-300)).reshape(-1, n_old)
    x_new_flat = x_new.reshape(-1, n_new, d_x)
    n_rows = x_new_flat.shape[0]
    u_flat = np.broadcast_to(u, lead + u.shape[-1:]).reshape(n_rows, u.shape[-1])

    if backward_gumbels is None:
        gumbels = rng.gumbel(size=(n_rows, n_new, paris_k, n_old))
    else:
        gumbels = backward_gumbels.reshape(n_rows, n_new, paris_k, n_old)

    chunk = max(1, int(_PAIR_BUDGET // max(1, n_new * n_old * paris_k)))
    tau_new = np.empty((n_rows, n_new, n_par))
    for lo in range(0, n_rows, chunk):
        sl = slice(lo, min(lo + chunk, n_rows))
        if hasattr(model, "pairwise_log_transition"):
            logm = model.pairwise_log_transition(x_old[sl], u_flat[sl], x_new_flat[sl])
        else:
            logm = model.log_transition(
                x_old[sl][:, None, :, :], u_flat[sl][:, None, None, :],
                x_new_flat[sl][:, :, None, :],
            )
        logb = logw_old[sl][:, None, :] + logm           # (rows, N_new, N_old)
        draws = np.argmax(logb[:, :, None, :] + gumbels[sl], axis=-1)
        rows = np.arange(sl.stop - sl.start)[:, None, None]
        tau_j = tau_old[sl][rows, draws]                 # (rows, N_new, K, P)
        x_j = x_old[sl][rows, draws]                     # (rows, N_new, K, d)
        grad_t = model.grad_log_transition(
            x_j, u_flat[sl][:, None, None, :], x_new_flat[sl][:, :, None, :]
        )
        tau_new[sl] = np.mean(tau_j + grad_t, axis=2)
    return tau_new.reshape(lead + (n_new, n_par))


def filter_step(model, cloud: ParticleCloud, u, y, rng, mode="paris", paris_k=2,
                state_noise=None, resample_gumbels=None, backward_gumbels=None):
    """One bootstrap step: resample, propagate, weight, update tau.

    ``u`` has shape (..., d_u) and ``y`` shape (...) against the cloud's
    leading axes. Returns (new cloud, log-likelihood increment). Hooks:
    ``state_noise`` replaces the propagation noise (requires the model to
    expose ``transition_mean``), ``resample_gumbels`` and ``backward_gumbels``
    replace the corresponding random draws.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    n = cloud.n_particles

    idx = multinomial_resample(cloud.weights, rng, gumbels=resample_gumbels)
    parents = _take_particles(cloud.particles, idx)
    if state_noise is None:
        x_new = model.sample_transition(rng, parents, u[..., None, :])
    else:
        x_new = model.transition_mean(parents, u[..., None, :]) + state_noise

    logw = model.log_observation(x_new, y[..., None])
    w, lse = normalize_log_weights(logw)
    inc = lse - np.log(n)

    tau = None
    if mode == "pathspace":
        grad_t = model.grad_log_transition(parents, u[..., None, :], x_new)
        tau = _take_particles(cloud.tau, idx) + grad_t
        tau += model.grad_log_observation(x_new, y[..., None])
    elif mode == "paris":
        tau = _paris_tau(model, cloud, u, x_new, paris_k, rng, backward_gumbels)
        tau += model.grad_log_observation(x_new, y[..., None])
    elif mode != "none":
        raise ValueError(f"unknown smoothing mode {mode!r}")

    new = ParticleCloud(
        particles=x_new, log_weights=logw, weights=w, ancestors=idx,
        origins=_take_flat(cloud.origins, idx), tau=tau, k=cloud.k + 1,
    )
    return new, inc


def run_filter(model, us, ys, n_particles, rng, mode="paris", paris_k=2,
               store_clouds=False, track_unique=False) -> FilterTrace:
    """Filter a whole sequence: ys (..., T+1) with driving inputs us (..., T, d_u).

    Transition k consumes ``us[..., k-1, :]``; time 0 only weights the prior
    draw by ``ys[..., 0]``. Leading axes of ``us`` broadcast against those of
    ``ys``, so one call can filter a batch of windows.
    """
    ys = np.asarray(ys, dtype=float)
    us = np.asarray(us, dtype=float)
    lead = ys.shape[:-1]
    n_steps = ys.shape[-1] - 1
    if us.shape[-2] != n_steps:
        raise ValueError(
            f"inputs cover {us.shape[-2]} transitions but observations imply "
            f"{n_steps}"
        )
    us = np.broadcast_to(us, lead + us.shape[-2:])

    cloud, inc = init_cloud(model, ys[..., 0], n_particles, rng, mode=mode,
                            lead_shape=lead)
    increments = np.empty(lead + (n_steps + 1,))
    ess_trace = np.empty(lead + (n_steps + 1,))
    increments[..., 0] = inc
    ess_trace[..., 0] = ess(cloud.weights)
    uniques = None
    if track_unique:
        uniques = np.empty(lead + (n_steps + 1,), dtype=np.int64)
        uniques[..., 0] = _count_unique(cloud.origins)
    clouds = [cloud] if store_clouds else None

    for k in range(1, n_steps + 1):
        cloud, inc = filter_step(model, cloud, us[..., k - 1, :], ys[..., k],
                                 rng, mode=mode, paris_k=paris_k)
        increments[..., k] = inc
        ess_trace[..., k] = ess(cloud.weights)
        if track_unique:
            uniques[..., k] = _count_unique(cloud.origins)
        if store_clouds:
            clouds.append(cloud)

    return FilterTrace(mode=mode, n_steps=n_steps, cloud=cloud,
                       log_increments=increments, ess=ess_trace,
                       unique_origins=uniques, clouds=clouds)


def loglik_estimate(trace: FilterTrace):
    """Particle estimate of log p(y_{0:T}): sum of per-step log increments."""
    return trace.log_increments.sum(axis=-1)


def smoothed_score(trace: FilterTrace):
    if trace.cloud.tau is None:
        raise ValueError("filter ran in score-free mode; no tau statistics")
    return np.einsum("...n,...np->...p", trace.cloud.weights, trace.cloud.tau)


def pathspace_score(trace: FilterTrace):
    """Score estimate from ancestral-path accumulation (mode 'pathspace')."""
    if trace.mode != "pathspace":
        raise ValueError(f"trace was produced in mode {trace.mode!r}")
    return smoothed_score(trace)


def paris_score(trace: FilterTrace):
    """Score estimate from backward-sampled tau statistics (mode 'paris')."""
    if trace.mode != "paris":
        raise ValueError(f"trace was produced in mode {trace.mode!r}")
    return smoothed_score(trace)


def predict_samples(model, cloud: ParticleCloud, us_future, rng, n_draws=None,
                    state_noise=None, obs_noise=None, return_states=False):
    """Monte Carlo forecast trajectories from a filtered cloud.

    One ancestor per trajectory is drawn from the final weights, then states
    roll forward through the transition kernel and observations are sampled
    at each horizon step. ``us_future`` has shape (..., H, d_u); the result
    has shape (..., n_draws, H). The noise hooks mirror ``filter_step``:
    ``state_noise`` (..., n_draws, H, d_x) and ``obs_noise`` (..., n_draws, H)
    replace the sampled randomness (requiring ``transition_mean`` and
    ``observation_mean``).
    """
    us_future = np.asarray(us_future, dtype=float)
    horizon = us_future.shape[-2]
    m = cloud.n_particles if n_draws is None else int(n_draws)

    idx = multinomial_resample(cloud.weights, rng, n_draws=m)
    x = _take_particles(cloud.particles, idx)
    ys = np.empty(x.shape[:-1] + (horizon,))
    xs = np.empty(x.shape[:-1] + (horizon, x.shape[-1])) if return_states else None
    for h in range(horizon):
        u_h = us_future[..., h, :][..., None, :]
        if state_noise is None:
            x = model.sample_transition(rng, x, u_h)
        else:
            x = model.transition_mean(x, u_h) + state_noise[..., h, :]
        if obs_noise is None:
            ys[..., h] = model.sample_observation(rng, x)
        else:
            ys[..., h] = model.observation_mean(x) + obs_noise[..., h]
        if return_states:
            xs[..., h, :] = x
    if return_states:
        return ys, xs
    return ys
