"""Linear Gaussian state-space baseline: Kalman recursions and EM.

The baseline models the scalar target with a latent linear state, optionally
driven by exogenous inputs, and is fit by expectation-maximization with exact
smoothed sufficient statistics. It serves two roles: a forecasting comparator
for the particle pipeline, and an exact oracle against which the particle
filter's likelihood and score estimates are checked on linear models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import NumericalError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HmmParams:
    """Linear Gaussian state-space parameters with scalar observations.

    x_k = A x_{k-1} + B u_k + w_k,  w ~ N(0, Q)
    y_k = c . x_k + v_k,            v ~ N(0, r)
    x_0 ~ N(mu0, p0)
    """

    a: np.ndarray            # (d, d) transition matrix
    b: np.ndarray | None     # (d, m) input matrix, or None for no inputs
    c: np.ndarray            # (d,) observation row
    q: np.ndarray            # (d, d) state noise covariance
    r: float                 # observation noise variance
    mu0: np.ndarray          # (d,) initial mean
    p0: np.ndarray           # (d, d) initial covariance

    @property
    def d(self):
        return self.a.shape[0]


@dataclass(frozen=True)
class KalmanResult:
    """Filtering output; ``log_increments`` sum to the exact log likelihood."""

    pred_means: np.ndarray   # (T, d) means of x_k | y_{0:k-1}
    pred_covs: np.ndarray    # (T, d, d)
    filt_means: np.ndarray   # (T, d) means of x_k | y_{0:k}
    filt_covs: np.ndarray    # (T, d, d)
    log_increments: np.ndarray  # (T,) log p(y_k | y_{0:k-1})
    loglik: float


@dataclass(frozen=True)
class SmootherResult:
    means: np.ndarray        # (T, d) means of x_k | y_{0:T-1}
    covs: np.ndarray         # (T, d, d)
    lag_one: np.ndarray      # (T-1, d, d); [k] = Cov(x_{k+1}, x_k | y_{0:T-1})


def _sym(mat):
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def _inputs_or_zeros(params: HmmParams, inputs, n_steps):
    if params.b is None:
        return None
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape != (n_steps, params.b.shape[1]):
        raise ValueError(
            f"inputs have shape {inputs.shape}, expected "
            f"({n_steps}, {params.b.shape[1]})"
        )
    return inputs


def kalman_filter(params: HmmParams, observations, inputs=None) -> KalmanResult:
    """Exact filtering for y_{0:T-1}; the input drives transitions from k=1.

    Raises NumericalError (naming the step) if an innovation variance is not
    positive, which can only follow from degenerate covariances upstream.
    """
    ys = np.asarray(observations, dtype=float)
    n_steps = ys.shape[0]
    d = params.d
    us = _inputs_or_zeros(params, inputs, n_steps)

    pred_means = np.empty((n_steps, d))
    pred_covs = np.empty((n_steps, d, d))
    filt_means = np.empty((n_steps, d))
    filt_covs = np.empty((n_steps, d, d))
    incs = np.empty(n_steps)

    eye = np.eye(d)
    mean, cov = params.mu0, params.p0
    for k in range(n_steps):
        if k > 0:
            mean = params.a @ filt_means[k - 1]
            if us is not None:
                mean = mean + params.b @ us[k]
            cov = _sym(params.a @ filt_covs[k - 1] @ params.a.T + params.q)
        pred_means[k], pred_covs[k] = mean, cov

        s = float(params.c @ cov @ params.c) + params.r
        if not s > 0.0 or not np.isfinite(s):
            raise NumericalError(
                f"step {k}: innovation variance {s!r} is not positive"
            )
        innovation = ys[k] - float(params.c @ mean)
        gain = cov @ params.c / s
        filt_means[k] = mean + gain * innovation
        joseph = eye - np.outer(gain, params.c)
        filt_covs[k] = _sym(joseph @ cov @ joseph.T + params.r * np.outer(gain, gain))
        incs[k] = -0.5 * (_LOG_2PI + np.log(s) + innovation * innovation / s)
    return KalmanResult(pred_means, pred_covs, filt_means, filt_covs,
                        incs, float(incs.sum()))


def kalman_smoother(params: HmmParams, result: KalmanResult) -> SmootherResult:
    """Rauch-Tung-Striebel pass with the lag-one covariances EM needs."""
    n_steps, d = result.filt_means.shape
    means = np.empty((n_steps, d))
    covs = np.empty((n_steps, d, d))
    lag_one = np.empty((max(n_steps - 1, 0), d, d))

    means[-1] = result.filt_means[-1]
    covs[-1] = result.filt_covs[-1]
    for k in range(n_steps - 2, -1, -1):
        gain = np.linalg.solve(
            result.pred_covs[k + 1],
            (result.filt_covs[k] @ params.a.T).T,
        ).T
        means[k] = result.filt_means[k] + gain @ (means[k + 1] - result.pred_means[k + 1])
        covs[k] = _sym(
            result.filt_covs[k]
            + gain @ (covs[k + 1] - result.pred_covs[k + 1]) @ gain.T
        )
        lag_one[k] = covs[k + 1] @ gain.T
    return SmootherResult(means, covs, lag_one)


def _floor_spd(mat, floor=1e-8):
    """Symmetrize and clip eigenvalues from below; guards M-step collapse."""
    mat = _sym(mat)
    vals, vecs = np.linalg.eigh(mat)
    if np.min(vals) >= floor:
        return mat
    vals = np.maximum(vals, floor)
    return _sym(vecs @ np.diag(vals) @ vecs.T)


def init_hmm(rng, d, observations, n_inputs=None) -> HmmParams:
    """EM starting point: a stable random rotation and isotropic noise."""
    raw = rng.standard_normal((d, d))
    qmat, _ = np.linalg.qr(raw)
    var_y = float(np.var(np.asarray(observations, dtype=float)))
    var_y = max(var_y, 1e-6)
    return HmmParams(
        a=0.9 * qmat,
        b=np.zeros((d, n_inputs)) if n_inputs else None,
        c=rng.standard_normal(d) / np.sqrt(d),
        q=0.1 * var_y * np.eye(d),
        r=0.1 * var_y,
        mu0=np.zeros(d),
        p0=np.eye(d),
    )


def em_fit(observations, inputs=None, d=4, max_iters=50, tol=1e-6, seed=0,
           rng=None):
    """Maximum likelihood by EM; returns (params, per-iteration logliks).

    The M-step estimates [A B] jointly by regressing the smoothed state on
    the previous smoothed state stacked with the input, then Q, C, r, and the
    initial moments in closed form. Covariances are eigenvalue-floored at
    1e-8 to survive degenerate stretches. Iteration stops when the relative
    log-likelihood gain drops below ``tol``.
    """
    ys = np.asarray(observations, dtype=float)
    n_steps = ys.shape[0]
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = init_hmm(rng, d, ys, None if inputs is None else inputs.shape[1])

    logliks = []
    for _ in range(max_iters):
        fr = kalman_filter(params, ys, inputs)
        sr = kalman_smoother(params, fr)
        logliks.append(fr.loglik)

        m = sr.means                                   # (T, d)
        cov_xx = sr.covs + np.einsum("ti,tj->tij", m, m)
        cov_lag = sr.lag_one + np.einsum("ti,tj->tij", m[1:], m[:-1])

        # transition blocks from the regression x_k ~ [x_{k-1}; u_k]
        if inputs is None:
            s_zz = cov_xx[:-1].sum(axis=0)
            s_xz = cov_lag.sum(axis=0)
        else:
            u = inputs[1:]                             # (T-1, m_u)
            s_zz = np.block([
                [cov_xx[:-1].sum(axis=0), m[:-1].T @ u],
                [u.T @ m[:-1], u.T @ u],
            ])
            s_xz = np.hstack([cov_lag.sum(axis=0), m[1:].T @ u])
        ab = np.linalg.solve(s_zz + 1e-10 * np.eye(s_zz.shape[0]), s_xz.T).T
        a_new = ab[:, :d]
        b_new = None if inputs is None else ab[:, d:]
        q_new = (cov_xx[1:].sum(axis=0) - ab @ s_xz.T - s_xz @ ab.T
                 + ab @ s_zz @ ab.T) / (n_steps - 1)
        q_new = _floor_spd(q_new)

        # observation row and variance
        s_xx = cov_xx.sum(axis=0)
        s_yx = ys @ m                                  # (d,)
        c_new = np.linalg.solve(s_xx + 1e-10 * np.eye(d), s_yx)
        r_new = float(
            (ys @ ys - 2.0 * c_new @ s_yx + c_new @ s_xx @ c_new) / n_steps
        )
        r_new = max(r_new, 1e-8)

        params = HmmParams(
            a=a_new, b=b_new, c=c_new, q=q_new, r=r_new,
            mu0=m[0].copy(), p0=_floor_spd(sr.covs[0]),
        )
        if len(logliks) > 1:
            gain = logliks[-1] - logliks[-2]
            if gain < tol * max(1.0, abs(logliks[-2])):
                break
    return params, np.array(logliks)


def hmm_forecast(params: HmmParams, filt_mean, filt_cov, future_inputs,
                 horizon, n_draws, rng):
    """Sampled forecast trajectories (n_draws, horizon) from a filtered state."""
    us = _inputs_or_zeros(params, future_inputs, horizon)
    chol_p = np.linalg.cholesky(_floor_spd(filt_cov))
    chol_q = np.linalg.cholesky(_floor_spd(params.q))
    x = filt_mean + rng.standard_normal((n_draws, params.d)) @ chol_p.T
    ys = np.empty((n_draws, horizon))
    for h in range(horizon):
        x = x @ params.a.T + rng.standard_normal((n_draws, params.d)) @ chol_q.T
        if us is not None:
            x = x + params.b @ us[h]
        ys[:, h] = x @ params.c + np.sqrt(params.r) * rng.standard_normal(n_draws)
    return ys


def hmm_forecast_moments(params: HmmParams, filt_mean, filt_cov, future_inputs,
                         horizon):
    """Exact predictive means and variances of y over the horizon."""
    us = _inputs_or_zeros(params, future_inputs, horizon)
    mean, cov = np.asarray(filt_mean, dtype=float), np.asarray(filt_cov, dtype=float)
    out_mean = np.empty(horizon)
    out_var = np.empty(horizon)
    for h in range(horizon):
        mean = params.a @ mean
        if us is not None:
            mean = mean + params.b @ us[h]
        cov = _sym(params.a @ cov @ params.a.T + params.q)
        out_mean[h] = float(params.c @ mean)
        out_var[h] = float(params.c @ cov @ params.c) + params.r
    return out_mean, out_var


def simulate_hmm(params: HmmParams, n_steps, rng, inputs=None):
    """Draw (states (T, d), observations (T,)) from the generative model."""
    us = _inputs_or_zeros(params, inputs, n_steps)
    chol_q = np.linalg.cholesky(_floor_spd(params.q))
    chol_p0 = np.linalg.cholesky(_floor_spd(params.p0))
    xs = np.empty((n_steps, params.d))
    ys = np.empty(n_steps)
    x = params.mu0 + chol_p0 @ rng.standard_normal(params.d)
    for k in range(n_steps):
        if k > 0:
            x = params.a @ x + chol_q @ rng.standard_normal(params.d)
            if us is not None:
                x = x + params.b @ us[k]
        xs[k] = x
        ys[k] = float(params.c @ x) + np.sqrt(params.r) * rng.standard_normal()
    return xs, ys


# particle-filter-compatible linear model ------------------------------------


class LinearGaussianModel:
    """Diagonal-noise linear model exposing the particle filter interface.

    Used to cross-check the particle machinery against exact Kalman answers:
    the initial law is N(0, diag exp(2 rho_x)), transitions are x' = A x + w
    and observations y = c . x + v, all with log-std parameterization. The
    packed parameter vector covers the blocks named in ``free`` (subsets let
    online estimation track a single coefficient).
    """

    _ALL_BLOCKS = ("a", "c", "rho_x", "rho_y")

    def __init__(self, a, c, rho_x, rho_y, free=_ALL_BLOCKS):
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.rho_x = np.asarray(rho_x, dtype=float)
        self.rho_y = float(rho_y)
        unknown = set(free) - set(self._ALL_BLOCKS)
        if unknown:
            raise ValueError(f"unknown free blocks {sorted(unknown)}")
        self.free = tuple(free)

    @property
    def d_x(self):
        return self.a.shape[0]

    def _block_sizes(self):
        d = self.d_x
        sizes = {"a": d * d, "c": d, "rho_x": d, "rho_y": 1}
        return [(name, sizes[name]) for name in self.free]

    @property
    def n_params(self):
        return sum(size for _, size in self._block_sizes())

    def params_vector(self):
        chunks = {"a": self.a.ravel(), "c": self.c,
                  "rho_x": self.rho_x, "rho_y": np.array([self.rho_y])}
        return np.concatenate([chunks[name] for name in self.free])

    def with_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        new = {"a": self.a, "c": self.c, "rho_x": self.rho_x, "rho_y": self.rho_y}
        offset = 0
        for name, size in self._block_sizes():
            chunk = vec[offset:offset + size]
            offset += size
            if name == "a":
                new["a"] = chunk.reshape(self.d_x, self.d_x)
            elif name == "rho_y":
                new[name] = float(chunk[0])
            else:
                new[name] = chunk.copy()
        return LinearGaussianModel(new["a"], new["c"], new["rho_x"],
                                   new["rho_y"], free=self.free)

    def to_hmm_params(self) -> HmmParams:
        return HmmParams(
            a=self.a.copy(), b=None, c=self.c.copy(),
            q=np.diag(np.exp(2.0 * self.rho_x)), r=float(np.exp(2.0 * self.rho_y)),
            mu0=np.zeros(self.d_x), p0=np.diag(np.exp(2.0 * self.rho_x)),
        )

    # sampling and densities (u arguments are accepted and ignored) ----------

    def transition_mean(self, x_prev, u):
        return x_prev @ self.a.T

    def observation_mean(self, x):
        return x @ self.c

    def sample_init(self, rng, shape):
        return np.exp(self.rho_x) * rng.standard_normal(tuple(shape) + (self.d_x,))

    def log_init(self, x):
        z = x * np.exp(-self.rho_x)
        return -0.5 * np.sum(z * z + _LOG_2PI, axis=-1) - np.sum(self.rho_x)

    def sample_transition(self, rng, x_prev, u):
        mean = self.transition_mean(x_prev, u)
        return mean + np.exp(self.rho_x) * rng.standard_normal(mean.shape)

    def log_transition(self, x_prev, u, x):
        z = (x - self.transition_mean(x_prev, u)) * np.exp(-self.rho_x)
        return -0.5 * np.sum(z * z + _LOG_2PI, axis=-1) - np.sum(self.rho_x)

    def pairwise_log_transition(self, x_old, u, x_new):
        mean = x_old @ self.a.T
        inv_var = np.exp(-2.0 * self.rho_x)
        quad_new = (x_new * x_new) @ inv_var
        quad_old = (mean * mean) @ inv_var
        cross = (x_new * inv_var) @ np.swapaxes(mean, -1, -2)
        sq = quad_new[..., :, None] - 2.0 * cross + quad_old[..., None, :]
        return -0.5 * (sq + self.d_x * _LOG_2PI) - np.sum(self.rho_x)

    def sample_observation(self, rng, x):
        mean = self.observation_mean(x)
        return mean + np.exp(self.rho_y) * rng.standard_normal(mean.shape)

    def log_observation(self, x, y):
        e = (np.asarray(y, dtype=float) - self.observation_mean(x)) * np.exp(-self.rho_y)
        return -0.5 * (e * e + _LOG_2PI) - self.rho_y

    # gradient blocks ---------------------------------------------------------

    def _assemble(self, lead, blocks):
        out = np.zeros(tuple(lead) + (self.n_params,))
        offset = 0
        for name, size in self._block_sizes():
            if name in blocks:
                out[..., offset:offset + size] = blocks[name]
            offset += size
        return out

    def grad_log_init(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if "rho_x" not in self.free:
            return np.zeros(tuple(lead) + (self.n_params,))
        inv_var = np.exp(-2.0 * self.rho_x)
        return self._assemble(lead, {"rho_x": -1.0 + x * x * inv_var})

    def grad_log_transition(self, x_prev, u, x):
        x_prev = np.asarray(x_prev, dtype=float)
        x = np.asarray(x, dtype=float)
        e = x - self.transition_mean(x_prev, u)
        inv_var = np.exp(-2.0 * self.rho_x)
        delta = e * inv_var
        lead = delta.shape[:-1]
        blocks = {}
        if "a" in self.free:
            x_prev_b = np.broadcast_to(x_prev, lead + (self.d_x,))
            blocks["a"] = (delta[..., :, None] * x_prev_b[..., None, :]).reshape(
                lead + (self.d_x * self.d_x,)
            )
        if "rho_x" in self.free:
            blocks["rho_x"] = -1.0 + e * e * inv_var
        return self._assemble(lead, blocks)

    def grad_log_observation(self, x, y):
        x = np.asarray(x, dtype=float)
        e = np.asarray(y, dtype=float) - self.observation_mean(x)
        inv_var = np.exp(-2.0 * self.rho_y)
        lead = e.shape
        blocks = {}
        if "c" in self.free:
            blocks["c"] = (e * inv_var)[..., None] * np.broadcast_to(x, lead + (self.d_x,))
        if "rho_y" in self.free:
            blocks["rho_y"] = (-1.0 + e * e * inv_var)[..., None]
        return self._assemble(lead, blocks)
