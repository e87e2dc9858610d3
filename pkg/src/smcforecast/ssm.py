"""Nonlinear Gaussian state-space model with analytic score terms.

The latent state follows ``x_k = tanh(W_gx x_{k-1} + b_gx + W_gu u_k + b_gu)
+ state noise`` and the scalar observation is ``y_k = sigmoid(w_f . x_k + b_f)
+ observation noise``. Both noise covariances are diagonal and parameterized
by log standard deviations, so every parameter is unconstrained. The module
provides densities, samplers, and hand-derived gradients of the complete-data
log likelihood, block by block, packed into one flat vector for the particle
smoother and the optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .util import NumericalError

_LOG_2PI = float(np.log(2.0 * np.pi))


def sigmoid(a):
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def diag_gaussian_logpdf(x, mean, log_std):
    """Log density of N(mean, diag(exp(2 log_std))) summed over the last axis.

    ``x`` and ``mean`` broadcast against each other; ``log_std`` has shape
    (d,). Scalars are handled by the d = 1 case with trailing axes of size 1.
    """
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z + _LOG_2PI, axis=-1) - np.sum(log_std)


@dataclass(frozen=True)
class SsmParams:
    """Parameter blocks of the nonlinear state-space layer."""

    w_gx: np.ndarray   # (d_x, d_x) state-to-state weights inside tanh
    b_gx: np.ndarray   # (d_x,)
    w_gu: np.ndarray   # (d_x, d_u) input-to-state weights inside tanh
    b_gu: np.ndarray   # (d_x,)
    w_f: np.ndarray    # (d_x,) observation row inside the sigmoid
    b_f: float
    rho_x: np.ndarray  # (d_x,) log std of state noise
    rho_y: float       # log std of observation noise

    @property
    def d_x(self):
        return self.w_gx.shape[0]

    @property
    def d_u(self):
        return self.w_gu.shape[1]

    @property
    def n_params(self):
        d_x, d_u = self.d_x, self.d_u
        return d_x * d_x + d_x + d_x * d_u + d_x + d_x + 1 + d_x + 1


_BLOCKS = ("w_gx", "b_gx", "w_gu", "b_gu", "w_f", "b_f", "rho_x", "rho_y")


def init_ssm(rng, d_x, d_u, scale=0.5, rho_x=-1.0, rho_y=-2.0) -> SsmParams:
    """Random small-weight initialization with fixed starting noise levels."""
    return SsmParams(
        w_gx=scale * rng.standard_normal((d_x, d_x)) / np.sqrt(d_x),
        b_gx=np.zeros(d_x),
        w_gu=scale * rng.standard_normal((d_x, d_u)) / np.sqrt(d_u),
        b_gu=np.zeros(d_x),
        w_f=scale * rng.standard_normal(d_x) / np.sqrt(d_x),
        b_f=0.0,
        rho_x=np.full(d_x, float(rho_x)),
        rho_y=float(rho_y),
    )


def pack_ssm(params: SsmParams) -> np.ndarray:
    """Flatten the parameter blocks into one vector (fixed block order)."""
    return np.concatenate([
        params.w_gx.ravel(),
        params.b_gx,
        params.w_gu.ravel(),
        params.b_gu,
        params.w_f,
        [params.b_f],
        params.rho_x,
        [params.rho_y],
    ])


def unpack_ssm(vec, d_x, d_u) -> SsmParams:
    vec = np.asarray(vec, dtype=float)
    sizes = [d_x * d_x, d_x, d_x * d_u, d_x, d_x, 1, d_x, 1]
    if vec.shape != (sum(sizes),):
        raise ValueError(
            f"parameter vector has shape {vec.shape}, expected ({sum(sizes)},)"
        )
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    return SsmParams(
        w_gx=parts[0].reshape(d_x, d_x).copy(),
        b_gx=parts[1].copy(),
        w_gu=parts[2].reshape(d_x, d_u).copy(),
        b_gu=parts[3].copy(),
        w_f=parts[4].copy(),
        b_f=float(parts[5][0]),
        rho_x=parts[6].copy(),
        rho_y=float(parts[7][0]),
    )


class NonlinearGaussianSSM:
    """State-space model exposing the interface the particle filter consumes.

    Array arguments accept arbitrary leading batch axes; particles live on
    the second-to-last axis in filter code, but nothing here assumes that.
    Observations ``y`` must broadcast against the leading shape of ``x``
    without its last (state) axis.
    """

    def __init__(self, params: SsmParams):
        self.params = params

    @property
    def d_x(self):
        return self.params.d_x

    @property
    def d_u(self):
        return self.params.d_u

    @property
    def n_params(self):
        return self.params.n_params

    def params_vector(self):
        return pack_ssm(self.params)

    def with_params(self, vec) -> "NonlinearGaussianSSM":
        return NonlinearGaussianSSM(unpack_ssm(vec, self.d_x, self.d_u))

    def replace_params(self, **kw) -> "NonlinearGaussianSSM":
        return NonlinearGaussianSSM(replace(self.params, **kw))

    # densities and samplers ------------------------------------------------

    def transition_mean(self, x_prev, u):
        p = self.params
        pre = x_prev @ p.w_gx.T + p.b_gx + u @ p.w_gu.T + p.b_gu
        return np.tanh(pre)

    def observation_mean(self, x):
        p = self.params
        return sigmoid(x @ p.w_f + p.b_f)

    def sample_init(self, rng, shape):
        return np.exp(self.params.rho_x) * rng.standard_normal(
            tuple(shape) + (self.d_x,)
        )

    def log_init(self, x):
        return diag_gaussian_logpdf(x, 0.0, self.params.rho_x)

    def sample_transition(self, rng, x_prev, u):
        mean = self.transition_mean(x_prev, u)
        return mean + np.exp(self.params.rho_x) * rng.standard_normal(mean.shape)

    def log_transition(self, x_prev, u, x):
        return diag_gaussian_logpdf(x, self.transition_mean(x_prev, u), self.params.rho_x)

    def pairwise_log_transition(self, x_old, u, x_new):
        """log m(x_old^j -> x_new^i) for all pairs, shape (..., N_new, N_old).

        ``x_old``: (..., N_old, d), ``x_new``: (..., N_new, d), ``u``:
        (..., d_u). Expanded via the squared-distance identity so the cost is
        two matmuls instead of an (N_new, N_old, d) intermediate.
        """
        mean = self.transition_mean(x_old, u[..., None, :])  # (..., N_old, d)
        inv_var = np.exp(-2.0 * self.params.rho_x)
        quad_new = (x_new * x_new) @ inv_var            # (..., N_new)
        quad_old = (mean * mean) @ inv_var              # (..., N_old)
        cross = (x_new * inv_var) @ np.swapaxes(mean, -1, -2)  # (..., N_new, N_old)
        sq = quad_new[..., :, None] - 2.0 * cross + quad_old[..., None, :]
        return -0.5 * (sq + self.d_x * _LOG_2PI) - np.sum(self.params.rho_x)

    def sample_observation(self, rng, x):
        mean = self.observation_mean(x)
        return mean + np.exp(self.params.rho_y) * rng.standard_normal(mean.shape)

    def log_observation(self, x, y):
        p = self.params
        e = (np.asarray(y, dtype=float) - self.observation_mean(x)) * np.exp(-p.rho_y)
        return -0.5 * (e * e + _LOG_2PI) - p.rho_y

    # score terms ------------------------------------------------------------

    def _empty_grad(self, lead_shape):
        return np.zeros(tuple(lead_shape) + (self.n_params,))

    def _slices(self):
        d_x, d_u = self.d_x, self.d_u
        sizes = [d_x * d_x, d_x, d_x * d_u, d_x, d_x, 1, d_x, 1]
        edges = np.cumsum([0] + sizes)
        return {name: slice(int(a), int(b))
                for name, a, b in zip(_BLOCKS, edges[:-1], edges[1:])}

    def grad_log_init(self, x):
        """Gradient of log N(x; 0, diag exp(2 rho_x)); only rho_x is active."""
        x = np.asarray(x, dtype=float)
        out = self._empty_grad(x.shape[:-1])
        sl = self._slices()
        inv_var = np.exp(-2.0 * self.params.rho_x)
        out[..., sl["rho_x"]] = -1.0 + x * x * inv_var
        return out

    def grad_log_transition(self, x_prev, u, x):
        """Gradient of log m_theta(x_prev, u; x) w.r.t. the packed vector.

        With g = tanh(pre) and e = x - g: the chain rule through the squared
        Mahalanobis term gives d/d(pre) = (e / var_x) * (1 - g^2), which then
        distributes over the affine blocks; d/d(rho_x) = -1 + e^2 / var_x.
        """
        p = self.params
        x_prev = np.asarray(x_prev, dtype=float)
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float)
        g = self.transition_mean(x_prev, u)
        e = x - g
        inv_var = np.exp(-2.0 * p.rho_x)
        delta = e * inv_var * (1.0 - g * g)          # (..., d_x)

        lead = delta.shape[:-1]
        out = self._empty_grad(lead)
        sl = self._slices()
        x_prev_b = np.broadcast_to(x_prev, lead + (self.d_x,))
        u_b = np.broadcast_to(u, lead + (self.d_u,))
        out[..., sl["w_gx"]] = (delta[..., :, None] * x_prev_b[..., None, :]).reshape(
            lead + (self.d_x * self.d_x,)
        )
        out[..., sl["b_gx"]] = delta
        out[..., sl["w_gu"]] = (delta[..., :, None] * u_b[..., None, :]).reshape(
            lead + (self.d_x * self.d_u,)
        )
        out[..., sl["b_gu"]] = delta
        out[..., sl["rho_x"]] = -1.0 + e * e * inv_var
        return out

    def grad_log_observation(self, x, y):
        """Gradient of log r_theta(x; y): sigmoid mean, scalar variance."""
        p = self.params
        x = np.asarray(x, dtype=float)
        f = self.observation_mean(x)
        e = np.asarray(y, dtype=float) - f
        inv_var = np.exp(-2.0 * p.rho_y)
        delta = e * inv_var * f * (1.0 - f)          # (...,)

        lead = delta.shape
        out = self._empty_grad(lead)
        sl = self._slices()
        x_b = np.broadcast_to(x, lead + (self.d_x,))
        out[..., sl["w_f"]] = delta[..., None] * x_b
        out[..., sl["b_f"]] = delta[..., None]
        out[..., sl["rho_y"]] = (-1.0 + e * e * inv_var)[..., None]
        return out


def simulate(model: NonlinearGaussianSSM, us, rng, return_states=False):
    """Draw one trajectory: x_0 from the prior, then T driven transitions.

    ``us`` has shape (T, d_u); transition k (1-based) consumes ``us[k-1]``.
    Returns observations of shape (T + 1,), optionally with states.
    """
    us = np.asarray(us, dtype=float)
    n_steps = us.shape[0]
    xs = np.empty((n_steps + 1, model.d_x))
    ys = np.empty(n_steps + 1)
    xs[0] = model.sample_init(rng, ())
    ys[0] = model.sample_observation(rng, xs[0])
    for k in range(1, n_steps + 1):
        xs[k] = model.sample_transition(rng, xs[k - 1], us[k - 1])
        ys[k] = model.sample_observation(rng, xs[k])
    if return_states:
        return xs, ys
    return ys


def check_finite_params(params: SsmParams):
    """Raise NumericalError naming the first non-finite parameter block."""
    for name in _BLOCKS:
        value = np.asarray(getattr(params, name), dtype=float)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite values in parameter block {name!r}")
