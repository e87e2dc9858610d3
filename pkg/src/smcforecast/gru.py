"""Stacked gated recurrent feature extractor trained by backpropagation.

Stage one of the pipeline: a three-layer recurrent network reads the hourly
covariates and is fit, through a small auxiliary one-step-ahead head, to
minimize squared prediction error on 48-hour windows. After training the head
is discarded and the top hidden states become the input sequence of the
state-space layer. Forward and backward passes are written directly in numpy;
gradients are exact and checked against finite differences in the tests.

Cell equations (update gate z, reset gate r, candidate n, hidden h):

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import FeatureSequence
from .ssm import sigmoid
from .training import AdamState, adam_step
from .util import NumericalError, array_sha256, spawn_rngs

_MATRIX_FIELDS = ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn")
_BIAS_FIELDS = ("b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")


@dataclass
class GruCellParams:
    """Weights of one recurrent cell (input-to-hidden and hidden-to-hidden)."""

    w_ir: np.ndarray
    w_iz: np.ndarray
    w_in: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_in: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray

    @property
    def d_in(self):
        return self.w_ir.shape[1]

    @property
    def d_hidden(self):
        return self.w_ir.shape[0]


@dataclass
class GruParams:
    """A stack of recurrent cells; layer l feeds its hidden states to l+1."""

    layers: list

    @property
    def d_in(self):
        return self.layers[0].d_in

    @property
    def d_out(self):
        return self.layers[-1].d_hidden


@dataclass
class AuxHeadParams:
    """One-step-ahead readout used only while fitting the extractor.

    A single recurrent cell reads [previous target, current features], and an
    affine map of its hidden state predicts the next target. ``y0`` is the
    learned stand-in for the unobserved target before the first step.
    """

    cell: GruCellParams
    w_out: np.ndarray  # (d_hidden,)
    b_out: float
    y0: float


def init_cell(rng, d_in, d_hidden) -> GruCellParams:
    """Uniform(-1/sqrt(d_hidden), +1/sqrt(d_hidden)) weights, zero biases."""
    bound = 1.0 / np.sqrt(d_hidden)
    kw = {}
    for name in _MATRIX_FIELDS:
        cols = d_in if name.startswith("w_i") else d_hidden
        kw[name] = rng.uniform(-bound, bound, size=(d_hidden, cols))
    for name in _BIAS_FIELDS:
        kw[name] = np.zeros(d_hidden)
    return GruCellParams(**kw)


def init_gru(rng, d_in=6, d_hidden=6, n_layers=3) -> GruParams:
    layers = []
    for layer in range(n_layers):
        layers.append(init_cell(rng, d_in if layer == 0 else d_hidden, d_hidden))
    return GruParams(layers=layers)


def init_aux_head(rng, d_feat=6, d_hidden=6) -> AuxHeadParams:
    bound = 1.0 / np.sqrt(d_hidden)
    return AuxHeadParams(
        cell=init_cell(rng, 1 + d_feat, d_hidden),
        w_out=rng.uniform(-bound, bound, size=d_hidden),
        b_out=0.0,
        y0=0.5,
    )


def _zero_cell_like(cell: GruCellParams) -> GruCellParams:
    return GruCellParams(**{
        f.name: np.zeros_like(getattr(cell, f.name)) for f in fields(GruCellParams)
    })


# flat packing, used by the optimizer, finite differences, and hashing -------

def _cell_arrays(cell: GruCellParams):
    return [np.asarray(getattr(cell, f.name), dtype=float)
            for f in fields(GruCellParams)]


def pack_gru(params: GruParams) -> np.ndarray:
    parts = []
    for cell in params.layers:
        parts.extend(a.ravel() for a in _cell_arrays(cell))
    return np.concatenate(parts)


def pack_input_params(gru: GruParams, head: AuxHeadParams) -> np.ndarray:
    parts = [pack_gru(gru)]
    parts.extend(a.ravel() for a in _cell_arrays(head.cell))
    parts.append(np.asarray(head.w_out, dtype=float).ravel())
    parts.append(np.array([head.b_out, head.y0], dtype=float))
    return np.concatenate(parts)


def _unpack_cell(vec, offset, template: GruCellParams):
    kw = {}
    for f in fields(GruCellParams):
        shape = np.asarray(getattr(template, f.name)).shape
        size = int(np.prod(shape)) if shape else 1
        kw[f.name] = vec[offset:offset + size].reshape(shape).copy()
        offset += size
    return GruCellParams(**kw), offset


def unpack_input_params(vec, gru_t: GruParams, head_t: AuxHeadParams):
    vec = np.asarray(vec, dtype=float)
    offset = 0
    layers = []
    for cell in gru_t.layers:
        new_cell, offset = _unpack_cell(vec, offset, cell)
        layers.append(new_cell)
    head_cell, offset = _unpack_cell(vec, offset, head_t.cell)
    h = head_t.cell.d_hidden
    w_out = vec[offset:offset + h].copy()
    offset += h
    b_out, y0 = float(vec[offset]), float(vec[offset + 1])
    offset += 2
    if offset != vec.shape[0]:
        raise ValueError("parameter vector length does not match the templates")
    return GruParams(layers=layers), AuxHeadParams(head_cell, w_out, b_out, y0)


def gru_hash(params: GruParams) -> str:
    """Content hash of the extractor weights; stamps feature files."""
    return array_sha256(pack_gru(params))


# forward -----------------------------------------------------------------


def _cell_seq_forward(cell: GruCellParams, x_seq):
    """Run one cell over (B, T, d_in) from a zero initial state.

    Input projections are precomputed for the whole sequence; only the
    hidden-state recursions run in the time loop. Returns the hidden sequence
    and the cache needed for the backward pass.
    """
    n_batch, n_steps, _ = x_seq.shape
    h_dim = cell.d_hidden
    in_r = x_seq @ cell.w_ir.T + cell.b_ir + cell.b_hr
    in_z = x_seq @ cell.w_iz.T + cell.b_iz + cell.b_hz
    in_n = x_seq @ cell.w_in.T + cell.b_in

    h = np.zeros((n_batch, h_dim))
    h_prev = np.empty((n_batch, n_steps, h_dim))
    r_seq = np.empty_like(h_prev)
    z_seq = np.empty_like(h_prev)
    n_seq = np.empty_like(h_prev)
    m_seq = np.empty_like(h_prev)
    h_seq = np.empty_like(h_prev)
    for t in range(n_steps):
        h_prev[:, t] = h
        r = sigmoid(in_r[:, t] + h @ cell.w_hr.T)
        z = sigmoid(in_z[:, t] + h @ cell.w_hz.T)
        m = h @ cell.w_hn.T + cell.b_hn
        n = np.tanh(in_n[:, t] + r * m)
        h = (1.0 - z) * n + z * h
        r_seq[:, t], z_seq[:, t], n_seq[:, t], m_seq[:, t] = r, z, n, m
        h_seq[:, t] = h
    cache = (x_seq, h_prev, r_seq, z_seq, n_seq, m_seq)
    return h_seq, cache


def _cell_seq_backward(cell: GruCellParams, cache, dh_ext):
    """Backpropagate through one cell; dh_ext is (B, T, d_hidden).

    Per step, with g the gradient arriving at h_t:
        dn = g (1 - z),  dz = g (h_prev - n),  da_n = dn (1 - n^2)
        dm = da_n r,     dr = da_n m,          da_r = dr r (1 - r)
        da_z = dz z (1 - z)
        dh_prev = g z + da_r W_hr + da_z W_hz + dm W_hn
    Weight gradients are accumulated afterwards as single contractions over
    (batch, time).
    """
    x_seq, h_prev, r_seq, z_seq, n_seq, m_seq = cache
    dar = np.empty_like(dh_ext)
    daz = np.empty_like(dh_ext)
    dan = np.empty_like(dh_ext)
    dm_seq = np.empty_like(dh_ext)

    dh = np.zeros(dh_ext.shape[::2])
    for t in range(dh_ext.shape[1] - 1, -1, -1):
        dh = dh + dh_ext[:, t]
        r, z, n, m = r_seq[:, t], z_seq[:, t], n_seq[:, t], m_seq[:, t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev[:, t] - n)
        da_n = dn * (1.0 - n * n)
        dm = da_n * r
        dr = da_n * m
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        dar[:, t], daz[:, t], dan[:, t], dm_seq[:, t] = da_r, da_z, da_n, dm
        dh = dh * z + da_r @ cell.w_hr + da_z @ cell.w_hz + dm @ cell.w_hn

    g = _zero_cell_like(cell)
    g.w_ir = np.einsum("bth,btd->hd", dar, x_seq)
    g.w_iz = np.einsum("bth,btd->hd", daz, x_seq)
    g.w_in = np.einsum("bth,btd->hd", dan, x_seq)
    g.w_hr = np.einsum("bth,btd->hd", dar, h_prev)
    g.w_hz = np.einsum("bth,btd->hd", daz, h_prev)
    g.w_hn = np.einsum("bth,btd->hd", dm_seq, h_prev)
    g.b_ir = dar.sum(axis=(0, 1))
    g.b_hr = g.b_ir.copy()
    g.b_iz = daz.sum(axis=(0, 1))
    g.b_hz = g.b_iz.copy()
    g.b_in = dan.sum(axis=(0, 1))
    g.b_hn = dm_seq.sum(axis=(0, 1))
    dx_seq = dar @ cell.w_ir + daz @ cell.w_iz + dan @ cell.w_in
    return dx_seq, g


def gru_forward(params: GruParams, inputs, return_cache=False):
    """Hidden states of the top layer for inputs of shape (T, d) or (B, T, d)."""
    inputs = np.asarray(inputs, dtype=float)
    squeeze = inputs.ndim == 2
    x = inputs[None] if squeeze else inputs
    caches = []
    for cell in params.layers:
        x, cache = _cell_seq_forward(cell, x)
        caches.append(cache)
    out = x[0] if squeeze else x
    if return_cache:
        return out, caches
    return out


def _head_forward(head: AuxHeadParams, features, targets):
    """Predictions for each step of (B, T) targets given (B, T, d) features.

    The head input at step t is [y_{t-1}, feature_t], with the learned scalar
    ``y0`` standing in for the target before the window.
    """
    y_prev = np.concatenate(
        [np.full(targets.shape[:1] + (1,), head.y0), targets[:, :-1]], axis=1
    )
    v = np.concatenate([y_prev[..., None], features], axis=-1)
    a_seq, cache = _cell_seq_forward(head.cell, v)
    preds = a_seq @ head.w_out + head.b_out
    return preds, a_seq, cache


def input_loss(gru: GruParams, head: AuxHeadParams, u_batch, y_batch) -> float:
    """Sum of squared one-step-ahead errors over the batch and all steps."""
    u_batch = np.asarray(u_batch, dtype=float)
    y_batch = np.asarray(y_batch, dtype=float)
    features = gru_forward(gru, u_batch)
    preds, _, _ = _head_forward(head, features, y_batch)
    err = preds - y_batch
    return float(np.sum(err * err))


def input_gradients(gru: GruParams, head: AuxHeadParams, u_batch, y_batch):
    """Loss and its exact gradient w.r.t. extractor and head parameters.

    Returns (loss, grad_gru: GruParams, grad_head: AuxHeadParams) with the
    gradient stored in parameter-shaped containers. Raises NumericalError if
    any gradient block comes out non-finite.
    """
    u_batch = np.asarray(u_batch, dtype=float)
    y_batch = np.asarray(y_batch, dtype=float)

    features, caches = gru_forward(gru, u_batch, return_cache=True)
    preds, a_seq, head_cache = _head_forward(head, features, y_batch)
    err = preds - y_batch
    loss = float(np.sum(err * err))

    dpred = 2.0 * err                                   # (B, T)
    da_ext = dpred[..., None] * head.w_out              # (B, T, h)
    dv, g_head_cell = _cell_seq_backward(head.cell, head_cache, da_ext)
    g_head = AuxHeadParams(
        cell=g_head_cell,
        w_out=np.einsum("bt,bth->h", dpred, a_seq),
        b_out=float(dpred.sum()),
        y0=float(dv[:, 0, 0].sum()),
    )

    dfeat = dv[..., 1:]
    g_layers = [None] * len(gru.layers)
    dh = dfeat
    for idx in range(len(gru.layers) - 1, -1, -1):
        dh, g_layers[idx] = _cell_seq_backward(gru.layers[idx], caches[idx], dh)
    g_gru = GruParams(layers=g_layers)

    flat = pack_input_params(g_gru, g_head)
    if not np.all(np.isfinite(flat)):
        raise NumericalError("non-finite gradient in the input-model backward pass")
    return loss, g_gru, g_head


# training -------------------------------------------------------------------


@dataclass(frozen=True)
class InputTrainConfig:
    d_hidden: int = 6
    n_layers: int = 3
    head_hidden: int = 6
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0


def train_input_model(train_windows, val_windows, config: InputTrainConfig):
    """Fit the extractor plus auxiliary head by Adam on squared error.

    Early stopping tracks the per-step validation mean squared error with the
    configured patience; the best parameters (not the last) are returned.
    Returns (gru, head, log_rows) where each log row is a dict with epoch,
    train and validation mean squared error, and the skipped-batch count.
    """
    from .data import stack_windows

    u_tr, y_tr = stack_windows(train_windows)
    u_va, y_va = stack_windows(val_windows)
    init_rng, shuffle_rng = spawn_rngs(config.seed, 2)

    gru = init_gru(init_rng, d_in=u_tr.shape[-1], d_hidden=config.d_hidden,
                   n_layers=config.n_layers)
    head = init_aux_head(init_rng, d_feat=config.d_hidden,
                         d_hidden=config.head_hidden)
    vec = pack_input_params(gru, head)
    state = AdamState.create(vec.shape[0])

    n_windows, n_steps = y_tr.shape
    best = (np.inf, vec.copy())
    wait = 0
    log_rows = []
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n_windows)
        total, skipped = 0.0, 0
        for lo in range(0, n_windows, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            gru, head = unpack_input_params(vec, gru, head)
            try:
                loss, g_gru, g_head = input_gradients(gru, head, u_tr[sel], y_tr[sel])
            except NumericalError:
                skipped += 1
                continue
            if not np.isfinite(loss):
                skipped += 1
                continue
            grad = pack_input_params(g_gru, g_head)
            # adam_step ascends; pass the negated gradient to minimize.
            state, vec = adam_step(state, vec, -grad, config.learning_rate)
            total += loss
        gru, head = unpack_input_params(vec, gru, head)
        train_mse = total / (n_windows * n_steps)
        val_mse = input_loss(gru, head, u_va, y_va) / y_va.size
        log_rows.append({
            "epoch": epoch,
            "train_mse": train_mse,
            "val_mse": val_mse,
            "skipped_batches": skipped,
        })
        if val_mse < best[0]:
            best = (val_mse, vec.copy())
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    gru, head = unpack_input_params(best[1], gru, head)
    return gru, head, log_rows


def extract_features(gru: GruParams, inputs) -> FeatureSequence:
    """Top-layer hidden states for a full (T, d) input series, hash-stamped."""
    feats = gru_forward(gru, np.asarray(inputs, dtype=float))
    return FeatureSequence(features=feats, model_hash=gru_hash(gru))
