"""From-scratch differentiable building blocks: LSTM, dense, dropout, Adam.

Everything is double precision and batched as (batch, time, features).
Only the fixed layer family needed by the forecaster is implemented; there
is no general autodiff graph. Backward passes return exact analytic
gradients and are verified against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllMaskedBatch, DimensionError, SizeError, StateError

GATE_ORDER = ("input", "forget", "candidate", "output")


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y):
    """Derivative expressed in the output y = sigmoid(x)."""
    return y * (1.0 - y)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_grad(y):
    return 1.0 - y * y


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x):
    return (np.asarray(x) > 0).astype(np.float64)


def leaky_relu(x, alpha: float = 0.01):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_grad(x, alpha: float = 0.01):
    return np.where(np.asarray(x) >= 0, 1.0, alpha)


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------

@dataclass
class LstmLayerParams:
    """Fused-gate LSTM weights; gate order is (input, forget, candidate, output).

    W: (4h, d) input weights, U: (4h, h) recurrent weights, b: (4h,) bias.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h4, d = self.W.shape
        if h4 % 4 != 0 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise DimensionError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )
        if not (np.isfinite(self.W).all() and np.isfinite(self.U).all() and np.isfinite(self.b).all()):
            raise DimensionError("non-finite LSTM parameters")

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class DenseLayerParams:
    """Fully connected layer: y = x @ W.T + b with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise DimensionError("non-finite dense parameters")


@dataclass(frozen=True)
class DropoutSpec:
    """Dropout rates for the dense stack and the LSTM recurrent path."""

    rate: float = 0.5
    recurrent_rate: float = 0.5

    def __post_init__(self):
        for r in (self.rate, self.recurrent_rate):
            if not 0.0 <= r < 1.0:
                raise DimensionError(f"dropout rate must be in [0,1), got {r}")


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))  # fix the sign ambiguity for determinism


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmLayerParams:
    """Glorot input weights, per-gate orthogonal recurrent weights, forget bias 1."""
    W = glorot_uniform(rng, (4 * hidden, input_dim), input_dim, 4 * hidden)
    U = np.vstack([orthogonal(rng, hidden) for _ in range(4)])
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return LstmLayerParams(W, U, b)


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int) -> DenseLayerParams:
    W = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
    return DenseLayerParams(W, np.zeros(out_dim))


# ---------------------------------------------------------------------------
# LSTM forward / backward
# ---------------------------------------------------------------------------

def _gates_from_preact(z: np.ndarray, c_prev: np.ndarray, hidden: int):
    """Shared cell math given the pre-activation z = Wx + U(h*mask) + b."""
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return i, f, g, o, c, tc, h


def lstm_cell_forward(x_t, h_prev, c_prev, params: LstmLayerParams, recurrent_mask=None):
    """One LSTM step. Returns (h_t, c_t, cache).

    ``recurrent_mask`` is the variational dropout mask applied to h_prev in
    the recurrent matmul; None means identity (inference).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    hid = params.hidden
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != hid or c_prev.shape[-1] != hid:
        raise DimensionError(
            f"cell shapes x{x_t.shape} h{h_prev.shape} c{c_prev.shape} vs d={params.input_dim} h={hid}"
        )
    h_tilde = h_prev if recurrent_mask is None else h_prev * recurrent_mask
    z = x_t @ params.W.T + h_tilde @ params.U.T + params.b
    i, f, g, o, c, tc, h = _gates_from_preact(z, c_prev, hid)
    cache = {"x": x_t, "h_tilde": h_tilde, "c_prev": c_prev, "i": i, "f": f, "g": g, "o": o,
             "c": c, "tc": tc, "mask": recurrent_mask}
    return h, c, cache


class LstmCache:
    """Stacked per-timestep state retained for backpropagation through time."""

    __slots__ = ("x", "gates", "c_states", "h_states", "rec_mask", "params")

    def __init__(self, x, gates, c_states, h_states, rec_mask, params):
        self.x = x
        self.gates = gates          # (T, B, 4h)
        self.c_states = c_states    # (T+1, B, h), c_states[0] = c0
        self.h_states = h_states    # (T+1, B, h), h_states[0] = h0
        self.rec_mask = rec_mask    # (B, h) or None
        self.params = params


def lstm_forward(x, params: LstmLayerParams, recurrent_rate: float = 0.0,
                 training: bool = False, rng: np.random.Generator | None = None,
                 return_cache: bool = False):
    """Run the LSTM over a batch of sequences; returns the final hidden state.

    x has shape (batch, T, input_dim). Recurrent dropout is variational:
    one inverted-dropout mask per sequence, applied to h_prev inside the
    recurrent matmul, and only in training mode.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"expected (batch, T, d) input, got shape {x.shape}")
    B, T, d = x.shape
    if T < 1:
        raise SizeError("sequence length must be >= 1")
    if d != params.input_dim:
        raise DimensionError(f"input dim {d} != parameter dim {params.input_dim}")
    hid = params.hidden

    rec_mask = None
    if training and recurrent_rate > 0.0:
        if rng is None:
            raise StateError("training-mode recurrent dropout needs an rng")
        rec_mask = (rng.random((B, hid)) >= recurrent_rate) / (1.0 - recurrent_rate)

    # One big GEMM for the input projection of every timestep.
    xproj = (x.reshape(B * T, d) @ params.W.T).reshape(B, T, 4 * hid) + params.b

    gates = np.empty((T, B, 4 * hid)) if return_cache else None
    c_states = np.empty((T + 1, B, hid)) if return_cache else None
    h_states = np.empty((T + 1, B, hid)) if return_cache else None
    h = np.zeros((B, hid))
    c = np.zeros((B, hid))
    if return_cache:
        c_states[0] = 0.0
        h_states[0] = 0.0
    Ut = params.U.T
    for t in range(T):
        h_tilde = h if rec_mask is None else h * rec_mask
        z = xproj[:, t, :] + h_tilde @ Ut
        i, f, g, o, c, tc, h = _gates_from_preact(z, c, hid)
        if return_cache:
            gates[t, :, :hid] = i
            gates[t, :, hid:2 * hid] = f
            gates[t, :, 2 * hid:3 * hid] = g
            gates[t, :, 3 * hid:] = o
            c_states[t + 1] = c
            h_states[t + 1] = h
    if return_cache:
        return h, LstmCache(x, gates, c_states, h_states, rec_mask, params)
    return h


def lstm_backward(dh_last: np.ndarray, cache: LstmCache):
    """BPTT given the gradient w.r.t. the final hidden state.

    Returns (dW, dU, db, dx) with dx of shape (batch, T, d).
    """
    if cache is None:
        raise StateError("backward requires the forward cache (training mode)")
    params = cache.params
    hid = params.hidden
    T, B = cache.gates.shape[0], cache.gates.shape[1]
    dz_all = np.empty((T, B, 4 * hid))
    dh = np.asarray(dh_last, dtype=np.float64)
    dc = np.zeros((B, hid))
    U = params.U
    for t in range(T - 1, -1, -1):
        i = cache.gates[t, :, :hid]
        f = cache.gates[t, :, hid:2 * hid]
        g = cache.gates[t, :, 2 * hid:3 * hid]
        o = cache.gates[t, :, 3 * hid:]
        c = cache.c_states[t + 1]
        c_prev = cache.c_states[t]
        tc = np.tanh(c)
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :hid] = dc * g * sigmoid_grad(i)
        dz[:, hid:2 * hid] = dc * c_prev * sigmoid_grad(f)
        dz[:, 2 * hid:3 * hid] = dc * i * tanh_grad(g)
        dz[:, 3 * hid:] = dh * tc * sigmoid_grad(o)
        dh = dz @ U
        if cache.rec_mask is not None:
            dh = dh * cache.rec_mask
        dc = dc * f

    dz2 = dz_all.reshape(T * B, 4 * hid)
    x2 = np.ascontiguousarray(cache.x.transpose(1, 0, 2)).reshape(T * B, -1)
    h_tilde = cache.h_states[:T]
    if cache.rec_mask is not None:
        h_tilde = h_tilde * cache.rec_mask
    dW = dz2.T @ x2
    dU = dz2.T @ h_tilde.reshape(T * B, hid)
    db = dz2.sum(axis=0)
    dx = (dz2 @ params.W).reshape(T, B, -1).transpose(1, 0, 2)
    return dW, dU, db, dx


# ---------------------------------------------------------------------------
# Dense and dropout
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, params: DenseLayerParams):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W.shape[1]:
        raise DimensionError(f"dense input dim {x.shape[-1]} != {params.W.shape[1]}")
    return x @ params.W.T + params.b, x


def dense_backward(dy: np.ndarray, x: np.ndarray, params: DenseLayerParams):
    dW = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ params.W
    return dW, db, dx


def dropout_forward(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout: kept units scaled by 1/(1-rate); identity at inference."""
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise DimensionError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise StateError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def masked_mae(pred, target, mask):
    """Mean absolute error over unmasked elements; returns (loss, grad)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} {target.shape} {mask.shape}")
    denom = mask.sum()
    if denom == 0:
        raise AllMaskedBatch("every target element is masked")
    diff = pred - target
    loss = float(np.abs(diff * mask).sum() / denom)
    grad = np.sign(diff) * mask / denom
    return loss, grad


def masked_mse(pred, target, mask):
    """Mean squared error over unmasked elements; returns (loss, grad)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} {target.shape} {mask.shape}")
    denom = mask.sum()
    if denom == 0:
        raise AllMaskedBatch("every target element is masked")
    diff = (pred - target) * mask
    loss = float((diff * diff).sum() / denom)
    grad = 2.0 * diff / denom
    return loss, grad


LOSSES = {"mae": masked_mae, "mse": masked_mse}


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def adam_step(params: dict, grads: dict, state: AdamState, clip_norm: float | None = None):
    """One Adam update with bias correction, applied in place.

    Zero gradients leave parameters bit-identical (the update term is
    exactly 0/(0+eps) elementwise).
    """
    if params.keys() != grads.keys():
        raise DimensionError("params and grads must have identical keys")
    if clip_norm is not None:
        grads = clip_by_global_norm(grads, clip_norm)
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / b1t
        v_hat = v / b2t
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Finite differences (verification utility)
# ---------------------------------------------------------------------------

def numerical_gradient(loss_fn, array: np.ndarray, delta: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss w.r.t. one array.

    Mutates ``array`` entries in place while probing and restores them;
    intended for toy sizes only.
    """
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + delta
        up = loss_fn()
        flat[k] = orig - delta
        down = loss_fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * delta)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())
