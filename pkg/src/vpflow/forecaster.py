"""Two-branch LSTM forecaster: assembly, initial training, prediction.

The measurement lookback and the exogenous-feature lookback run through
separate LSTMs whose final hidden states pass a LeakyReLU, are
concatenated, and feed a ReLU+dropout dense stack with a linear 192-step
output head. Targets and inputs are z-scored; predictions are inverted
back to MW.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from .errors import ConfigError, DataError, DimensionError, AllMaskedBatch
from .grid_data import STEP, FeatureFrame, PowerSeries, as_utc
from .neuralnet import (
    AdamState,
    DenseLayerParams,
    LstmLayerParams,
    LOSSES,
    adam_init,
    adam_step,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    init_dense,
    init_lstm,
    leaky_relu,
    leaky_relu_grad,
    lstm_backward,
    lstm_forward,
    relu,
    relu_grad,
)
from .preprocess import (
    WindowSet,
    ZScoreParams,
    apply_zscore,
    batch_cycler,
    invert_zscore,
)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer sizes and regularization rates of the two-branch network."""

    lstm_units: int = 100
    dense1: int = 500
    dense2: int = 500
    output_dim: int = 192
    dropout: float = 0.5
    recurrent_dropout: float = 0.5
    feat_dim: int = 17
    lookback: int = 96
    leaky_relu_alpha: float = 0.01

    def __post_init__(self):
        for name in ("lstm_units", "dense1", "dense2", "output_dim", "feat_dim", "lookback"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("dropout", "recurrent_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0,1)")


PAPER_ARCH = ArchitectureSpec()
DESK_ARCH = ArchitectureSpec(lstm_units=32, dense1=128, dense2=128)
ARCH_PRESETS = {"paper": PAPER_ARCH, "desk": DESK_ARCH}


@dataclass(frozen=True)
class TrainingConfig:
    """Initial-training hyperparameters (defaults are the production values)."""

    epochs: int = 40
    steps_per_epoch: int = 50
    batch_size: int = 192
    learning_rate: float = 0.001
    loss: str = "mae"
    early_stopping_patience: int = 5
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs, steps_per_epoch and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")


@dataclass
class ModelParams:
    """All weights of the forecaster plus its paired input scalers."""

    arch: ArchitectureSpec
    lstm_power: LstmLayerParams
    lstm_feat: LstmLayerParams
    dense1: DenseLayerParams
    dense2: DenseLayerParams
    out: DenseLayerParams
    power_scaler: ZScoreParams
    feat_scaler: ZScoreParams

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Live views of every trainable tensor, in a fixed order."""
        return {
            "lstm_power/W": self.lstm_power.W, "lstm_power/U": self.lstm_power.U,
            "lstm_power/b": self.lstm_power.b,
            "lstm_feat/W": self.lstm_feat.W, "lstm_feat/U": self.lstm_feat.U,
            "lstm_feat/b": self.lstm_feat.b,
            "dense1/W": self.dense1.W, "dense1/b": self.dense1.b,
            "dense2/W": self.dense2.W, "dense2/b": self.dense2.b,
            "out/W": self.out.W, "out/b": self.out.b,
        }

    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            LstmLayerParams(self.lstm_power.W.copy(), self.lstm_power.U.copy(), self.lstm_power.b.copy()),
            LstmLayerParams(self.lstm_feat.W.copy(), self.lstm_feat.U.copy(), self.lstm_feat.b.copy()),
            DenseLayerParams(self.dense1.W.copy(), self.dense1.b.copy()),
            DenseLayerParams(self.dense2.W.copy(), self.dense2.b.copy()),
            DenseLayerParams(self.out.W.copy(), self.out.b.copy()),
            self.power_scaler, self.feat_scaler,
        )

    def load_values(self, other: "ModelParams") -> None:
        """Copy parameter values from ``other`` in place (shapes must match)."""
        mine, theirs = self.named_parameters(), other.named_parameters()
        for name, p in mine.items():
            if p.shape != theirs[name].shape:
                raise DimensionError(f"{name}: shape {theirs[name].shape} != {p.shape}")
            p[...] = theirs[name]


def identity_scaler(n: int) -> ZScoreParams:
    return ZScoreParams(np.zeros(n), np.ones(n))


def build_model(spec: ArchitectureSpec, seed: int,
                power_scaler: ZScoreParams | None = None,
                feat_scaler: ZScoreParams | None = None) -> ModelParams:
    """Deterministically initialize the network for a given seed."""
    ss = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(5)]
    power_scaler = power_scaler if power_scaler is not None else identity_scaler(1)
    feat_scaler = feat_scaler if feat_scaler is not None else identity_scaler(spec.feat_dim)
    if len(power_scaler.mean) != 1 or len(feat_scaler.mean) != spec.feat_dim:
        raise ConfigError("scaler dimensions do not match the architecture")
    return ModelParams(
        arch=spec,
        lstm_power=init_lstm(rngs[0], 1, spec.lstm_units),
        lstm_feat=init_lstm(rngs[1], spec.feat_dim, spec.lstm_units),
        dense1=init_dense(rngs[2], 2 * spec.lstm_units, spec.dense1),
        dense2=init_dense(rngs[3], spec.dense1, spec.dense2),
        out=init_dense(rngs[4], spec.dense2, spec.output_dim),
        power_scaler=power_scaler,
        feat_scaler=feat_scaler,
    )


# ---------------------------------------------------------------------------
# Forward / backward through the composed network
# ---------------------------------------------------------------------------

class ForwardCache:
    __slots__ = ("lstm_p", "lstm_f", "h_p", "h_f", "x_d1", "pre_d1", "mask1",
                 "x_d2", "pre_d2", "mask2", "x_out")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def model_forward(model: ModelParams, x_power: np.ndarray, x_feat: np.ndarray,
                  training: bool = False, rng: np.random.Generator | None = None):
    """Run the network on normalized windows.

    x_power: (B, lookback, 1), x_feat: (B, lookback, feat_dim). Returns
    (y, cache); cache is None outside training mode.
    """
    arch = model.arch
    if x_power.shape[1:] != (arch.lookback, 1) or x_feat.shape[1:] != (arch.lookback, arch.feat_dim):
        raise DimensionError(
            f"window shapes {x_power.shape[1:]} / {x_feat.shape[1:]} do not match "
            f"lookback {arch.lookback} and feature dim {arch.feat_dim}"
        )
    rr = arch.recurrent_dropout if training else 0.0
    if training:
        h_p, cache_p = lstm_forward(x_power, model.lstm_power, rr, True, rng, return_cache=True)
        h_f, cache_f = lstm_forward(x_feat, model.lstm_feat, rr, True, rng, return_cache=True)
    else:
        h_p = lstm_forward(x_power, model.lstm_power)
        h_f = lstm_forward(x_feat, model.lstm_feat)
        cache_p = cache_f = None

    alpha = arch.leaky_relu_alpha
    z = np.concatenate([leaky_relu(h_p, alpha), leaky_relu(h_f, alpha)], axis=1)

    pre_d1, x_d1 = dense_forward(z, model.dense1)
    a1 = relu(pre_d1)
    a1, mask1 = dropout_forward(a1, arch.dropout, training, rng)

    pre_d2, x_d2 = dense_forward(a1, model.dense2)
    a2 = relu(pre_d2)
    a2, mask2 = dropout_forward(a2, arch.dropout, training, rng)

    y, x_out = dense_forward(a2, model.out)
    if not training:
        return y, None
    cache = ForwardCache(lstm_p=cache_p, lstm_f=cache_f, h_p=h_p, h_f=h_f,
                         x_d1=x_d1, pre_d1=pre_d1, mask1=mask1,
                         x_d2=x_d2, pre_d2=pre_d2, mask2=mask2, x_out=x_out)
    return y, cache


def model_backward(model: ModelParams, dy: np.ndarray, cache: ForwardCache) -> dict:
    """Gradients of the loss w.r.t. every named parameter."""
    arch = model.arch
    dW_out, db_out, da2 = dense_backward(dy, cache.x_out, model.out)
    da2 = dropout_backward(da2, cache.mask2)
    da2 = da2 * relu_grad(cache.pre_d2)
    dW2, db2, da1 = dense_backward(da2, cache.x_d2, model.dense2)
    da1 = dropout_backward(da1, cache.mask1)
    da1 = da1 * relu_grad(cache.pre_d1)
    dW1, db1, dz = dense_backward(da1, cache.x_d1, model.dense1)

    u = arch.lstm_units
    alpha = arch.leaky_relu_alpha
    dh_p = dz[:, :u] * leaky_relu_grad(cache.h_p, alpha)
    dh_f = dz[:, u:] * leaky_relu_grad(cache.h_f, alpha)
    dWp, dUp, dbp, _ = lstm_backward(dh_p, cache.lstm_p)
    dWf, dUf, dbf, _ = lstm_backward(dh_f, cache.lstm_f)
    return {
        "lstm_power/W": dWp, "lstm_power/U": dUp, "lstm_power/b": dbp,
        "lstm_feat/W": dWf, "lstm_feat/U": dUf, "lstm_feat/b": dbf,
        "dense1/W": dW1, "dense1/b": db1,
        "dense2/W": dW2, "dense2/b": db2,
        "out/W": dW_out, "out/b": db_out,
    }


def train_step(model: ModelParams, batch, loss_name: str, state: AdamState,
               rng: np.random.Generator, clip_norm: float | None = None) -> float:
    """One optimizer step on a batch; raises AllMaskedBatch if nothing to fit."""
    y_hat, cache = model_forward(model, batch.x_power, batch.x_feat, training=True, rng=rng)
    loss, dy = LOSSES[loss_name](y_hat, batch.y, batch.y_mask)
    grads = model_backward(model, dy, cache)
    adam_step(model.named_parameters(), grads, state, clip_norm)
    return loss


# ---------------------------------------------------------------------------
# Initial training with early stopping
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def _has_usable_targets(windows: WindowSet) -> bool:
    for lo in range(0, len(windows), 2048):
        _, _, _, mask = windows.stacked(np.arange(lo, min(lo + 2048, len(windows))))
        if mask.any():
            return True
    return False


def evaluate_loss(model: ModelParams, windows: WindowSet, loss_name: str,
                  chunk: int = 512) -> float:
    """Masked loss over a window set in inference mode (fixed chunk order)."""
    total, count = 0.0, 0.0
    fn = LOSSES[loss_name]
    for lo in range(0, len(windows), chunk):
        idx = np.arange(lo, min(lo + chunk, len(windows)))
        xp, xf, y, mask = windows.stacked(idx)
        if not mask.any():
            continue
        y_hat, _ = model_forward(model, xp, xf)
        loss, _ = fn(y_hat, y, mask)
        total += loss * mask.sum()
        count += mask.sum()
    if count == 0:
        raise AllMaskedBatch("no usable targets in evaluation windows")
    return total / count


def train_initial(model: ModelParams, train_windows: WindowSet, val_windows: WindowSet,
                  config: TrainingConfig):
    """Fit the freshly built model; returns (model, history).

    Runs at most epochs x steps_per_epoch optimizer steps, monitors the
    masked validation loss once per epoch, stops early after
    ``early_stopping_patience`` epochs without improvement, and restores
    the best-validation weights.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise DataError("training and validation window sets must be nonempty")
    if not _has_usable_targets(train_windows):
        raise DataError("every training target is masked unreliable")
    if not _has_usable_targets(val_windows):
        raise DataError("every validation target is masked unreliable")

    ss = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    batches = batch_cycler(train_windows, config.batch_size, shuffle_rng)
    state = adam_init(model.named_parameters(), config.learning_rate)

    history: list[EpochRecord] = []
    best_val = np.inf
    best_params: ModelParams | None = None
    wait = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for _ in range(config.steps_per_epoch):
            batch = next(batches)
            try:
                losses.append(train_step(model, batch, config.loss, state, dropout_rng,
                                         config.clip_norm))
            except AllMaskedBatch:
                continue
        val_loss = evaluate_loss(model, val_windows, config.loss)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = model.copy()
            wait = 0
        else:
            wait += 1
            if wait > config.early_stopping_patience:
                break
    if best_params is not None:
        model.load_values(best_params)
    return model, history


def write_history_csv(path, history: list[EpochRecord]) -> None:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{h.epoch},{h.train_loss!r},{h.val_loss!r}" for h in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(model: ModelParams, x_power_window: np.ndarray, x_feat_window: np.ndarray) -> np.ndarray:
    """Forecast from raw (MW / physical-unit) lookback windows.

    Accepts a single window (lookback,) / (lookback, feat_dim) or a batch
    with a leading dimension; returns MW forecasts of length output_dim.
    """
    arch = model.arch
    xp = np.asarray(x_power_window, dtype=np.float64)
    xf = np.asarray(x_feat_window, dtype=np.float64)
    single = xp.ndim == 1
    if single:
        xp = xp[None, :]
        xf = xf[None, :, :]
    if xp.shape[1] != arch.lookback or xf.shape[1:] != (arch.lookback, arch.feat_dim):
        raise DimensionError(
            f"expected windows of {arch.lookback} steps "
            f"({arch.feat_dim} features), got {xp.shape} / {xf.shape}"
        )
    xp_n = apply_zscore(xp[:, :, None], model.power_scaler)
    xf_n = apply_zscore(xf, model.feat_scaler)
    y_n, _ = model_forward(model, xp_n, xf_n)
    y = invert_zscore(y_n[:, :, None], model.power_scaler)[:, :, 0]
    if not np.isfinite(y).all():
        raise DataError("non-finite forecast values")
    return y[0] if single else y


@dataclass
class ForecastSet:
    """Archived multi-step forecasts, one row per forecast origin."""

    model_id: str
    origins: list
    values: np.ndarray          # (n, horizon) in MW
    step: timedelta = STEP

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.origins):
            raise DimensionError("values must be (n_origins, horizon)")
        self.origins = [as_utc(t) for t in self.origins]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def target_time(self, origin_idx: int, horizon_step: int) -> datetime:
        return self.origins[origin_idx] + horizon_step * self.step


def rolling_forecast(model: ModelParams, series: PowerSeries, features: FeatureFrame,
                     origins: list[datetime], model_id: str = "lstm",
                     chunk: int = 256):
    """Issue one forecast per origin; origins lacking a full lookback are skipped.

    Returns (ForecastSet, skipped_count).
    """
    lb = model.arch.lookback
    valid, idx = [], []
    skipped = 0
    for t in origins:
        try:
            i = series.index_of(as_utc(t))
        except Exception:
            skipped += 1
            continue
        if i < lb - 1:
            skipped += 1
            continue
        valid.append(as_utc(t))
        idx.append(i)
    values = np.empty((len(valid), model.arch.output_dim))
    offsets = np.arange(-lb + 1, 1)
    for lo in range(0, len(valid), chunk):
        rows = np.asarray(idx[lo:lo + chunk])[:, None] + offsets[None, :]
        values[lo:lo + chunk] = predict(model, series.values[rows], features.data[rows])
    return ForecastSet(model_id, valid, values), skipped
