"""Window encoding and the shared deterministic training loop.

Model inputs are normalized per (station, channel) with absent cells
presented as 0.0 next to a parallel 0/1 presence indicator per
station-channel, so a model can tell a true zero from a gap. Targets are
normalized AQI; predictions are denormalized only for reporting.

Training is plain mini-batch gradient descent with global-norm clipping and
early stopping on validation RMSE. With a fixed seed the shuffling stream,
and therefore the final parameters, are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import LstmModel, MlpModel, Model, clone_params, masked_mse
from .panel import AQI, NormParams
from .windows import WindowSample


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (256, 128)
    lstm_hidden: int = 128

    def __post_init__(self) -> None:
        numeric = (
            self.learning_rate, self.batch_size, self.max_epochs,
            self.patience, self.clip_norm,
        )
        if any(v <= 0 for v in numeric):
            raise ValueError("training hyperparameters must be positive")


@dataclass
class EncodedWindows:
    """Array view of a window list, ready to feed a model."""

    values: np.ndarray      # (B, S, C, W) normalized, 0.0 where absent
    indicators: np.ndarray  # (B, S, C, W) 1.0 where a value is present
    targets: np.ndarray     # (B, S, H) normalized AQI, 0.0 where absent
    target_mask: np.ndarray  # (B, S, H)
    t_end: np.ndarray       # (B,)

    @property
    def n_samples(self) -> int:
        return len(self.values)

    def subset(self, idx: np.ndarray) -> "EncodedWindows":
        return EncodedWindows(
            self.values[idx], self.indicators[idx], self.targets[idx],
            self.target_mask[idx], self.t_end[idx],
        )


def encode_windows(
    samples: Sequence[WindowSample],
    norm: NormParams,
    force_masked_stations: Sequence[int] = (),
) -> EncodedWindows:
    """Normalize and tensorize a window list.

    ``force_masked_stations`` blanks those stations' input values and
    indicators (their targets stay), which is how predictions for stations
    without recent data are driven purely by the other stations.
    """
    if not samples:
        raise ValueError("no window samples to encode")
    first = samples[0]
    if norm.channels != first.channels or norm.station_ids != first.station_ids:
        raise ValueError("normalization params do not match the samples' axes")
    aqi_c = first.channels.index(AQI)

    raw = np.stack([s.inputs for s in samples])
    present = np.stack([s.input_mask for s in samples])
    safe_std = np.where(norm.constant, 1.0, norm.std)[None, :, :, None]
    mean = norm.mean[None, :, :, None]
    values = np.where(present, (np.nan_to_num(raw) - mean) / safe_std, 0.0)
    values = np.where(norm.constant[None, :, :, None], 0.0, values)
    indicators = present.astype(float)

    t_raw = np.stack([s.targets for s in samples])
    t_mask = np.stack([s.target_mask for s in samples])
    aqi_mean = norm.mean[:, aqi_c][None, :, None]
    aqi_std = np.where(norm.constant[:, aqi_c], 1.0, norm.std[:, aqi_c])[None, :, None]
    targets = np.where(t_mask, (np.nan_to_num(t_raw) - aqi_mean) / aqi_std, 0.0)

    if force_masked_stations:
        sel = np.asarray(force_masked_stations, dtype=int)
        values[:, sel, :, :] = 0.0
        indicators[:, sel, :, :] = 0.0

    return EncodedWindows(
        values, indicators, targets, t_mask,
        np.array([s.t_end for s in samples]),
    )


def denormalize_targets(values: np.ndarray, norm: NormParams) -> np.ndarray:
    """Map normalized per-(station, horizon) AQI back to index units."""
    aqi_c = norm.channels.index(AQI)
    std = np.where(norm.constant[:, aqi_c], 0.0, norm.std[:, aqi_c])
    mean = norm.mean[:, aqi_c]
    return values * std[None, :, None] + mean[None, :, None]


def model_input(model: Model, enc: EncodedWindows) -> np.ndarray:
    b, s, c, w = enc.values.shape
    if isinstance(model, MlpModel):
        return np.concatenate(
            [enc.values.reshape(b, -1), enc.indicators.reshape(b, -1)], axis=1
        )
    stacked = np.concatenate(
        [enc.values.reshape(b, s * c, w), enc.indicators.reshape(b, s * c, w)], axis=1
    )
    return stacked.transpose(0, 2, 1)  # (B, W, 2*S*C)


def mlp_input_size(n_stations: int, n_channels: int, window_hours: int) -> int:
    return 2 * n_stations * n_channels * window_hours


def lstm_input_size(n_stations: int, n_channels: int) -> int:
    return 2 * n_stations * n_channels


def predict_batch(model: Model, enc: EncodedWindows) -> np.ndarray:
    """Normalized predictions with shape (B, S, H)."""
    b, s, _, _ = enc.values.shape
    out = model.forward(model_input(model, enc))
    return out.reshape(b, s, -1)


def _global_clip(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale


def _full_loss(model: Model, enc: EncodedWindows) -> float:
    b, s, _, _ = enc.values.shape
    preds = model.forward(model_input(model, enc)).reshape(b, s, -1)
    loss, _ = masked_mse(preds, enc.targets, enc.target_mask)
    return loss


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float


def train(
    model: Model,
    train_enc: EncodedWindows,
    val_enc: EncodedWindows,
    cfg: TrainConfig,
) -> tuple[Model, list[EpochStats]]:
    """Mini-batch SGD with clipping and early stopping on validation RMSE.

    Returns the model holding its best-on-validation parameters and the
    per-epoch loss history. Aborts with a diagnostic on divergence.
    """
    if train_enc.n_samples == 0 or val_enc.n_samples == 0:
        raise ValueError("both splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    best_params = clone_params(model.params)
    best_rmse = np.inf
    since_best = 0
    history: list[EpochStats] = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_enc.n_samples)
        for lo in range(0, len(order), cfg.batch_size):
            batch = train_enc.subset(order[lo : lo + cfg.batch_size])
            if not batch.target_mask.any():
                continue  # every target masked: nothing to learn from
            x = model_input(model, batch)
            preds, cache = model.forward_cached(x)
            b, s = batch.values.shape[:2]
            loss, d_out = masked_mse(preds.reshape(b, s, -1), batch.targets, batch.target_mask)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss={loss!r}; "
                    "reduce the learning rate"
                )
            grads = model.backward(cache, d_out.reshape(preds.shape))
            _global_clip(grads, cfg.clip_norm)
            for name, g in grads.items():
                model.params[name] -= cfg.learning_rate * g

        train_loss = _full_loss(model, train_enc)
        val_rmse = float(np.sqrt(_full_loss(model, val_enc)))
        if not np.isfinite(train_loss) or not np.isfinite(val_rmse):
            raise RuntimeError(f"training diverged at epoch {epoch}")
        history.append(EpochStats(epoch, train_loss, val_rmse))
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_params = clone_params(model.params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    model.params = best_params
    return model, history


@dataclass(frozen=True)
class Forecast:
    """Denormalized per-(station, horizon) AQI predictions for one window."""

    t_end: int
    values: np.ndarray  # (S, H)
    valid: np.ndarray   # (S, H)


def persistence(sample: WindowSample, force_masked_stations: Sequence[int] = ()) -> Forecast:
    """Repeat the last in-window AQI value at every horizon.

    Stations with no AQI value anywhere in the window (including stations
    forced silent) get a masked prediction.
    """
    aqi_c = sample.channels.index(AQI)
    n_stations = len(sample.station_ids)
    n_h = len(sample.horizons_hours)
    values = np.zeros((n_stations, n_h))
    valid = np.zeros((n_stations, n_h), dtype=bool)
    forced = set(force_masked_stations)
    for s in range(n_stations):
        if s in forced:
            continue
        present = np.flatnonzero(sample.input_mask[s, aqi_c])
        if present.size == 0:
            continue
        values[s, :] = sample.inputs[s, aqi_c, present[-1]]
        valid[s, :] = True
    return Forecast(sample.t_end, values, valid)


def persistence_batch(
    samples: Sequence[WindowSample], force_masked_stations: Sequence[int] = ()
) -> tuple[np.ndarray, np.ndarray]:
    """(B, S, H) raw-AQI persistence predictions and their validity mask."""
    forecasts = [persistence(s, force_masked_stations) for s in samples]
    return (
        np.stack([f.values for f in forecasts]),
        np.stack([f.valid for f in forecasts]),
    )
