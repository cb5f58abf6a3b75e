"""Station panel data model: hourly aggregation, normalization, availability.

The central structure is :class:`StationPanel`, a dense
(station x channel x hour) tensor of float values with an explicit boolean
presence mask. Gaps are represented only through the mask; the time axis is
always contiguous. All operations here are pure: they return new panels and
never mutate or widen the mask of their inputs.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

HOUR = timedelta(hours=1)

# A strictly constant channel has zero variance; float roundoff in the mean
# can leave a residue of order eps*|mean|, hence a relative threshold.
_CONSTANT_STD_RTOL = 1e-12


class Pollutant(enum.Enum):
    """Measured pollutant concentrations, in pollutant-native units."""

    NO2 = 0
    CO = 1
    SO2 = 2
    O3 = 3
    PM1_0 = 4
    PM2_5 = 5
    PM10 = 6


class EnvChannel(enum.Enum):
    """Environmental (weather) measurements co-located with the stations."""

    TEMPERATURE = 0
    HUMIDITY = 1
    UV = 2
    RAINFALL = 3


class VehicleClass(enum.Enum):
    """Vehicle classes counted per CCTV image."""

    CARS = 0
    MOTORCYCLES = 1
    BUSES = 2
    TRUCKS = 3


@dataclass(frozen=True)
class AqiChannel:
    """Marker type for the derived per-station air quality index column."""

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "AQI"


AQI = AqiChannel()


@dataclass(frozen=True)
class VehicleCount:
    """Hourly mean detection count of one vehicle class at one camera."""

    camera_id: str
    vehicle_class: VehicleClass


Channel = Union[Pollutant, EnvChannel, AqiChannel, VehicleCount]

#: Channel layout produced by ingest: 7 pollutants followed by 4 env channels.
BASE_CHANNELS: tuple[Channel, ...] = tuple(Pollutant) + tuple(EnvChannel)


def channel_name(ch: Channel) -> str:
    """Stable snake_case name used in CSV columns and reports."""
    if isinstance(ch, (Pollutant, EnvChannel)):
        return ch.name.lower()
    if isinstance(ch, AqiChannel):
        return "aqi"
    if isinstance(ch, VehicleCount):
        return f"{ch.camera_id}:{ch.vehicle_class.name.lower()}"
    raise TypeError(f"not a channel: {ch!r}")


def channel_from_name(name: str) -> Channel:
    """Inverse of :func:`channel_name`."""
    for ch in BASE_CHANNELS:
        if channel_name(ch) == name:
            return ch
    if name == "aqi":
        return AQI
    if ":" in name:
        camera_id, _, cls = name.rpartition(":")
        return VehicleCount(camera_id, VehicleClass[cls.upper()])
    raise ValueError(f"unknown channel name {name!r}")


def _floor_hour(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(minute=0, second=0, microsecond=0)


@dataclass(frozen=True)
class StationPanel:
    """(station x channel x hour) value tensor with explicit missing mask.

    ``values[s, c, t]`` holds the observation for hour ``t0 + t`` and is finite
    wherever ``mask[s, c, t]`` is true; absent cells store NaN. The hour axis
    is contiguous: gaps exist only in the mask, never in the time index.
    """

    station_ids: tuple[str, ...]
    channels: tuple[Channel, ...]
    t0: datetime
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.station_ids)) != len(self.station_ids):
            raise ValueError("station_ids must be unique")
        if self.t0.tzinfo is None or self.t0.utcoffset() != timedelta(0):
            raise ValueError("t0 must be a UTC timestamp")
        if self.t0 != _floor_hour(self.t0):
            raise ValueError("t0 must be aligned to an hour boundary")
        if self.values.shape != self.mask.shape or self.values.ndim != 3:
            raise ValueError("values and mask must share a 3-d shape")
        s, c, _ = self.values.shape
        if s != len(self.station_ids) or c != len(self.channels):
            raise ValueError("tensor shape does not match station/channel lists")
        if self.mask.dtype != bool:
            raise ValueError("mask must be boolean")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("present cells must hold finite values")

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_hours(self) -> int:
        return self.values.shape[2]

    def hour_at(self, index: int) -> datetime:
        return self.t0 + index * HOUR

    def channel_index(self, ch: Channel) -> int:
        try:
            return self.channels.index(ch)
        except ValueError:
            raise KeyError(f"panel has no channel {channel_name(ch)}") from None

    def station_index(self, station_id: str) -> int:
        try:
            return self.station_ids.index(station_id)
        except ValueError:
            raise KeyError(f"panel has no station {station_id!r}") from None

    def pollutant_indices(self) -> np.ndarray:
        return np.array(
            [i for i, ch in enumerate(self.channels) if isinstance(ch, Pollutant)],
            dtype=int,
        )

    def sensor_indices(self) -> np.ndarray:
        """Indices of channels physically measured at the station."""
        return np.array(
            [
                i
                for i, ch in enumerate(self.channels)
                if isinstance(ch, (Pollutant, EnvChannel))
            ],
            dtype=int,
        )

    def with_data(self, values: np.ndarray, mask: np.ndarray) -> "StationPanel":
        """New panel over the same axes with replaced data."""
        return dataclasses.replace(self, values=values, mask=mask)


Reading = tuple[datetime, str, Channel, float]


def hourly_aggregate(readings: Sequence[Reading]) -> StationPanel:
    """Mean-aggregate raw readings into an hourly panel.

    Each cell becomes the arithmetic mean of all readings whose timestamp
    falls in [hour, hour+1); duplicate (timestamp, station, channel) readings
    are averaged, never rejected. Hours with no readings are masked absent.
    The output always carries the full :data:`BASE_CHANNELS` layout so tensor
    indexing stays stable across files.
    """
    if not readings:
        raise ValueError("no readings")

    hours = []
    for ts, station, ch, value in readings:
        if not isinstance(ch, (Pollutant, EnvChannel)):
            raise ValueError(f"cannot aggregate channel {ch!r} into a station panel")
        if not np.isfinite(value):
            raise ValueError(f"non-finite reading value {value!r} at {ts}")
        hours.append(_floor_hour(ts))

    t0 = min(hours)
    n_hours = int((max(hours) - t0) / HOUR) + 1
    station_ids = tuple(sorted({r[1] for r in readings}))
    s_index = {sid: i for i, sid in enumerate(station_ids)}
    c_index = {ch: i for i, ch in enumerate(BASE_CHANNELS)}

    shape = (len(station_ids), len(BASE_CHANNELS), n_hours)
    sums = np.zeros(shape)
    counts = np.zeros(shape, dtype=int)
    si = np.array([s_index[r[1]] for r in readings])
    ci = np.array([c_index[r[2]] for r in readings])
    ti = np.array([int((h - t0) / HOUR) for h in hours])
    vals = np.array([float(r[3]) for r in readings])
    np.add.at(sums, (si, ci, ti), vals)
    np.add.at(counts, (si, ci, ti), 1)

    mask = counts > 0
    values = np.full(shape, np.nan)
    values[mask] = sums[mask] / counts[mask]
    return StationPanel(station_ids, BASE_CHANNELS, t0, values, mask)


@dataclass(frozen=True)
class NormParams:
    """Per-(station, channel) normalization statistics.

    ``std`` is the population standard deviation (divide by n) over present
    cells of the fit range. Channels with no data or zero variance are
    flagged ``constant`` and normalize to 0.0.
    """

    station_ids: tuple[str, ...]
    channels: tuple[Channel, ...]
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray


def _check_alignment(panel: StationPanel, params: NormParams) -> None:
    if panel.station_ids != params.station_ids or panel.channels != params.channels:
        raise ValueError("normalization params do not cover this panel's axes")


def fit_norm(panel: StationPanel, hour_range: tuple[int, int]) -> NormParams:
    """Fit per-(station, channel) mean/std over present cells of hour_range.

    ``hour_range`` is half-open ``[start, stop)`` in panel hour indices.
    """
    start, stop = hour_range
    if not (0 <= start < stop <= panel.n_hours):
        raise ValueError(f"empty or out-of-range fit interval {hour_range}")

    v = panel.values[:, :, start:stop]
    m = panel.mask[:, :, start:stop]
    n = m.sum(axis=2)
    safe_n = np.maximum(n, 1)
    mean = np.where(m, v, 0.0).sum(axis=2) / safe_n
    dev = np.where(m, v - mean[:, :, None], 0.0)
    std = np.sqrt((dev**2).sum(axis=2) / safe_n)
    mean = np.where(n > 0, mean, 0.0)
    std = np.where(n > 0, std, 0.0)
    constant = (n == 0) | (std <= _CONSTANT_STD_RTOL * np.maximum(1.0, np.abs(mean)))
    std = np.where(constant, 0.0, std)
    return NormParams(panel.station_ids, panel.channels, mean, std, constant)


def apply_norm(panel: StationPanel, params: NormParams) -> StationPanel:
    """Transform present cells to (v - mean) / std; constant channels to 0."""
    _check_alignment(panel, params)
    safe_std = np.where(params.constant, 1.0, params.std)
    scaled = (panel.values - params.mean[:, :, None]) / safe_std[:, :, None]
    scaled = np.where(params.constant[:, :, None], 0.0, scaled)
    values = np.where(panel.mask, scaled, np.nan)
    return panel.with_data(values, panel.mask.copy())


def invert_norm(values: np.ndarray, params: NormParams) -> np.ndarray:
    """Inverse of :func:`apply_norm` on a (station, channel, ...) array.

    Constant channels map back to their fitted mean, which is the only value
    they ever held, so apply -> invert is the identity on present cells.
    """
    std = np.where(params.constant, 0.0, params.std)
    shape = params.mean.shape + (1,) * (values.ndim - 2)
    return values * std.reshape(shape) + params.mean.reshape(shape)


@dataclass(frozen=True)
class AvailabilityMatrix:
    """Per-source, per-calendar-day fraction of expected data present.

    Rows are data sources (stations, then cameras); columns are UTC calendar
    days. ``present`` and ``expected`` hold the raw counts so every fraction
    is exactly present/expected.
    """

    sources: tuple[str, ...]
    days: tuple[date, ...]
    present: np.ndarray
    expected: np.ndarray

    @property
    def fractions(self) -> np.ndarray:
        safe = np.maximum(self.expected, 1.0)
        return np.where(self.expected > 0, self.present / safe, 0.0)

    def overall_fraction(self, sources: Optional[Sequence[str]] = None) -> float:
        """Total present / total expected over the selected source rows."""
        if sources is None:
            rows = np.arange(len(self.sources))
        else:
            rows = np.array([self.sources.index(s) for s in sources])
        expected = self.expected[rows].sum()
        if expected == 0:
            return 0.0
        return float(self.present[rows].sum() / expected)


def availability(
    panel: StationPanel,
    cameras: Optional[Mapping[str, np.ndarray]] = None,
) -> AvailabilityMatrix:
    """Availability map over stations and (optionally) cameras.

    A station-hour counts as present when at least one sensor channel is
    present; stations expect 24 hourly cells per full day. ``cameras`` maps
    camera id to per-hour image counts aligned with the panel's hour axis;
    cameras expect 60 images per hour (1440 per full day).
    """
    t = panel.n_hours
    day_of_hour = np.array(
        [(panel.hour_at(i).date() - panel.t0.date()).days for i in range(t)]
    )
    n_days = int(day_of_hour.max()) + 1 if t else 0
    days = tuple(panel.t0.date() + timedelta(days=int(d)) for d in range(n_days))
    hours_per_day = np.bincount(day_of_hour, minlength=n_days).astype(float)

    sources = list(panel.station_ids)
    sensor = panel.sensor_indices()
    station_hour_present = panel.mask[:, sensor, :].any(axis=1)
    present_rows = [
        np.bincount(day_of_hour, weights=station_hour_present[s], minlength=n_days)
        for s in range(panel.n_stations)
    ]
    expected_rows = [hours_per_day.copy() for _ in range(panel.n_stations)]

    if cameras:
        for cam_id in sorted(cameras):
            counts = np.asarray(cameras[cam_id], dtype=float)
            if counts.shape != (t,):
                raise ValueError(f"camera {cam_id!r} counts not aligned to panel hours")
            sources.append(cam_id)
            present_rows.append(np.bincount(day_of_hour, weights=counts, minlength=n_days))
            expected_rows.append(hours_per_day * 60.0)

    return AvailabilityMatrix(
        tuple(sources), days, np.array(present_rows), np.array(expected_rows)
    )


def gap_fraction(
    panel: StationPanel,
    station_subset: Optional[Sequence[str]] = None,
    hour_range: Optional[tuple[int, int]] = None,
) -> float:
    """Fraction of absent cells among pollutant channels in the slice."""
    if station_subset is None:
        rows = np.arange(panel.n_stations)
    else:
        rows = np.array([panel.station_index(s) for s in station_subset])
    start, stop = hour_range if hour_range is not None else (0, panel.n_hours)
    if not (0 <= start <= stop <= panel.n_hours):
        raise ValueError(f"hour range {hour_range} outside panel")
    pol = panel.pollutant_indices()
    sub = panel.mask[np.ix_(rows, pol, np.arange(start, stop))]
    if sub.size == 0:
        raise ValueError("empty slice")
    return float(1.0 - sub.mean())
