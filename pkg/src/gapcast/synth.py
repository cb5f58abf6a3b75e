"""Deterministic synthetic multi-station panels with injected outages.

Pollutant signals follow ``base + amp * sin(2*pi*t/period + phase_s) +
rho * shared_p(t) + noise`` where ``shared_p`` is an AR(1) component common
to all stations, so cross-station imputation has real signal to recover and
forecasting skill decays with horizon.

All randomness comes from SplitMix64, a counter-based 64-bit generator with
pinned constants (see :class:`SplitMix64`), so any implementation of the
same procedure reproduces these panels bit for bit. Uniform doubles take the
top 53 bits; normals use the Box-Muller cosine branch with two uniforms per
draw, ``sqrt(-2 ln u1) * cos(2 pi u2)`` with ``u1`` shifted into (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Optional, Sequence

import numpy as np

from .panel import BASE_CHANNELS, EnvChannel, Pollutant, StationPanel, VehicleClass

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """SplitMix64: output i mixes state ``seed + (i+1) * 0x9E3779B97F4A7C15``.

    Mix function: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31`` in 64-bit wrapping arithmetic.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._drawn = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        self._drawn += n
        with np.errstate(over="ignore"):
            z = (self._seed + idx * _GAMMA) & _MASK64
            z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
            z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
            return z ^ (z >> np.uint64(31))

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1): top 53 bits over 2**53."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) / float(1 << 53)

    def normals(self, n: int) -> np.ndarray:
        u = self.uniforms(2 * n)
        u1 = (u[:n] * (1 << 53) + 1.0) / float(1 << 53)  # shift into (0, 1]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u[n:])


#: (base level, diurnal amplitude) per pollutant; chosen so the derived AQI
#: crosses at least two breakpoint bands of the default table.
DEFAULT_LEVELS: dict[Pollutant, tuple[float, float]] = {
    Pollutant.NO2: (30.0, 18.0),
    Pollutant.CO: (3.0, 2.0),
    Pollutant.SO2: (25.0, 15.0),
    Pollutant.O3: (40.0, 25.0),
    Pollutant.PM1_0: (15.0, 9.0),
    Pollutant.PM2_5: (20.0, 12.0),
    Pollutant.PM10: (45.0, 25.0),
}

_ENV_LEVELS = {
    EnvChannel.TEMPERATURE: (20.0, 8.0),
    EnvChannel.HUMIDITY: (70.0, -10.0),
    EnvChannel.UV: (4.0, 4.0),
    EnvChannel.RAINFALL: (1.0, 0.5),
}

# AR(1) shared component: stationary std ~= 0.8 * amp at phi = 0.95.
_SHARED_PHI = 0.95
_SHARED_SIGMA_FRACTION = 0.25
_PHASE_STEP_RAD = 0.3


@dataclass(frozen=True)
class OutageBlock:
    station_id: str
    start_hour: int
    duration_hours: int

    def __post_init__(self) -> None:
        if self.duration_hours < 1:
            raise ValueError("outage duration must be >= 1 hour")


@dataclass
class SynthConfig:
    n_stations: int = 10
    n_hours: int = 2000
    seed: int = 0
    levels: dict[Pollutant, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_LEVELS)
    )
    diurnal_period_hours: float = 24.0
    cross_station_rho: float = 0.9
    noise_std: float = 1.0
    outages: tuple[OutageBlock, ...] = ()
    random_outage_rate: float = 0.0
    t0: datetime = datetime(2022, 3, 1, tzinfo=timezone.utc)
    n_cameras: int = 0
    camera_coverage: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.cross_station_rho <= 1.0):
            raise ValueError("cross_station_rho must be in [0, 1]")
        if not (0.0 <= self.random_outage_rate < 1.0):
            raise ValueError("random_outage_rate must be in [0, 1)")
        if self.n_stations < 1 or self.n_hours < 1:
            raise ValueError("n_stations and n_hours must be >= 1")


def station_names(n: int) -> tuple[str, ...]:
    return tuple(f"s{i:02d}" for i in range(n))


def generate(cfg: SynthConfig) -> tuple[StationPanel, StationPanel]:
    """(ground truth, observed) panels; observed has the outages masked.

    Draw order, all from one SplitMix64(seed) stream: per pollutant in enum
    order, n_hours shared-AR innovations then n_stations * n_hours noise
    values; then per env channel in enum order, n_stations * n_hours noise
    values. Outage injection uses an independent stream seeded seed + 1.
    """
    rng = SplitMix64(cfg.seed)
    s, t = cfg.n_stations, cfg.n_hours
    hours = np.arange(t, dtype=float)
    phases = _PHASE_STEP_RAD * np.arange(s)
    values = np.empty((s, len(BASE_CHANNELS), t))

    for c, ch in enumerate(BASE_CHANNELS):
        if isinstance(ch, Pollutant):
            base, amp = cfg.levels[ch]
            innov = rng.normals(t)
            shared = np.empty(t)
            acc = 0.0
            sigma = _SHARED_SIGMA_FRACTION * abs(amp)
            for i in range(t):
                acc = _SHARED_PHI * acc + sigma * innov[i]
                shared[i] = acc
            noise = rng.normals(s * t).reshape(s, t) * cfg.noise_std
            diurnal = amp * np.sin(
                2.0 * np.pi * hours / cfg.diurnal_period_hours + phases[:, None]
            )
            sig = base + diurnal + cfg.cross_station_rho * shared[None, :] + noise
            values[:, c, :] = np.maximum(sig, 0.0)  # concentrations stay physical
        else:
            base, amp = _ENV_LEVELS[ch]
            noise = rng.normals(s * t).reshape(s, t) * cfg.noise_std * 0.5
            diurnal = amp * np.sin(
                2.0 * np.pi * hours / cfg.diurnal_period_hours + phases[:, None]
            )
            values[:, c, :] = base + diurnal + noise

    truth = StationPanel(
        station_names(s), BASE_CHANNELS, cfg.t0, values, np.ones(values.shape, dtype=bool)
    )
    observed = inject_outages(truth, cfg.outages, cfg.random_outage_rate, cfg.seed + 1)
    return truth, observed


def inject_outages(
    panel: StationPanel,
    blocks: Sequence[OutageBlock],
    random_rate: float = 0.0,
    seed: int = 0,
) -> StationPanel:
    """Mask listed blocks plus random whole-station blocks at ~random_rate.

    Random blocks draw (station, start, duration in 6..48 h) from a
    SplitMix64(seed) stream until the newly masked cell fraction reaches the
    requested rate; the input panel is never mutated and cells are only ever
    masked, never revealed.
    """
    mask = panel.mask.copy()
    for b in blocks:
        si = panel.station_index(b.station_id)
        if b.start_hour < 0 or b.start_hour + b.duration_hours > panel.n_hours:
            raise ValueError(f"outage block {b} outside panel span")
        mask[si, :, b.start_hour : b.start_hour + b.duration_hours] = False

    if random_rate > 0.0:
        rng = SplitMix64(seed)
        target = int(round(random_rate * mask.size))
        newly = 0  # listed blocks do not count toward the random rate
        guard = 0
        while newly < target and guard < 1_000_000:
            u = rng.uniforms(3)
            si = int(u[0] * panel.n_stations)
            start = int(u[1] * panel.n_hours)
            duration = 6 + int(u[2] * 43)
            stop = min(start + duration, panel.n_hours)
            before = int(mask[si, :, start:stop].sum())
            mask[si, :, start:stop] = False
            newly += before
            guard += 1

    values = np.where(mask, panel.values, np.nan)
    return panel.with_data(values, mask)


@dataclass(frozen=True)
class SynthVehicleRecord:
    timestamp: datetime
    camera_id: str
    counts: tuple[int, int, int, int]  # cars, motorcycles, buses, trucks


_VEHICLE_MEANS = {
    VehicleClass.CARS: 2.58,
    VehicleClass.MOTORCYCLES: 3.90,
    VehicleClass.BUSES: 0.16,
    VehicleClass.TRUCKS: 0.25,
}


def generate_vehicle_records(cfg: SynthConfig) -> list[SynthVehicleRecord]:
    """Per-minute per-image vehicle counts with partial coverage.

    One SplitMix64(seed + 2) stream; per camera, per hour, per minute: one
    uniform decides coverage, then 4 normals perturb the per-class means
    (diurnally modulated, clipped at zero, rounded to integers).
    """
    if cfg.n_cameras == 0:
        return []
    rng = SplitMix64(cfg.seed + 2)
    records = []
    means = np.array([_VEHICLE_MEANS[c] for c in VehicleClass])
    for cam in range(cfg.n_cameras):
        cam_id = f"cam{cam:02d}"
        for hour in range(cfg.n_hours):
            mod = 1.0 + 0.5 * np.sin(2.0 * np.pi * hour / cfg.diurnal_period_hours)
            present = rng.uniforms(60) < cfg.camera_coverage
            noise = rng.normals(60 * 4).reshape(60, 4)
            for minute in np.flatnonzero(present):
                raw = means * mod + 0.8 * noise[minute]
                counts = tuple(int(x) for x in np.maximum(np.round(raw), 0.0))
                records.append(
                    SynthVehicleRecord(
                        panel_minute(cfg.t0, hour, int(minute)), cam_id, counts
                    )
                )
    return records


def panel_minute(t0: datetime, hour: int, minute: int) -> datetime:
    return t0 + timedelta(hours=hour, minutes=minute)


_CONFIG_KEYS = [
    "n_stations", "n_hours", "seed", "levels", "diurnal_period_hours",
    "cross_station_rho", "noise_std", "outages", "random_outage_rate",
    "t0", "n_cameras", "camera_coverage",
]
_POLLUTANT_BY_NAME = {p.name.lower(): p for p in Pollutant}


def synth_config_from_dict(doc: dict) -> SynthConfig:
    """Strict JSON-document form of :class:`SynthConfig`."""
    unknown = set(doc) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"synth config: unknown keys {sorted(unknown)}")
    kwargs = {k: doc[k] for k in doc if k not in ("levels", "outages", "t0")}
    if "levels" in doc:
        levels = dict(DEFAULT_LEVELS)
        for name, pair in doc["levels"].items():
            if name not in _POLLUTANT_BY_NAME:
                raise ValueError(f"synth config: unknown pollutant {name!r}")
            base, amp = pair
            levels[_POLLUTANT_BY_NAME[name]] = (float(base), float(amp))
        kwargs["levels"] = levels
    if "outages" in doc:
        blocks = []
        for odoc in doc["outages"]:
            extra = set(odoc) - {"station_id", "start_hour", "duration_hours"}
            if extra:
                raise ValueError(f"synth config outage: unknown keys {sorted(extra)}")
            blocks.append(
                OutageBlock(odoc["station_id"], int(odoc["start_hour"]), int(odoc["duration_hours"]))
            )
        kwargs["outages"] = tuple(blocks)
    if "t0" in doc:
        t0 = datetime.fromisoformat(str(doc["t0"]).replace("Z", "+00:00"))
        if t0.tzinfo is None:
            t0 = t0.replace(tzinfo=timezone.utc)
        kwargs["t0"] = t0.astimezone(timezone.utc)
    return SynthConfig(**kwargs)
