"""Rolling-window sample construction with gap filtering.

A candidate window ends at hour boundary ``t_end`` and covers input hours
``[t_end - window_hours, t_end)``; the target for horizon ``h`` is the AQI
of the hour ending exactly at ``t_end + h``. Candidates slide by
``stride_hours``. A candidate is kept when its pollutant gap fraction is
small or enough stations report data; kept windows get their remaining small
gaps filled by within-window linear interpolation (edges held at the nearest
present value).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .panel import AQI, Channel, StationPanel


class FeatureSet(enum.Enum):
    FS1 = "fs1"
    FS2 = "fs2"
    FS3 = "fs3"


class GapRule(enum.Enum):
    """Combine the gap threshold and the station-count threshold with OR or AND."""

    OR = "or"
    AND = "and"


@dataclass(frozen=True)
class WindowConfig:
    window_hours: int = 48
    stride_hours: int = 1
    max_gap_fraction: float = 0.30
    min_stations_with_data: int = 4
    horizons_hours: tuple[int, ...] = (24, 120, 168)

    def __post_init__(self) -> None:
        if self.window_hours < 1 or self.stride_hours < 1:
            raise ValueError("window_hours and stride_hours must be >= 1")
        if not (0.0 <= self.max_gap_fraction <= 1.0):
            raise ValueError("max_gap_fraction must be in [0, 1]")
        if list(self.horizons_hours) != sorted(self.horizons_hours) or not self.horizons_hours:
            raise ValueError("horizons_hours must be non-empty and ascending")
        if self.horizons_hours[0] < 1:
            raise ValueError("horizons must be >= 1 hour")


@dataclass(frozen=True)
class Candidate:
    t_end: int
    gap_fraction: float
    station_count: int


@dataclass
class WindowSample:
    """One model sample: a 48-hour input block plus per-horizon AQI targets.

    ``inputs`` covers hours [t_end - W, t_end) after small-gap interpolation;
    ``input_mask`` marks cells that hold a value (observed, imputed, or
    interpolated) while ``observed_mask`` marks only the originally observed
    ones. ``targets[s, k]`` is the AQI of the hour ending at
    t_end + horizons[k].
    """

    t_end: int
    station_ids: tuple[str, ...]
    channels: tuple[Channel, ...]
    horizons_hours: tuple[int, ...]
    inputs: np.ndarray
    input_mask: np.ndarray
    observed_mask: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    fraction_imputed: float
    feature_set: Optional[FeatureSet] = None


def _check_span(panel: StationPanel, cfg: WindowConfig) -> None:
    needed = cfg.window_hours + max(cfg.horizons_hours)
    if panel.n_hours < needed:
        raise ValueError(
            f"panel spans {panel.n_hours} h but windows need >= {needed} h"
        )


def enumerate_candidates(panel: StationPanel, cfg: WindowConfig) -> list[Candidate]:
    """Filter inputs for every candidate t_end, for audit and testing.

    Gap fraction counts absent pollutant cells over the input block; station
    count is the number of stations with at least one present pollutant cell.
    """
    _check_span(panel, cfg)
    pol = panel.pollutant_indices()
    out = []
    last = panel.n_hours - max(cfg.horizons_hours)
    for t_end in range(cfg.window_hours, last + 1, cfg.stride_hours):
        block = panel.mask[:, pol, t_end - cfg.window_hours : t_end]
        gap = float(1.0 - block.mean())
        stations = int(block.any(axis=(1, 2)).sum())
        out.append(Candidate(t_end, gap, stations))
    return out


def _keep(c: Candidate, cfg: WindowConfig, rule: GapRule) -> bool:
    small_gap = c.gap_fraction <= cfg.max_gap_fraction
    enough_stations = c.station_count > cfg.min_stations_with_data
    if rule is GapRule.AND:
        return small_gap and enough_stations
    return small_gap or enough_stations


def _interpolate_window(
    values: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Linearly fill interior gaps per (station, channel); hold edges.

    Channels with no present cell in the window stay absent. Present cells
    are copied through untouched.
    """
    s, c, w = values.shape
    out = values.copy()
    filled = np.zeros_like(mask)
    hours = np.arange(w)
    for i in range(s):
        for j in range(c):
            m = mask[i, j]
            if m.all() or not m.any():
                continue
            present = np.flatnonzero(m)
            interp = np.interp(hours, present, values[i, j, present])
            gap = ~m
            out[i, j, gap] = interp[gap]
            filled[i, j, gap] = True
    return out, filled


def build_windows(
    panel: StationPanel,
    cfg: WindowConfig,
    feature_set: Optional[FeatureSet] = None,
    imputed_mask: Optional[np.ndarray] = None,
    gap_rule: GapRule = GapRule.OR,
) -> list[WindowSample]:
    """Materialize the kept window samples, ordered by t_end.

    ``imputed_mask`` (from the spatial gap-filling pass) feeds the samples'
    observed/provenance bookkeeping. Windows whose every horizon target is
    absent are dropped.
    """
    _check_span(panel, cfg)
    aqi_idx = panel.channel_index(AQI)
    if imputed_mask is None:
        imputed_mask = np.zeros_like(panel.mask)
    observed_panel_mask = panel.mask & ~imputed_mask

    samples = []
    for cand in enumerate_candidates(panel, cfg):
        if not _keep(cand, cfg, gap_rule):
            continue
        t_end = cand.t_end
        sl = slice(t_end - cfg.window_hours, t_end)
        target_hours = np.array([t_end + h - 1 for h in cfg.horizons_hours])
        target_mask = panel.mask[:, aqi_idx, target_hours]
        if not target_mask.any():
            continue
        targets = np.where(target_mask, panel.values[:, aqi_idx, target_hours], np.nan)

        values, filled = _interpolate_window(panel.values[:, :, sl], panel.mask[:, :, sl])
        input_mask = panel.mask[:, :, sl] | filled
        observed = observed_panel_mask[:, :, sl]
        not_observed_but_present = input_mask & ~observed
        samples.append(
            WindowSample(
                t_end=t_end,
                station_ids=panel.station_ids,
                channels=panel.channels,
                horizons_hours=cfg.horizons_hours,
                inputs=values,
                input_mask=input_mask,
                observed_mask=observed,
                targets=targets,
                target_mask=target_mask,
                fraction_imputed=float(not_observed_but_present.mean()),
                feature_set=feature_set,
            )
        )
    return samples


def write_window_audit(path, candidates: Sequence[Candidate], kept: Iterable[int]) -> None:
    """One CSV record per candidate: t_end, kept/dropped, filter inputs."""
    kept_set = set(kept)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_end", "kept", "gap_fraction", "station_count"])
        for c in candidates:
            writer.writerow(
                [c.t_end, str(c.t_end in kept_set).lower(), repr(c.gap_fraction), c.station_count]
            )
