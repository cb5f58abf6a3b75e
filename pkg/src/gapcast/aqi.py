"""Concentration-to-AQI conversion via piecewise-linear breakpoint bands.

Each pollutant has an ordered list of bands ``(conc_lo, conc_hi, aqi_lo,
aqi_hi)``; the sub-index interpolates linearly inside the band containing the
concentration. A station's overall AQI is the maximum sub-index over the
pollutants present at that hour (standard index practice). Tables are plain
CSV so a different national standard can be swapped in; the shipped default
is modeled on the US EPA bands with contiguous edges.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional, Union

import numpy as np

from .panel import AQI, Pollutant, StationPanel, channel_name

# Bands may leave a one-reporting-step gap between conc_hi and the next
# conc_lo (EPA-style tables step by 0.1 or 1); anything wider is a table bug.
_MAX_BAND_GAP = 1.0 + 1e-9


@dataclass(frozen=True)
class Band:
    conc_lo: float
    conc_hi: float
    aqi_lo: float
    aqi_hi: float


class BreakpointTable:
    """Validated per-pollutant breakpoint bands."""

    def __init__(self, bands: dict[Pollutant, tuple[Band, ...]]):
        for pollutant, blist in bands.items():
            if not blist:
                raise ValueError(f"{pollutant.name}: empty band list")
            for b in blist:
                if not (b.conc_lo < b.conc_hi and b.aqi_lo < b.aqi_hi):
                    raise ValueError(f"{pollutant.name}: degenerate band {b}")
            for prev, cur in zip(blist, blist[1:]):
                gap = cur.conc_lo - prev.conc_hi
                if gap < 0:
                    raise ValueError(f"{pollutant.name}: overlapping bands at {cur}")
                if gap > _MAX_BAND_GAP:
                    raise ValueError(f"{pollutant.name}: non-contiguous bands at {cur}")
        self.bands = dict(bands)

    def __contains__(self, pollutant: Pollutant) -> bool:
        return pollutant in self.bands


def subindex(
    pollutant: Pollutant, concentration: float, table: BreakpointTable
) -> float:
    """AQI sub-index of one concentration.

    Uses the last band whose conc_lo <= C, so a band boundary maps exactly to
    that band's aqi_lo. Concentrations above the top band clamp to the top
    aqi_hi; below the bottom band they clamp to the bottom aqi_lo. The result
    is continuous and non-decreasing in C.
    """
    if not np.isfinite(concentration) or concentration < 0:
        raise ValueError(f"concentration must be finite and >= 0, got {concentration}")
    if pollutant not in table:
        raise KeyError(f"no breakpoint bands for pollutant {pollutant.name}")
    bands = table.bands[pollutant]
    if concentration < bands[0].conc_lo:
        return bands[0].aqi_lo
    if concentration > bands[-1].conc_hi:
        return bands[-1].aqi_hi
    band = next(b for b in reversed(bands) if b.conc_lo <= concentration)
    c = min(concentration, band.conc_hi)
    slope = (band.aqi_hi - band.aqi_lo) / (band.conc_hi - band.conc_lo)
    return slope * (c - band.conc_lo) + band.aqi_lo


def subindex_array(
    pollutant: Pollutant, concentrations: np.ndarray, table: BreakpointTable
) -> np.ndarray:
    """Vectorized :func:`subindex` over an array of concentrations."""
    c = np.asarray(concentrations, dtype=float)
    if c.size and (not np.all(np.isfinite(c)) or c.min() < 0):
        raise ValueError("concentrations must be finite and >= 0")
    if pollutant not in table:
        raise KeyError(f"no breakpoint bands for pollutant {pollutant.name}")
    bands = table.bands[pollutant]
    lo = np.array([b.conc_lo for b in bands])
    hi = np.array([b.conc_hi for b in bands])
    alo = np.array([b.aqi_lo for b in bands])
    ahi = np.array([b.aqi_hi for b in bands])
    idx = np.clip(np.searchsorted(lo, c, side="right") - 1, 0, len(bands) - 1)
    cc = np.minimum(np.maximum(c, lo[idx]), hi[idx])
    slope = (ahi[idx] - alo[idx]) / (hi[idx] - lo[idx])
    out = slope * (cc - lo[idx]) + alo[idx]
    # Clamps must be exact, matching the scalar path bit for bit.
    return np.where(c > hi[-1], ahi[-1], out)


@dataclass(frozen=True)
class StationAqi:
    """Per-(station, hour) overall AQI with presence and provenance masks."""

    values: np.ndarray
    mask: np.ndarray
    imputed: np.ndarray


def station_aqi(
    panel: StationPanel,
    table: BreakpointTable,
    imputed_mask: Optional[np.ndarray] = None,
) -> StationAqi:
    """Overall AQI per station-hour: max over present pollutant sub-indices.

    Cells where no pollutant is present are masked absent. When
    ``imputed_mask`` marks panel cells filled by a model, the output flags
    every AQI cell to which an imputed pollutant contributed.
    """
    pol = panel.pollutant_indices()
    if pol.size == 0:
        raise ValueError("panel has no pollutant channels")
    if imputed_mask is not None and imputed_mask.shape != panel.mask.shape:
        raise ValueError("imputed_mask shape does not match panel")

    sub = np.full((panel.n_stations, pol.size, panel.n_hours), -np.inf)
    for k, c in enumerate(pol):
        pollutant = panel.channels[c]
        present = panel.mask[:, c, :]
        if not present.any():
            continue
        conc = panel.values[:, c, :][present]
        sub[:, k, :][present] = subindex_array(pollutant, conc, table)

    present_any = panel.mask[:, pol, :].any(axis=1)
    values = np.where(present_any, sub.max(axis=1), np.nan)
    if imputed_mask is None:
        imputed = np.zeros_like(present_any)
    else:
        imputed = (imputed_mask[:, pol, :] & panel.mask[:, pol, :]).any(axis=1)
    return StationAqi(values, present_any, imputed)


def append_aqi_channel(
    panel: StationPanel,
    table: BreakpointTable,
    imputed_mask: Optional[np.ndarray] = None,
) -> tuple[StationPanel, np.ndarray]:
    """Panel with a derived AQI channel appended as the last column.

    Returns the new panel and the imputed-provenance mask aligned to it
    (original channels keep their flags; the AQI column is flagged where any
    contributing pollutant was imputed).
    """
    if any(ch == AQI for ch in panel.channels):
        raise ValueError("panel already has an AQI channel")
    result = station_aqi(panel, table, imputed_mask)
    values = np.concatenate([panel.values, result.values[:, None, :]], axis=1)
    mask = np.concatenate([panel.mask, result.mask[:, None, :]], axis=1)
    out = StationPanel(panel.station_ids, panel.channels + (AQI,), panel.t0, values, mask)
    if imputed_mask is None:
        imputed_mask = np.zeros_like(panel.mask)
    full_imputed = np.concatenate([imputed_mask, result.imputed[:, None, :]], axis=1)
    return out, full_imputed


_POLLUTANT_BY_NAME = {channel_name(p): p for p in Pollutant}


def parse_breakpoint_csv(text: str) -> BreakpointTable:
    """Parse `pollutant,conc_lo,conc_hi,aqi_lo,aqi_hi` rows; `#` lines are comments."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    expected = ["pollutant", "conc_lo", "conc_hi", "aqi_lo", "aqi_hi"]
    if reader.fieldnames != expected:
        raise ValueError(f"breakpoint CSV header must be {','.join(expected)}")
    bands: dict[Pollutant, list[Band]] = {}
    for row in reader:
        name = row["pollutant"].strip().lower()
        if name not in _POLLUTANT_BY_NAME:
            raise ValueError(f"unknown pollutant {name!r} in breakpoint CSV")
        bands.setdefault(_POLLUTANT_BY_NAME[name], []).append(
            Band(
                float(row["conc_lo"]),
                float(row["conc_hi"]),
                float(row["aqi_lo"]),
                float(row["aqi_hi"]),
            )
        )
    return BreakpointTable({p: tuple(b) for p, b in bands.items()})


def load_breakpoints(path) -> BreakpointTable:
    with open(path, encoding="utf-8") as fh:
        return parse_breakpoint_csv(fh.read())


def save_breakpoints(table: BreakpointTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# AQI breakpoint bands; units are pollutant-native.\n")
        writer = csv.writer(fh)
        writer.writerow(["pollutant", "conc_lo", "conc_hi", "aqi_lo", "aqi_hi"])
        for pollutant in Pollutant:
            for b in table.bands.get(pollutant, ()):
                writer.writerow(
                    [channel_name(pollutant), repr(b.conc_lo), repr(b.conc_hi), repr(b.aqi_lo), repr(b.aqi_hi)]
                )


def default_breakpoint_table() -> BreakpointTable:
    """The shipped EPA-modeled fixture (see data/breakpoints_default.csv)."""
    text = resources.files("gapcast.data").joinpath("breakpoints_default.csv").read_text()
    return parse_breakpoint_csv(text)
