"""Spatial gap filling: one boosted-tree imputer per (station, pollutant).

Each imputer predicts a station's pollutant from the concurrent readings of
every *other* station (all pollutant and environmental channels, missing
entries allowed). Training rows are the timestamps where the target is
observed; imputation fills only the cells that are absent, never touching a
present value.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gbdt import (
    GbdtModel,
    GbdtParams,
    fit_gbdt,
    model_from_dict,
    model_to_dict,
    predict_many,
)
from .panel import Channel, Pollutant, StationPanel, channel_from_name, channel_name

logger = logging.getLogger(__name__)

GRID_FORMAT = "gapcast-imputer-grid"
GRID_VERSION = 1

#: Pairs with fewer observed target hours than this are left unmodeled.
DEFAULT_MIN_ROWS = 100


def feature_layout(
    station_ids: tuple[str, ...], channels: tuple[Channel, ...], target_station: str
) -> list[tuple[str, Channel]]:
    """(station, channel) order of the feature vector for one target station.

    Every channel of every station except the target's own, so a model can
    never see its target column.
    """
    return [
        (sid, ch) for sid in station_ids if sid != target_station for ch in channels
    ]


def feature_matrix(panel: StationPanel, target_station: str) -> np.ndarray:
    """(n_hours, n_features) matrix of cross-station readings, NaN = missing."""
    si = panel.station_index(target_station)
    others = [s for s in range(panel.n_stations) if s != si]
    return (
        panel.values[others]
        .reshape(len(others) * panel.n_channels, panel.n_hours)
        .T.copy()
    )


@dataclass
class ImputerGrid:
    """Map (station, pollutant) -> fitted model, plus its feature layout."""

    station_ids: tuple[str, ...]
    channels: tuple[Channel, ...]
    gbdt_params: GbdtParams
    min_rows: int
    models: dict[tuple[str, Pollutant], GbdtModel] = field(default_factory=dict)

    def check_panel(self, panel: StationPanel) -> None:
        if panel.station_ids != self.station_ids or panel.channels != self.channels:
            raise ValueError("panel axes do not match the grid's feature layout")


def train_imputers(
    panel: StationPanel,
    params: Optional[GbdtParams] = None,
    min_rows: int = DEFAULT_MIN_ROWS,
) -> ImputerGrid:
    """Fit the per-(station, pollutant) imputer grid on concurrent readings.

    Pairs with fewer than ``min_rows`` observed target hours are omitted from
    the grid (and logged); their cells simply stay absent at imputation time.
    """
    if panel.n_stations < 2:
        raise ValueError("spatial imputation needs at least 2 stations")
    params = params or GbdtParams()
    grid = ImputerGrid(panel.station_ids, panel.channels, params, min_rows)
    for sid in panel.station_ids:
        features = feature_matrix(panel, sid)
        si = panel.station_index(sid)
        for c in panel.pollutant_indices():
            pollutant = panel.channels[c]
            rows = np.flatnonzero(panel.mask[si, c, :])
            if len(rows) < min_rows:
                logger.info(
                    "skipping imputer %s/%s: %d rows < min_rows=%d",
                    sid, channel_name(pollutant), len(rows), min_rows,
                )
                continue
            y = panel.values[si, c, rows]
            grid.models[(sid, pollutant)] = fit_gbdt(features[rows], y, params)
    return grid


def impute(panel: StationPanel, grid: ImputerGrid) -> tuple[StationPanel, np.ndarray]:
    """Fill absent pollutant cells with grid predictions.

    Returns the filled panel and a boolean mask of exactly the cells that
    were written. Originally present cells are never modified; cells of
    unmodeled pairs remain absent.
    """
    grid.check_panel(panel)
    values = panel.values.copy()
    mask = panel.mask.copy()
    imputed = np.zeros_like(mask)
    for (sid, pollutant), model in sorted(
        grid.models.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        si = panel.station_index(sid)
        c = panel.channel_index(pollutant)
        absent = np.flatnonzero(~panel.mask[si, c, :])
        if absent.size == 0:
            continue
        features = feature_matrix(panel, sid)
        values[si, c, absent] = predict_many(model, features[absent])
        mask[si, c, absent] = True
        imputed[si, c, absent] = True
    return panel.with_data(values, mask), imputed


def save_grid(grid: ImputerGrid, path) -> None:
    doc = {
        "format": GRID_FORMAT,
        "version": GRID_VERSION,
        "station_ids": list(grid.station_ids),
        "channels": [channel_name(ch) for ch in grid.channels],
        "min_rows": grid.min_rows,
        "gbdt_params": model_params_dict(grid.gbdt_params),
        "models": {
            f"{sid}|{channel_name(p)}": model_to_dict(m)
            for (sid, p), m in sorted(grid.models.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def model_params_dict(params: GbdtParams) -> dict:
    return {
        "n_trees": params.n_trees,
        "max_depth": params.max_depth,
        "learning_rate": params.learning_rate,
        "min_samples_leaf": params.min_samples_leaf,
        "min_gain": params.min_gain,
    }


def load_grid(path) -> ImputerGrid:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GRID_FORMAT or doc.get("version") != GRID_VERSION:
        raise ValueError(f"{path}: not a version-{GRID_VERSION} imputer grid file")
    grid = ImputerGrid(
        station_ids=tuple(doc["station_ids"]),
        channels=tuple(channel_from_name(n) for n in doc["channels"]),
        gbdt_params=GbdtParams(**doc["gbdt_params"]),
        min_rows=int(doc["min_rows"]),
    )
    for key, mdoc in doc["models"].items():
        sid, _, pname = key.rpartition("|")
        ch = channel_from_name(pname)
        assert isinstance(ch, Pollutant)
        grid.models[(sid, ch)] = model_from_dict(mdoc)
    return grid
