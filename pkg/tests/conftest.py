from datetime import datetime, timezone

import numpy as np
import pytest

from gapcast.panel import BASE_CHANNELS, StationPanel

T0 = datetime(2022, 3, 1, tzinfo=timezone.utc)


def make_panel(values, mask=None, station_ids=None, t0=T0, channels=BASE_CHANNELS):
    """Panel from a raw (S, C, T) array; NaN cells become masked unless a
    mask is given explicitly."""
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.isfinite(values)
    values = np.where(mask, values, np.nan)
    if station_ids is None:
        station_ids = tuple(f"s{i:02d}" for i in range(values.shape[0]))
    return StationPanel(tuple(station_ids), channels, t0, values, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
