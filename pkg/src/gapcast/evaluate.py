"""Chronological splitting, RMSE, station categories, and report rendering.

The report grid mirrors the task's presentation: one row per run, RMSE cells
for each forecast horizon split by whether the station kept reporting data
shortly before the evaluation period ("recent data") or had gone silent
("no recent data").
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .panel import StationPanel
from .windows import WindowSample

#: A station counts as silent when it reported nothing in the week before
#: the evaluation period (matches the longest forecast horizon).
DEFAULT_RECENT_CUTOFF_HOURS = 168


class StationCategory(enum.Enum):
    RECENT_DATA = "recent_data"
    NO_RECENT_DATA = "no_recent_data"


def chrono_split(
    windows: Sequence[WindowSample], ratio: float = 0.8
) -> tuple[list[WindowSample], list[WindowSample]]:
    """First floor(ratio * n) windows for training, the rest for validation."""
    if len(windows) < 2:
        raise ValueError("need at least 2 windows to split")
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must be in (0, 1)")
    ends = [w.t_end for w in windows]
    if ends != sorted(ends):
        raise ValueError("windows must be ordered by t_end")
    n_train = int(np.floor(ratio * len(windows)))
    if n_train == 0 or n_train == len(windows):
        raise ValueError(f"ratio {ratio} leaves an empty split for n={len(windows)}")
    return list(windows[:n_train]), list(windows[n_train:])


def rmse(predictions: np.ndarray, targets: np.ndarray, selector: np.ndarray) -> float:
    """Root mean squared error over selector-true cells."""
    sel = np.asarray(selector, dtype=bool)
    if sel.shape != predictions.shape or predictions.shape != targets.shape:
        raise ValueError("predictions, targets, selector must share a shape")
    if not sel.any():
        raise ValueError("empty selection")
    diff = predictions[sel] - targets[sel]
    return float(np.sqrt(np.mean(diff**2)))


def categorize_stations(
    panel: StationPanel,
    eval_start: int,
    cutoff_hours: int = DEFAULT_RECENT_CUTOFF_HOURS,
) -> dict[str, StationCategory]:
    """NO_RECENT_DATA iff zero present pollutant cells in the cutoff window
    before ``eval_start`` (an hour index into the panel)."""
    if not (0 < eval_start <= panel.n_hours):
        raise ValueError(f"eval_start {eval_start} outside panel")
    lo = max(0, eval_start - cutoff_hours)
    pol = panel.pollutant_indices()
    recent = panel.mask[:, pol, lo:eval_start].any(axis=(1, 2))
    return {
        sid: StationCategory.RECENT_DATA if recent[i] else StationCategory.NO_RECENT_DATA
        for i, sid in enumerate(panel.station_ids)
    }


@dataclass(frozen=True)
class ReportCell:
    rmse: Optional[float]
    count: int


@dataclass
class EvalReport:
    """RMSE grid indexed by (run label, horizon, station category)."""

    horizons_hours: tuple[int, ...]
    labels: list[str]
    cells: dict[tuple[str, int, StationCategory], ReportCell]


def horizon_label(hours: int) -> str:
    return f"+{hours // 24}d" if hours % 24 == 0 else f"+{hours}h"


@dataclass(frozen=True)
class RunPredictions:
    """Predictions of one run over the validation windows, in raw AQI units."""

    label: str
    values: np.ndarray  # (B, S, H)
    valid: np.ndarray   # (B, S, H)


def build_report(
    runs: Sequence[RunPredictions],
    targets: np.ndarray,
    target_mask: np.ndarray,
    categories: Mapping[str, StationCategory],
    station_ids: Sequence[str],
    horizons_hours: Sequence[int],
) -> EvalReport:
    """Six RMSE cells per run: each horizon split by station category.

    A (horizon, category) with no contributing prediction yields an empty
    cell, never an error.
    """
    station_cat = np.array([categories[sid].value for sid in station_ids])
    report = EvalReport(tuple(horizons_hours), [], {})
    for run in runs:
        if run.values.shape != targets.shape:
            raise ValueError(f"run {run.label!r} shape mismatch with targets")
        report.labels.append(run.label)
        usable = run.valid & target_mask
        for k, horizon in enumerate(horizons_hours):
            for cat in StationCategory:
                in_cat = station_cat == cat.value
                sel = usable[:, :, k] & in_cat[None, :]
                count = int(sel.sum())
                cell = ReportCell(
                    rmse(run.values[:, :, k], targets[:, :, k], sel) if count else None,
                    count,
                )
                report.cells[(run.label, horizon, cat)] = cell
    return report


def report_to_csv(report: EvalReport) -> str:
    """CSV render: `label,horizon,category,rmse,count` (rmse blank when empty)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "horizon", "category", "rmse", "count"])
    for label in report.labels:
        for horizon in report.horizons_hours:
            for cat in StationCategory:
                cell = report.cells[(label, horizon, cat)]
                writer.writerow(
                    [
                        label,
                        horizon_label(horizon),
                        cat.value,
                        "" if cell.rmse is None else repr(cell.rmse),
                        cell.count,
                    ]
                )
    return out.getvalue()


def report_from_csv(text: str, horizons_hours: Sequence[int]) -> EvalReport:
    reader = csv.DictReader(io.StringIO(text))
    labels: list[str] = []
    cells = {}
    by_label = {horizon_label(h): h for h in horizons_hours}
    for row in reader:
        if row["label"] not in labels:
            labels.append(row["label"])
        horizon = by_label[row["horizon"]]
        cat = StationCategory(row["category"])
        value = float(row["rmse"]) if row["rmse"] else None
        cells[(row["label"], horizon, cat)] = ReportCell(value, int(row["count"]))
    return EvalReport(tuple(horizons_hours), labels, cells)


def render_report(report: EvalReport) -> str:
    """Aligned text table with one column group per station category."""
    headers = ["run"]
    for cat in StationCategory:
        short = "recent" if cat is StationCategory.RECENT_DATA else "no recent"
        headers += [f"{short} {horizon_label(h)}" for h in report.horizons_hours]
    rows = []
    for label in report.labels:
        row = [label]
        for cat in StationCategory:
            for horizon in report.horizons_hours:
                cell = report.cells[(label, horizon, cat)]
                row.append("-" if cell.rmse is None else f"{cell.rmse:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in [headers, *rows]) for i in range(len(headers))]
    lines = [
        "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
