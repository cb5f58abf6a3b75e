"""CSV and manifest I/O for the pipeline.

Station files are wide CSV, one row per (timestamp, station), empty field =
missing. Floats are written with ``repr`` so a write/read cycle is exact and
two identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .panel import (
    BASE_CHANNELS,
    Reading,
    StationPanel,
    VehicleClass,
    channel_name,
)

logger = logging.getLogger(__name__)

STATION_HEADER = ["timestamp", "station_id"] + [channel_name(c) for c in BASE_CHANNELS]
VEHICLE_HEADER = ["timestamp", "camera_id"] + [v.name.lower() for v in VehicleClass]


class DataError(Exception):
    """Unrecoverable problem with an input file (CLI exit code 2)."""


@dataclass
class IngestReport:
    """Per-file record of skipped rows and warnings."""

    path: str
    n_rows: int = 0
    bad_rows: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def log(self) -> None:
        for line_no, problem in self.bad_rows:
            logger.warning("%s:%d: skipped row (%s)", self.path, line_no, problem)
        for message in self.warnings:
            logger.warning("%s: %s", self.path, message)


def _parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_station_csv(path) -> tuple[list[Reading], IngestReport]:
    """Parse a wide station CSV into raw readings.

    Empty fields are missing values; malformed rows are skipped and reported
    with their line numbers; a wrong header is fatal.
    """
    report = IngestReport(str(path))
    readings: list[Reading] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header") from None
        if header != STATION_HEADER:
            raise DataError(
                f"{path}: bad header; expected {','.join(STATION_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(STATION_HEADER):
                report.bad_rows.append((line_no, f"expected {len(STATION_HEADER)} fields"))
                continue
            try:
                ts = _parse_timestamp(row[0])
            except ValueError:
                report.bad_rows.append((line_no, f"bad timestamp {row[0]!r}"))
                continue
            station = row[1].strip()
            if not station:
                report.bad_rows.append((line_no, "empty station_id"))
                continue
            try:
                cells = [float(v) if v.strip() else None for v in row[2:]]
            except ValueError:
                report.bad_rows.append((line_no, "unparseable numeric field"))
                continue
            report.n_rows += 1
            for ch, value in zip(BASE_CHANNELS, cells):
                if value is not None:
                    readings.append((ts, station, ch, value))
    if report.n_rows == 0:
        report.warnings.append("no data rows")
    report.log()
    return readings, report


def write_station_csv(panel: StationPanel, path) -> None:
    """One row per (hour, station); exact float round-trip via repr."""
    cols = [panel.channel_index(c) for c in BASE_CHANNELS]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATION_HEADER)
        for t in range(panel.n_hours):
            stamp = panel.hour_at(t).strftime("%Y-%m-%dT%H:%M:%S+00:00")
            for s, sid in enumerate(panel.station_ids):
                row = [stamp, sid]
                for c in cols:
                    row.append(repr(panel.values[s, c, t]) if panel.mask[s, c, t] else "")
                writer.writerow(row)


@dataclass(frozen=True)
class VehicleCountRecord:
    """Counts of each vehicle class detected in one CCTV image."""

    timestamp: datetime
    camera_id: str
    counts: tuple[int, int, int, int]  # in VehicleClass order

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts):
            raise ValueError("vehicle counts must be non-negative")


def load_vehicle_csv(path) -> tuple[list[VehicleCountRecord], IngestReport]:
    report = IngestReport(str(path))
    records: list[VehicleCountRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header") from None
        if header != VEHICLE_HEADER:
            raise DataError(f"{path}: bad header; expected {','.join(VEHICLE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(VEHICLE_HEADER):
                report.bad_rows.append((line_no, f"expected {len(VEHICLE_HEADER)} fields"))
                continue
            try:
                ts = _parse_timestamp(row[0])
                counts = tuple(int(v) for v in row[2:])
                record = VehicleCountRecord(ts, row[1].strip(), counts)
            except ValueError as exc:
                report.bad_rows.append((line_no, str(exc)))
                continue
            records.append(record)
            report.n_rows += 1
    if report.n_rows == 0:
        report.warnings.append("no data rows")
    report.log()
    return records, report


def write_vehicle_csv(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VEHICLE_HEADER)
        for r in records:
            stamp = r.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S+00:00")
            writer.writerow([stamp, r.camera_id, *r.counts])


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path,
    command: str,
    config_doc: dict,
    seed: int,
    inputs: Sequence[Path] = (),
    outputs: Sequence[str] = (),
) -> None:
    """Reproducibility record: config hash, seed, and input file digests."""
    doc = {
        "command": command,
        "seed": seed,
        "config_sha256": hashlib.sha256(
            json.dumps(config_doc, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": list(outputs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
