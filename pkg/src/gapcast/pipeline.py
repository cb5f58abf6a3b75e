"""End-to-end pipeline: config, feature-set assembly, and run stages.

Feature sets follow the build's three-tier scheme: FS1 is the raw hourly
panel, FS2 replaces FS1's pollutant gaps with spatial imputations, FS3 adds
per-camera vehicle-count channels on top of FS2. The derived AQI channel is
appended in every case and serves as the forecast target.

Every stage is deterministic given the config document and seed; the CLI
writes a manifest (config hash + input digests) next to each stage's
outputs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .aqi import BreakpointTable, append_aqi_channel, default_breakpoint_table, load_breakpoints
from .evaluate import (
    EvalReport,
    RunPredictions,
    StationCategory,
    build_report,
    categorize_stations,
    chrono_split,
)
from .gapfill import DEFAULT_MIN_ROWS, ImputerGrid, impute, train_imputers
from .gbdt import GbdtParams
from .io import DataError, VehicleCountRecord, load_station_csv, load_vehicle_csv
from .models import LstmModel, MlpModel, Model
from .panel import (
    AQI,
    NormParams,
    StationPanel,
    VehicleClass,
    VehicleCount,
    fit_norm,
    hourly_aggregate,
)
from .training import (
    EncodedWindows,
    TrainConfig,
    denormalize_targets,
    encode_windows,
    lstm_input_size,
    mlp_input_size,
    persistence_batch,
    predict_batch,
    train,
)
from .windows import FeatureSet, GapRule, WindowConfig, WindowSample, build_windows

logger = logging.getLogger(__name__)

MODEL_KINDS = ("persistence", "mlp", "lstm")


def _reject_unknown(doc: Mapping, allowed: Sequence[str], context: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise DataError(f"{context}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class RunSpec:
    label: str
    feature_set: FeatureSet
    model: str

    def __post_init__(self) -> None:
        if self.model not in MODEL_KINDS:
            raise DataError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")


@dataclass(frozen=True)
class GapfillConfig:
    params: GbdtParams = field(default_factory=GbdtParams)
    min_rows: int = DEFAULT_MIN_ROWS


@dataclass
class PipelineConfig:
    stations_csv: Path
    vehicles_csv: Optional[Path] = None
    breakpoints_csv: Optional[Path] = None
    camera_map_csv: Optional[Path] = None
    seed: int = 0
    split_ratio: float = 0.8
    recent_cutoff_hours: int = 168
    gap_rule: GapRule = GapRule.OR
    feature_set: FeatureSet = FeatureSet.FS1
    window: WindowConfig = field(default_factory=WindowConfig)
    gapfill: GapfillConfig = field(default_factory=GapfillConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    runs: tuple[RunSpec, ...] = ()
    doc: dict = field(default_factory=dict)  # canonical JSON for manifests


_TOP_KEYS = [
    "stations_csv", "vehicles_csv", "breakpoints_csv", "camera_map_csv",
    "seed", "split_ratio", "recent_cutoff_hours", "gap_rule", "feature_set",
    "window", "gapfill", "train", "runs",
]
_WINDOW_KEYS = [
    "window_hours", "stride_hours", "max_gap_fraction",
    "min_stations_with_data", "horizons_hours",
]
_GAPFILL_KEYS = [
    "n_trees", "max_depth", "learning_rate", "min_samples_leaf", "min_gain", "min_rows",
]
_TRAIN_KEYS = [
    "learning_rate", "batch_size", "max_epochs", "patience", "clip_norm",
    "seed", "hidden_sizes", "lstm_hidden",
]


def config_from_dict(doc: dict, base_dir: Path) -> PipelineConfig:
    """Validate a config document; unknown keys are rejected at every level."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    if "stations_csv" not in doc:
        raise DataError("config: stations_csv is required")

    def path_of(key: str) -> Optional[Path]:
        if doc.get(key) is None:
            return None
        return (base_dir / doc[key]).resolve()

    wdoc = dict(doc.get("window", {}))
    _reject_unknown(wdoc, _WINDOW_KEYS, "config.window")
    if "horizons_hours" in wdoc:
        wdoc["horizons_hours"] = tuple(wdoc["horizons_hours"])
    gdoc = dict(doc.get("gapfill", {}))
    _reject_unknown(gdoc, _GAPFILL_KEYS, "config.gapfill")
    min_rows = gdoc.pop("min_rows", DEFAULT_MIN_ROWS)
    tdoc = dict(doc.get("train", {}))
    _reject_unknown(tdoc, _TRAIN_KEYS, "config.train")
    if "hidden_sizes" in tdoc:
        tdoc["hidden_sizes"] = tuple(tdoc["hidden_sizes"])

    runs = []
    for i, rdoc in enumerate(doc.get("runs", [])):
        _reject_unknown(rdoc, ["label", "feature_set", "model"], f"config.runs[{i}]")
        fs = FeatureSet(rdoc.get("feature_set", "fs1"))
        model = rdoc.get("model", "persistence")
        runs.append(RunSpec(rdoc.get("label", f"{fs.value} {model}"), fs, model))
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        raise DataError("config.runs: labels must be unique")

    try:
        return PipelineConfig(
            stations_csv=path_of("stations_csv"),
            vehicles_csv=path_of("vehicles_csv"),
            breakpoints_csv=path_of("breakpoints_csv"),
            camera_map_csv=path_of("camera_map_csv"),
            seed=int(doc.get("seed", 0)),
            split_ratio=float(doc.get("split_ratio", 0.8)),
            recent_cutoff_hours=int(doc.get("recent_cutoff_hours", 168)),
            gap_rule=GapRule(doc.get("gap_rule", "or")),
            feature_set=FeatureSet(doc.get("feature_set", "fs1")),
            window=WindowConfig(**wdoc),
            gapfill=GapfillConfig(GbdtParams(**gdoc), min_rows),
            train=TrainConfig(**tdoc),
            runs=tuple(runs),
            doc=doc,
        )
    except (ValueError, TypeError) as exc:
        raise DataError(f"config: {exc}") from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc, path.parent)


@dataclass(frozen=True)
class VehicleFeatures:
    """Hourly per-camera mean counts per vehicle class, panel-aligned."""

    camera_ids: tuple[str, ...]
    values: np.ndarray        # (n_cameras, 4, n_hours)
    mask: np.ndarray          # (n_cameras, 4, n_hours)
    image_counts: np.ndarray  # (n_cameras, n_hours) images that hour


def aggregate_vehicle_features(
    records: Sequence[VehicleCountRecord], panel: StationPanel
) -> VehicleFeatures:
    """Hourly mean of per-image counts; hours with zero images are absent."""
    camera_ids = tuple(sorted({r.camera_id for r in records}))
    n_cam, t = len(camera_ids), panel.n_hours
    sums = np.zeros((n_cam, len(VehicleClass), t))
    images = np.zeros((n_cam, t))
    cam_index = {c: i for i, c in enumerate(camera_ids)}
    for r in records:
        hour = int((r.timestamp - panel.t0).total_seconds() // 3600)
        if not (0 <= hour < t):
            continue  # outside the panel's span
        ci = cam_index[r.camera_id]
        sums[ci, :, hour] += r.counts
        images[ci, hour] += 1
    mask = np.repeat(images[:, None, :] > 0, len(VehicleClass), axis=1)
    values = np.full(sums.shape, np.nan)
    values[mask] = (sums / np.maximum(images[:, None, :], 1))[mask]
    return VehicleFeatures(camera_ids, values, mask, images)


def load_camera_map(path) -> dict[str, set[str]]:
    """`camera_id,station_id` pairs restricting which stations see a camera."""
    mapping: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "camera_id,station_id":
            raise DataError(f"{path}: bad header; expected camera_id,station_id")
        for line in fh:
            if not line.strip():
                continue
            cam, _, station = line.strip().partition(",")
            mapping.setdefault(cam, set()).add(station)
    return mapping


def append_vehicle_channels(
    panel: StationPanel,
    imputed_mask: np.ndarray,
    vehicles: VehicleFeatures,
    camera_map: Optional[Mapping[str, set[str]]] = None,
) -> tuple[StationPanel, np.ndarray]:
    """Expose camera channels to stations (all of them unless a map restricts)."""
    s, t = panel.n_stations, panel.n_hours
    channels = list(panel.channels)
    new_vals = [panel.values]
    new_mask = [panel.mask]
    for ci, cam in enumerate(vehicles.camera_ids):
        vals = np.broadcast_to(vehicles.values[ci][None, :, :], (s, len(VehicleClass), t)).copy()
        mask = np.broadcast_to(vehicles.mask[ci][None, :, :], (s, len(VehicleClass), t)).copy()
        if camera_map is not None:
            visible = np.array(
                [sid in camera_map.get(cam, set()) for sid in panel.station_ids]
            )
            mask &= visible[:, None, None]
            vals = np.where(mask, vals, np.nan)
        channels += [VehicleCount(cam, vc) for vc in VehicleClass]
        new_vals.append(vals)
        new_mask.append(mask)
    values = np.concatenate(new_vals, axis=1)
    mask = np.concatenate(new_mask, axis=1)
    out = StationPanel(panel.station_ids, tuple(channels), panel.t0, values, mask)
    pad = np.zeros((s, len(channels) - panel.n_channels, t), dtype=bool)
    return out, np.concatenate([imputed_mask, pad], axis=1)


def assemble_features(
    panel: StationPanel,
    feature_set: FeatureSet,
    table: BreakpointTable,
    grid: Optional[ImputerGrid] = None,
    vehicles: Optional[VehicleFeatures] = None,
    camera_map: Optional[Mapping[str, set[str]]] = None,
) -> tuple[StationPanel, np.ndarray]:
    """Assemble the per-feature-set panel with its AQI channel appended.

    Returns the panel and the imputed-provenance mask aligned to it.
    """
    if feature_set is FeatureSet.FS1:
        base, imputed = panel, np.zeros_like(panel.mask)
    else:
        if grid is None:
            raise ValueError(f"{feature_set.value} requires a trained imputer grid")
        base, imputed = impute(panel, grid)
    if feature_set is FeatureSet.FS3:
        if vehicles is None:
            raise DataError("fs3 requires vehicle count data")
        base, imputed = append_vehicle_channels(base, imputed, vehicles, camera_map)
    return append_aqi_channel(base, table, imputed)


def load_inputs(
    cfg: PipelineConfig,
) -> tuple[StationPanel, BreakpointTable, Optional[VehicleFeatures], Optional[dict]]:
    readings, _ = load_station_csv(cfg.stations_csv)
    if not readings:
        raise DataError(f"{cfg.stations_csv}: no usable readings")
    panel = hourly_aggregate(readings)
    table = (
        load_breakpoints(cfg.breakpoints_csv)
        if cfg.breakpoints_csv
        else default_breakpoint_table()
    )
    vehicles = None
    if cfg.vehicles_csv is not None:
        records, _ = load_vehicle_csv(cfg.vehicles_csv)
        vehicles = aggregate_vehicle_features(records, panel)
    camera_map = load_camera_map(cfg.camera_map_csv) if cfg.camera_map_csv else None
    return panel, table, vehicles, camera_map


def needs_grid(cfg: PipelineConfig, feature_sets: Sequence[FeatureSet]) -> bool:
    return any(fs in (FeatureSet.FS2, FeatureSet.FS3) for fs in feature_sets)


def build_model(kind: str, enc: EncodedWindows, cfg: TrainConfig) -> Model:
    _, s, c, w = enc.values.shape
    n_out = s * enc.targets.shape[2]
    rng = np.random.default_rng(cfg.seed)
    if kind == "mlp":
        return MlpModel(mlp_input_size(s, c, w), cfg.hidden_sizes, n_out, rng)
    if kind == "lstm":
        return LstmModel(lstm_input_size(s, c), cfg.lstm_hidden, n_out, rng)
    raise ValueError(f"not a trainable model kind: {kind!r}")


@dataclass
class RunResult:
    spec: RunSpec
    predictions: RunPredictions
    targets: np.ndarray
    target_mask: np.ndarray
    categories: dict[str, StationCategory]
    history: list
    eval_start: int
    t_ends: np.ndarray
    model: Optional[Model] = None
    norm_fit_end: int = 0


def execute_run(
    spec: RunSpec,
    raw_panel: StationPanel,
    table: BreakpointTable,
    cfg: PipelineConfig,
    grid: Optional[ImputerGrid] = None,
    vehicles: Optional[VehicleFeatures] = None,
    camera_map: Optional[Mapping[str, set[str]]] = None,
    trained: Optional[Model] = None,
) -> RunResult:
    """Train (or reuse) one run's model and predict its validation windows.

    Stations without recent data before the evaluation period are predicted
    from a second encoding pass in which their own input channels are fully
    masked, so the model sees only the other stations.
    """
    fs_panel, imputed = assemble_features(
        raw_panel, spec.feature_set, table, grid, vehicles, camera_map
    )
    samples = build_windows(fs_panel, cfg.window, spec.feature_set, imputed, cfg.gap_rule)
    train_w, val_w = chrono_split(samples, cfg.split_ratio)
    eval_start = val_w[0].t_end
    categories = categorize_stations(raw_panel, eval_start, cfg.recent_cutoff_hours)
    silent = [
        i for i, sid in enumerate(raw_panel.station_ids)
        if categories[sid] is StationCategory.NO_RECENT_DATA
    ]

    raw_targets = np.stack([s.targets for s in val_w])
    target_mask = np.stack([s.target_mask for s in val_w])
    t_ends = np.array([s.t_end for s in val_w])
    norm_fit_end = train_w[-1].t_end

    history: list = []
    model: Optional[Model] = None
    if spec.model == "persistence":
        values, valid = persistence_batch(val_w)
        if silent:
            # Persistence is undefined for silent stations: no in-window AQI.
            valid[:, silent, :] = False
    else:
        norm = fit_norm(fs_panel, (0, norm_fit_end))
        enc_train = encode_windows(train_w, norm)
        enc_val = encode_windows(val_w, norm)
        model = trained or build_model(spec.model, enc_train, cfg.train)
        if trained is None:
            model, history = train(model, enc_train, enc_val, cfg.train)
        values = denormalize_targets(predict_batch(model, enc_val), norm)
        if silent:
            enc_masked = encode_windows(val_w, norm, force_masked_stations=silent)
            masked_preds = denormalize_targets(predict_batch(model, enc_masked), norm)
            values[:, silent, :] = masked_preds[:, silent, :]
        valid = np.ones(values.shape, dtype=bool)

    predictions = RunPredictions(spec.label, values, valid)
    return RunResult(
        spec, predictions, raw_targets, target_mask, categories, history,
        eval_start, t_ends, model, norm_fit_end,
    )


def run_eval(cfg: PipelineConfig) -> tuple[EvalReport, list[RunResult]]:
    """Execute every configured run and collate the category/horizon grid."""
    if not cfg.runs:
        raise DataError("config.runs is empty; nothing to evaluate")
    raw_panel, table, vehicles, camera_map = load_inputs(cfg)
    grid = None
    if needs_grid(cfg, [r.feature_set for r in cfg.runs]):
        grid = train_imputers(raw_panel, cfg.gapfill.params, cfg.gapfill.min_rows)

    results = []
    report: Optional[EvalReport] = None
    for spec in cfg.runs:
        result = execute_run(spec, raw_panel, table, cfg, grid, vehicles, camera_map)
        results.append(result)
        partial = build_report(
            [result.predictions],
            result.targets,
            result.target_mask,
            result.categories,
            raw_panel.station_ids,
            cfg.window.horizons_hours,
        )
        if report is None:
            report = partial
        else:
            report.labels.extend(partial.labels)
            report.cells.update(partial.cells)
    return report, results
