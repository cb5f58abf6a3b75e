"""The `gapcast` command-line pipeline driver.

Subcommands: analyze, impute, windows, train, predict, eval, synth.
Exit codes: 0 success, 1 usage error, 2 data error. Every run writes a
manifest with the config hash, seed, and input digests so outputs are
reproducible bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .evaluate import horizon_label, render_report, report_to_csv
from .gapfill import load_grid, save_grid, train_imputers
from .io import DataError, load_station_csv, write_manifest, write_station_csv, write_vehicle_csv
from .models import load_checkpoint, save_checkpoint
from .panel import availability, gap_fraction, hourly_aggregate
from .synth import generate, generate_vehicle_records, synth_config_from_dict
from .windows import FeatureSet, GapRule, build_windows, enumerate_candidates, write_window_audit


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config)
    if getattr(args, "gap_rule", None):
        cfg.gap_rule = GapRule(args.gap_rule)
    return cfg


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    readings, _ = load_station_csv(args.stations)
    if not readings:
        raise DataError(f"{args.stations}: no usable readings")
    panel = hourly_aggregate(readings)
    cameras = None
    inputs = [Path(args.stations)]
    if args.vehicles:
        from .io import load_vehicle_csv

        records, _ = load_vehicle_csv(args.vehicles)
        feats = pipeline.aggregate_vehicle_features(records, panel)
        cameras = {c: feats.image_counts[i] for i, c in enumerate(feats.camera_ids)}
        inputs.append(Path(args.vehicles))
    matrix = availability(panel, cameras)

    avail_path = out / "availability.csv"
    with open(avail_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source"] + [d.isoformat() for d in matrix.days])
        for i, source in enumerate(matrix.sources):
            writer.writerow([source] + [repr(v) for v in matrix.fractions[i]])

    lines = [f"panel: {panel.n_stations} stations x {panel.n_hours} hours from {panel.t0.isoformat()}"]
    lines.append(f"pollutant gap fraction: {gap_fraction(panel):.4f}")
    for source in matrix.sources:
        lines.append(f"{source}: availability {matrix.overall_fraction([source]):.4f}")
    stats = "\n".join(lines) + "\n"
    (out / "gap_stats.txt").write_text(stats)
    sys.stdout.write(stats)
    write_manifest(out / "analyze_manifest.json", "analyze", {"stations": str(args.stations)}, 0,
                   inputs, ["availability.csv", "gap_stats.txt"])
    return 0


def cmd_impute(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    panel, _, _, _ = pipeline.load_inputs(cfg)
    grid = train_imputers(panel, cfg.gapfill.params, cfg.gapfill.min_rows)
    from .gapfill import impute

    filled, imputed = impute(panel, grid)
    save_grid(grid, out / "imputer_grid.json")
    write_station_csv(filled, out / "imputed_stations.csv")
    n_filled = int(imputed.sum())
    sys.stdout.write(
        f"trained {len(grid.models)} imputers; filled {n_filled} cells\n"
    )
    write_manifest(out / "impute_manifest.json", "impute", cfg.doc, cfg.seed,
                   [cfg.stations_csv], ["imputer_grid.json", "imputed_stations.csv"])
    return 0


def cmd_windows(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    fs = FeatureSet(args.feature_set)
    panel, table, vehicles, camera_map = pipeline.load_inputs(cfg)
    grid = None
    if pipeline.needs_grid(cfg, [fs]):
        grid = train_imputers(panel, cfg.gapfill.params, cfg.gapfill.min_rows)
    fs_panel, imputed = pipeline.assemble_features(panel, fs, table, grid, vehicles, camera_map)
    candidates = enumerate_candidates(fs_panel, cfg.window)
    samples = build_windows(fs_panel, cfg.window, fs, imputed, cfg.gap_rule)
    audit_path = out / "windows_audit.csv"
    write_window_audit(audit_path, candidates, [s.t_end for s in samples])
    sys.stdout.write(
        f"{fs.value}: {len(samples)} kept of {len(candidates)} candidates\n"
    )
    write_manifest(out / "windows_manifest.json", "windows", cfg.doc, cfg.seed,
                   [cfg.stations_csv], ["windows_audit.csv"])
    return 0


def _single_run(cfg: pipeline.PipelineConfig, model_kind: str, trained=None):
    spec = pipeline.RunSpec(f"{cfg.feature_set.value} {model_kind}", cfg.feature_set, model_kind)
    panel, table, vehicles, camera_map = pipeline.load_inputs(cfg)
    grid = None
    if pipeline.needs_grid(cfg, [spec.feature_set]):
        grid = train_imputers(panel, cfg.gapfill.params, cfg.gapfill.min_rows)
    result = pipeline.execute_run(spec, panel, table, cfg, grid, vehicles, camera_map, trained)
    return spec, panel, result


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    spec, panel, result = _single_run(cfg, args.model)
    if result.history:
        with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_rmse"])
            for row in result.history:
                writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_rmse)])
    outputs = ["history.csv"] if result.history else []
    if result.model is not None:
        save_checkpoint(
            result.model,
            out / "checkpoint.npz",
            extra={
                "model": args.model,
                "feature_set": cfg.feature_set.value,
                "seed": cfg.train.seed,
                "norm_fit_range": [0, result.norm_fit_end],
            },
        )
        outputs.append("checkpoint.npz")
    usable = result.target_mask & result.predictions.valid
    if usable.any():
        from .evaluate import rmse

        score = rmse(result.predictions.values, result.targets, usable)
        sys.stdout.write(f"{spec.label}: validation RMSE {score:.3f} (raw AQI units)\n")
    write_manifest(out / "train_manifest.json", "train", cfg.doc, cfg.train.seed,
                   [cfg.stations_csv], outputs)
    return 0


def cmd_predict(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    horizon_hours = int(args.horizon) * 24
    if horizon_hours not in cfg.window.horizons_hours:
        raise DataError(
            f"horizon +{args.horizon}d not in configured horizons {cfg.window.horizons_hours}"
        )
    trained = None
    model_kind = args.model
    if args.checkpoint:
        trained, extra = load_checkpoint(args.checkpoint)
        model_kind = extra.get("model", model_kind)
    spec, panel, result = _single_run(cfg, model_kind, trained)
    k = cfg.window.horizons_hours.index(horizon_hours)
    path = out / f"predictions_{horizon_label(horizon_hours)[1:]}.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_end", "station_id", "horizon", "y_pred", "y_true"])
        values = result.predictions.values
        valid = result.predictions.valid
        for b in range(values.shape[0]):
            for s, sid in enumerate(panel.station_ids):
                writer.writerow([
                    int(result.t_ends[b]),
                    sid,
                    horizon_label(horizon_hours),
                    repr(float(values[b, s, k])) if valid[b, s, k] else "",
                    repr(float(result.targets[b, s, k])) if result.target_mask[b, s, k] else "",
                ])
    sys.stdout.write(f"wrote {path}\n")
    write_manifest(out / "predict_manifest.json", "predict", cfg.doc, cfg.seed,
                   [cfg.stations_csv], [path.name])
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    report, _ = pipeline.run_eval(cfg)
    (out / "report.csv").write_text(report_to_csv(report))
    text = render_report(report)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    write_manifest(out / "eval_manifest.json", "eval", cfg.doc, cfg.seed,
                   [cfg.stations_csv], ["report.csv", "report.txt"])
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    try:
        doc = json.loads(Path(args.config).read_text())
        cfg = synth_config_from_dict(doc)
    except (json.JSONDecodeError, ValueError, KeyError) as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    truth, observed = generate(cfg)
    write_station_csv(observed, out / "stations.csv")
    write_station_csv(truth, out / "stations_truth.csv")
    outputs = ["stations.csv", "stations_truth.csv"]
    if cfg.n_cameras > 0:
        write_vehicle_csv(generate_vehicle_records(cfg), out / "vehicles.csv")
        outputs.append("vehicles.csv")
    sys.stdout.write(
        f"synth: {cfg.n_stations} stations x {cfg.n_hours} h, seed {cfg.seed}\n"
    )
    write_manifest(out / "synth_manifest.json", "synth", doc, cfg.seed, [], outputs)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gapcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="availability matrix and gap statistics")
    p.add_argument("--stations", required=True)
    p.add_argument("--vehicles")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("impute", help="train the spatial imputer grid and fill gaps")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("windows", help="build rolling windows and dump the audit")
    p.add_argument("--feature-set", required=True, choices=[f.value for f in FeatureSet])
    p.add_argument("--config", required=True)
    p.add_argument("--gap-rule", choices=[r.value for r in GapRule])
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train", help="train one forecaster on the configured feature set")
    p.add_argument("--model", required=True, choices=list(pipeline.MODEL_KINDS))
    p.add_argument("--config", required=True)
    p.add_argument("--gap-rule", choices=[r.value for r in GapRule])
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-station predictions for one horizon")
    p.add_argument("--horizon", required=True, choices=["1", "5", "7"])
    p.add_argument("--config", required=True)
    p.add_argument("--model", default="lstm", choices=["mlp", "lstm", "persistence"])
    p.add_argument("--checkpoint")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run every configured (feature set, model) and report")
    p.add_argument("--config", required=True)
    p.add_argument("--gap-rule", choices=[r.value for r in GapRule])
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic station (and camera) CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, OSError, ValueError) as exc:
        sys.stderr.write(f"gapcast {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
