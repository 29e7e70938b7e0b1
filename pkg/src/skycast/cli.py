"""Command-line frontend.

Every command reads one declarative YAML config, takes a handful of
overriding flags, and writes its outputs plus a run manifest into one
directory. A rerun with the same config and seed reproduces every
output byte for byte; the manifest's wall-time field is the one
exception.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import FAST_MAX_EPOCHS, ManifestWriter, load_config
from .errors import ConfigError, DataError, NumericsError
from .evaluation import evaluate_forecasts, write_report
from .experiments import (
    CellSpec,
    bundle_forecasts,
    importance_cells,
    load_dataset,
    load_model_bundle,
    noise_ablation_cells,
    reference_forecasts,
    representation_cells,
    run_cell,
    run_cells,
    sequence_length_cells,
    summarize,
)
from .synth import write_synthetic
from .timeseries import detect_gaps, format_timestamp, parse_csv
from .windows import WindowConfig, build_windows

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _data_dir() -> str:
    return os.environ.get("SKYCAST_DATA_DIR", "data")


def _resolve_out(args) -> str:
    return args.out or os.path.join("runs", args.command)


def _resolve_csv(cfg, args) -> str:
    explicit = getattr(args, "csv", None)
    return explicit or cfg.csv_path or os.path.join(_data_dir(), "synthetic.csv")


def _training_overrides(cfg, args) -> dict:
    overrides = dict(cfg.training)
    if args.fast:
        overrides["max_epochs"] = FAST_MAX_EPOCHS
    return overrides


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cell(value) -> str:
    # repr keeps every float bit; rounding would lose reruns' byte equality.
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _tsv(rows, columns) -> str:
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(_cell(row[col]) for col in columns))
    return "\n".join(lines) + "\n"


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = args.out or _data_dir()
    os.makedirs(out, exist_ok=True)
    manifest = ManifestWriter("synth", cfg.config_digest, cfg.synth.seed, out)
    data_path = os.path.join(out, "synthetic.csv")
    truth_path = os.path.join(out, "synthetic_truth.csv")
    write_synthetic(cfg.synth, data_path, truth_path)
    manifest.add_output(data_path)
    manifest.add_output(truth_path)
    manifest.write(extra={"days": cfg.synth.days})
    print(
        f"wrote {data_path} and {truth_path} "
        f"({cfg.synth.days} days at {cfg.synth.cadence_s} s cadence)"
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _resolve_out(args)
    csv = _resolve_csv(cfg, args)
    manifest = ManifestWriter("ingest", cfg.config_digest, cfg.seed, out)
    manifest.add_input(csv)

    raw = parse_csv(csv, cadence_s=cfg.cadence_s)
    gaps = detect_gaps(raw, raw.column_names)
    table, features = load_dataset(
        cfg.data_spec(csv), cfg.experiments.time_representation
    )
    windows = build_windows(
        features, table, WindowConfig(sequence_length=cfg.sequence_length)
    )
    split_counts = {}
    for step in cfg.steps:
        in_train = (windows.t0_s >= step.train_start_s) & (
            windows.t0_s < step.train_end_s
        )
        in_test = (windows.t0_s >= step.train_end_s) & (
            windows.t0_s < step.test_end_s
        )
        split_counts[step.name] = {
            "train": int(in_train.sum()),
            "test": int(in_test.sum()),
        }
    report = {
        "admissible_windows": len(windows),
        "cadence_s": cfg.cadence_s,
        "columns": raw.column_names,
        "coverage_fraction": gaps.coverage_fraction,
        "csv_path": os.path.abspath(csv),
        "end": format_timestamp(int(raw.timestamps[-1])),
        "gap_affected_columns": gaps.affected_columns,
        "gap_intervals": [
            [format_timestamp(a), format_timestamp(b)] for a, b in gaps.intervals
        ],
        "rows": len(raw.timestamps),
        "start": format_timestamp(int(raw.timestamps[0])),
        "windows_by_split": split_counts,
    }
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "ingest_report.json")
    _write_json(report_path, report)
    manifest.add_output(report_path)
    manifest.write()
    print(
        f"{report['rows']} rows, {len(gaps.intervals)} gap intervals, "
        f"{len(windows)} admissible windows"
    )
    for name, counts in split_counts.items():
        print(f"  {name}: train {counts['train']}, test {counts['test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _resolve_out(args)
    csv = _resolve_csv(cfg, args)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    spec = CellSpec(
        cell_id=(
            f"train-{step.name}-{opts.time_representation}"
            f"-{opts.target_representation}-L{cfg.sequence_length}-s{cfg.seed}"
        ),
        experiment="train",
        step=step,
        time_representation=opts.time_representation,
        target_representation=opts.target_representation,
        sequence_length=cfg.sequence_length,
        noise_scale=opts.noise_scale,
    )
    manifest = ManifestWriter("train", cfg.config_digest, cfg.seed, out)
    manifest.add_input(csv)
    result = run_cell(
        cfg.data_spec(csv), spec, cfg.network, _training_overrides(cfg, args),
        opts.val_day_stride, artifacts_dir=out,
    )
    result_path = os.path.join(out, "train_result.json")
    _write_json(result_path, result)
    for name in ("checkpoint.bin", "preprocess.json", "epochs.tsv"):
        manifest.add_output(os.path.join(out, name))
    manifest.add_output(result_path)
    manifest.write(extra={"cell_id": spec.cell_id})
    print(
        f"trained {spec.cell_id}: best epoch {result['best_epoch']}, "
        f"validation MAE {result['val_mae_wm2']:.2f} W/m2, "
        f"test MAE {result['test_overall']['mae_wm2']:.2f} W/m2, "
        f"skill {result['test_overall']['skill']:.3f}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _resolve_out(args)
    csv = _resolve_csv(cfg, args)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    manifest = ManifestWriter("evaluate", cfg.config_digest, cfg.seed, out)
    manifest.add_input(csv)
    data = cfg.data_spec(csv)
    if args.model:
        manifest.add_input(os.path.join(args.model, "checkpoint.bin"))
        manifest.add_input(os.path.join(args.model, "preprocess.json"))
        bundle = load_model_bundle(args.model)
        forecasts = bundle_forecasts(
            bundle, data, step.train_end_s, step.test_end_s
        )
        mode = "model"
    else:
        # Baseline mode: score issue-time persistence against itself.
        forecasts = reference_forecasts(
            data, cfg.sequence_length, opts.time_representation,
            step.train_end_s, step.test_end_s,
        )
        mode = "reference"
    report = evaluate_forecasts(forecasts)
    for path in write_report(report, forecasts, out).values():
        manifest.add_output(path)
    manifest.write(extra={"mode": mode, "step": step.name})
    print(
        f"{mode} evaluation on {step.name}: {report.n_forecasts} forecasts, "
        f"MAE {report.overall['mae_wm2']:.2f} W/m2, "
        f"skill {report.overall['skill']:.3f}"
    )
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _resolve_out(args)
    csv = _resolve_csv(cfg, args)
    step = cfg.step_named(args.step or cfg.experiments.step)
    manifest = ManifestWriter("forecast", cfg.config_digest, cfg.seed, out)
    manifest.add_input(csv)
    manifest.add_input(os.path.join(args.model, "checkpoint.bin"))
    manifest.add_input(os.path.join(args.model, "preprocess.json"))
    bundle = load_model_bundle(args.model)
    forecasts = bundle_forecasts(
        bundle, cfg.data_spec(csv), step.train_end_s, step.test_end_s
    )
    rows = []
    for i, t0 in enumerate(forecasts.t0_s):
        for j, horizon in enumerate(forecasts.horizons_s):
            rows.append({
                "t0": format_timestamp(int(t0)),
                "horizon_s": int(horizon),
                "ghi_true_wm2": float(forecasts.ghi_true[i, j]),
                "ghi_model_wm2": float(forecasts.ghi_model[i, j]),
                "ghi_reference_wm2": float(forecasts.ghi_reference[i, j]),
            })
    os.makedirs(out, exist_ok=True)
    table_path = os.path.join(out, "forecasts.tsv")
    _write_text(table_path, _tsv(rows, [
        "t0", "horizon_s", "ghi_true_wm2", "ghi_model_wm2",
        "ghi_reference_wm2",
    ]))
    manifest.add_output(table_path)
    manifest.write()
    print(
        f"wrote {len(forecasts.t0_s)} issue times x "
        f"{len(forecasts.horizons_s)} horizons to {table_path}"
    )
    return EXIT_OK


def _run_grid(args, command: str, cells, summarize_and_write) -> int:
    """Shared driver for the sweep commands."""
    cfg = load_config(args.config, args.seed)
    out = _resolve_out(args)
    csv = _resolve_csv(cfg, args)
    manifest = ManifestWriter(command, cfg.config_digest, cfg.seed, out)
    manifest.add_input(csv)
    results = run_cells(
        cells, cfg.data_spec(csv), out,
        workers=args.workers,
        max_cells=args.max_cells,
        network_overrides=cfg.network,
        training_overrides=_training_overrides(cfg, args),
        val_day_stride=cfg.experiments.val_day_stride,
    )
    if len(results) < len(cells):
        manifest.write(
            extra={"cells_done": len(results), "cells_total": len(cells)}
        )
        print(f"{len(results)} of {len(cells)} cells done; rerun to continue")
        return EXIT_OK
    for path in summarize_and_write(cfg, out, results):
        manifest.add_output(path)
    manifest.write(extra={"cells_done": len(cells), "cells_total": len(cells)})
    return EXIT_OK


_CELL_COLS = ["cell_id", "step", "time_representation", "target_representation",
              "sequence_length", "replicate", "noise_scale", "n_train", "n_val",
              "n_test", "best_epoch", "val_mae_wm2"]


def _long_rows(results) -> list:
    rows = []
    for r in results:
        row = {k: r[k] for k in _CELL_COLS}
        row["test_mae_wm2"] = r["test_overall"]["mae_wm2"]
        row["test_rmse_wm2"] = r["test_overall"]["rmse_wm2"]
        row["test_skill"] = r["test_overall"]["skill"]
        rows.append(row)
    return rows


_LONG_COLS = _CELL_COLS + ["test_mae_wm2", "test_rmse_wm2", "test_skill"]


def cmd_sweep_rep(args) -> int:
    cfg = load_config(args.config, args.seed)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    cells = representation_cells(
        step, opts.time_representations, opts.target_representations,
        opts.replicates, cfg.sequence_length, opts.noise_scale,
    )

    def write_tables(cfg, out, results):
        cells_path = os.path.join(out, "representation_cells.tsv")
        _write_text(cells_path, _tsv(_long_rows(results), _LONG_COLS))
        medians = summarize(
            results, ("time_representation", "target_representation"),
            "val_mae_wm2",
        )
        median_of = {
            (m["time_representation"], m["target_representation"]): m["median"]
            for m in medians
        }
        time_reps = list(opts.time_representations)
        target_reps = list(opts.target_representations)
        lines = ["\t".join(["target_representation"] + time_reps)]
        for target in target_reps:
            lines.append("\t".join(
                [target] + [repr(median_of[(t, target)]) for t in time_reps]
            ))
        grid_path = os.path.join(out, "representation_grid.tsv")
        _write_text(grid_path, "\n".join(lines) + "\n")
        print(f"median validation MAE (W/m2) by representation, {step.name}:")
        sys.stdout.write("\n".join(lines) + "\n")
        return [cells_path, grid_path]

    return _run_grid(args, "sweep-rep", cells, write_tables)


def cmd_sweep_seq(args) -> int:
    cfg = load_config(args.config, args.seed)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    cells = sequence_length_cells(
        step, opts.sequence_lengths, opts.time_representation,
        opts.target_representation, opts.replicates, opts.noise_scale,
    )

    def write_tables(cfg, out, results):
        cells_path = os.path.join(out, "sequence_cells.tsv")
        _write_text(cells_path, _tsv(_long_rows(results), _LONG_COLS))
        rows = []
        for med in summarize(results, ("sequence_length",), "val_mae_wm2"):
            length = med["sequence_length"]
            test = summarize(
                [r for r in results if r["sequence_length"] == length],
                ("sequence_length",), "test_overall.mae_wm2",
            )[0]["median"]
            rows.append({
                "sequence_length": length,
                "median_val_mae_wm2": med["median"],
                "median_test_mae_wm2": test,
                "n": med["n"],
            })
        rows.sort(key=lambda r: r["sequence_length"])
        table_path = os.path.join(out, "sequence_lengths.tsv")
        columns = ["sequence_length", "median_val_mae_wm2",
                   "median_test_mae_wm2", "n"]
        _write_text(table_path, _tsv(rows, columns))
        for row in rows:
            print(
                f"L={row['sequence_length']}: validation MAE "
                f"{row['median_val_mae_wm2']:.2f} W/m2 "
                f"(test {row['median_test_mae_wm2']:.2f})"
            )
        return [cells_path, table_path]

    return _run_grid(args, "sweep-seq", cells, write_tables)


def cmd_importance(args) -> int:
    cfg = load_config(args.config, args.seed)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    cells = importance_cells(
        step, opts.time_representation, opts.target_representation,
        cfg.sequence_length, opts.replicates, opts.permutation_repeats,
        opts.noise_scale,
    )

    def write_tables(cfg, out, results):
        features = list(results[0]["importance"].keys())
        rows = []
        for feature in features:
            deltas = [r["importance"][feature]["delta_mae_wm2"] for r in results]
            rows.append({
                "feature": feature,
                "median_delta_mae_wm2": float(np.median(deltas)),
                "min_delta_mae_wm2": float(min(deltas)),
                "max_delta_mae_wm2": float(max(deltas)),
            })
        rows.sort(key=lambda r: -r["median_delta_mae_wm2"])
        for rank, row in enumerate(rows, start=1):
            row["rank"] = rank
        table_path = os.path.join(out, "importance.tsv")
        columns = ["rank", "feature", "median_delta_mae_wm2",
                   "min_delta_mae_wm2", "max_delta_mae_wm2"]
        _write_text(table_path, _tsv(rows, columns))
        print(f"permutation importance over {len(results)} runs, top features:")
        for row in rows[:5]:
            print(
                f"  {row['rank']}. {row['feature']}: "
                f"+{row['median_delta_mae_wm2']:.2f} W/m2"
            )
        return [table_path]

    return _run_grid(args, "importance", cells, write_tables)


def cmd_ablate_noise(args) -> int:
    cfg = load_config(args.config, args.seed)
    opts = cfg.experiments
    step = cfg.step_named(args.step or opts.step)
    cells = noise_ablation_cells(
        step, opts.noise_scales, opts.feature_set_map,
        opts.time_representation, opts.target_representation,
        cfg.sequence_length, opts.replicates,
    )

    def write_tables(cfg, out, results):
        label_of = {
            None if subset is None else tuple(subset): label
            for label, subset in opts.feature_set_map.items()
        }
        rows = []
        for med in summarize(
            results, ("feature_subset", "noise_scale"), "val_mae_wm2"
        ):
            rows.append({
                "feature_set": label_of[med["feature_subset"]],
                "noise_scale": med["noise_scale"],
                "median_val_mae_wm2": med["median"],
                "n": med["n"],
            })
        rows.sort(key=lambda r: (r["feature_set"], r["noise_scale"]))
        table_path = os.path.join(out, "noise_ablation.tsv")
        columns = ["feature_set", "noise_scale", "median_val_mae_wm2", "n"]
        _write_text(table_path, _tsv(rows, columns))
        for row in rows:
            print(
                f"features={row['feature_set']} noise={row['noise_scale']:g}: "
                f"validation MAE {row['median_val_mae_wm2']:.2f} W/m2"
            )
        return [table_path]

    return _run_grid(args, "ablate-noise", cells, write_tables)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="YAML run configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--workers", type=int, default=1,
                        help="worker processes for sweep cells")
    common.add_argument("--fast", action="store_true",
                        help=f"cap training at {FAST_MAX_EPOCHS} epochs")
    common.add_argument("--out", default=None,
                        help="output directory (default: runs/<command>)")
    common.add_argument("--step", default=None,
                        help="split step name (default from config)")
    common.add_argument("--max-cells", type=int, default=None,
                        help="run at most this many new sweep cells")
    csv_flag = argparse.ArgumentParser(add_help=False)
    csv_flag.add_argument("--csv", default=None,
                          help="station CSV path (default from config)")

    parser = argparse.ArgumentParser(
        prog="skycast",
        description="Short-term irradiance forecasting runs, one config file each.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic station dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common, csv_flag],
                       help="report gaps, coverage and window counts for a CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common, csv_flag],
                       help="train one model; writes checkpoint and epoch log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, csv_flag],
                       help="score a checkpoint (or the persistence baseline)")
    p.add_argument("--model", default=None,
                   help="training output directory; omit for baseline mode")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", parents=[common, csv_flag],
                       help="emit per-window forecasts from a checkpoint")
    p.add_argument("--model", required=True,
                   help="training output directory")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("importance", parents=[common, csv_flag],
                       help="permutation feature importance over replicates")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("sweep-rep", parents=[common, csv_flag],
                       help="grid over time and target representations")
    p.set_defaults(func=cmd_sweep_rep)

    p = sub.add_parser("sweep-seq", parents=[common, csv_flag],
                       help="sweep input sequence lengths")
    p.set_defaults(func=cmd_sweep_seq)

    p = sub.add_parser("ablate-noise", parents=[common, csv_flag],
                       help="compare noise-channel scales and feature sets")
    p.set_defaults(func=cmd_ablate_noise)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
