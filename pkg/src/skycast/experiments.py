"""Rolling experiment protocol.

Experiments are grids of cells; one cell is one training run on one
data split with one choice of time representation, target
representation, sequence length and noise setting, repeated over
replicate seeds. Every cell writes its result to its own JSON file, so
an interrupted sweep resumes by skipping finished cells, and cells are
independent enough to farm out to worker processes.

Cell seeds derive from the cell id alone, so a cell's result does not
depend on which other cells ran, in what order, or on how many
workers.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import ForecastSet, evaluate_forecasts, mae
from .features import (
    TIME_REPRESENTATIONS,
    FeatureMatrix,
    FeatureSpec,
    Normalization,
    apply_normalization,
    assemble_features,
    fit_normalization,
    load_feature_manifest,
    time_representation_specs,
)
from .nn import Network, NetworkConfig, TrainingConfig, fit
from .solar import SiteConfig, add_solar_columns
from .targets import (
    TargetRepresentation,
    decode_to_ghi,
    encode_target,
    persistence_forecast,
)
from .timeseries import parse_csv
from .windows import WindowConfig, build_windows

TARGET_REPRESENTATIONS = tuple(r.value for r in TargetRepresentation)


@dataclass(frozen=True)
class DataSpec:
    """Where the station data lives and how to featurize it."""

    csv_path: str
    site: SiteConfig
    feature_set: str = "synthetic"
    cadence_s: int = 60


@dataclass(frozen=True)
class SplitStep:
    """One step of the rolling protocol: a train range and a test range."""

    name: str
    train_start_s: int
    train_end_s: int
    test_end_s: int

    def __post_init__(self):
        if not self.train_start_s < self.train_end_s < self.test_end_s:
            raise ConfigError(
                f"split {self.name!r} must satisfy train_start < train_end < test_end"
            )


def fraction_steps(
    start_s: int,
    end_s: int,
    fractions=((0.4, 0.2), (0.6, 0.2), (0.8, 0.2)),
) -> tuple:
    """Rolling steps as fractions of [start_s, end_s).

    Each pair is (train fraction from the start, test fraction after it),
    so the defaults grow the training range while keeping test width
    fixed, the same shape as the dated protocol on station data.
    """
    span = end_s - start_s
    if span <= 0:
        raise ConfigError("end_s must be after start_s")
    steps = []
    for k, pair in enumerate(fractions):
        if len(pair) != 2:
            raise ConfigError("each fractions entry must be a (train, test) pair")
        train_frac, test_frac = pair
        if train_frac <= 0 or test_frac <= 0 or train_frac + test_frac > 1.0 + 1e-9:
            raise ConfigError("step fractions must be positive and sum to at most 1")
        steps.append(
            SplitStep(
                name=f"step{k + 1}",
                train_start_s=start_s,
                train_end_s=start_s + int(train_frac * span),
                test_end_s=start_s + int((train_frac + test_frac) * span),
            )
        )
    return tuple(steps)


@dataclass(frozen=True)
class CellSpec:
    """Everything that identifies one training run."""

    cell_id: str
    experiment: str
    step: SplitStep
    time_representation: str = "tod_toy"
    target_representation: str = "delta_csi"
    sequence_length: int = 12
    replicate: int = 0
    noise_scale: float = 1.0
    t0_reference_length: int = None
    permutation_repeats: int = 0
    feature_subset: tuple = None


def cell_seeds(cell_id: str) -> tuple:
    """(init, training, auxiliary) seeds derived from the cell id.

    Hash-derived so adding or removing neighbouring cells never shifts
    another cell's randomness.
    """
    digest = hashlib.sha256(cell_id.encode("utf-8")).digest()
    return tuple(
        int.from_bytes(digest[8 * i : 8 * (i + 1)], "little") for i in range(3)
    )


def cell_config_hash(data: DataSpec, spec: CellSpec, network_overrides,
                     training_overrides, val_day_stride: int) -> str:
    payload = {
        "data": asdict(data),
        "network": network_overrides or {},
        "spec": asdict(spec),
        "training": training_overrides or {},
        "val_day_stride": val_day_stride,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_TIME_REP_OUTPUT_NAMES = frozenset(
    out
    for rep in TIME_REPRESENTATIONS
    for spec in time_representation_specs(rep)
    for out in spec.output_names
)


def base_feature_specs(feature_set: str, column_names=()) -> list:
    """Feature specs shared by all cells, before the swept time encoding.

    ``synthetic`` is a compact set for generated data; ``station`` is the
    full catalogue minus the interchangeable time encodings.
    """
    if feature_set == "synthetic":
        specs = [
            FeatureSpec(n, "raw", source=n)
            for n in ("ghi", "dni", "dhi", "cloud_cover_pct")
        ]
        specs += [
            FeatureSpec(n, "raw", source=n)
            for n in sorted(column_names)
            if n.startswith("distractor_")
        ]
        specs += [
            FeatureSpec("csi_ghi", "csi", source="ghi",
                        params={"clear_column": "ghi_cs"}),
            FeatureSpec("cos_zenith", "cos_deg", source="zenith_deg"),
        ]
        return specs
    if feature_set == "station":
        manifest = load_feature_manifest()
        return [
            s for s in manifest.specs
            if not set(s.output_names) & _TIME_REP_OUTPUT_NAMES
        ]
    raise ConfigError(f"unknown feature set {feature_set!r}")


def load_dataset(data: DataSpec, time_representation: str):
    """Parse, add geometry, and assemble the features for one cell."""
    table = parse_csv(data.csv_path, cadence_s=data.cadence_s)
    table = add_solar_columns(table, data.site)
    specs = base_feature_specs(data.feature_set, table.column_names)
    specs = specs + time_representation_specs(time_representation)
    features = assemble_features(table, specs, site=data.site)
    return table, features


def _subset_features(features: FeatureMatrix, subset, label: str) -> FeatureMatrix:
    missing = [n for n in subset if n not in features.names]
    if missing:
        raise ConfigError(f"{label}: unknown features {missing}")
    idx = [features.names.index(n) for n in subset]
    return FeatureMatrix(
        features.timestamps, list(subset), features.values[:, idx],
        features.cadence_s,
    )


def run_cell(
    data: DataSpec,
    spec: CellSpec,
    network_overrides: dict = None,
    training_overrides: dict = None,
    val_day_stride: int = 5,
    artifacts_dir: str = None,
) -> dict:
    """Train and score one cell; returns the result record."""
    step = spec.step
    table, features = load_dataset(data, spec.time_representation)
    if spec.feature_subset is not None:
        features = _subset_features(
            features, spec.feature_subset, f"cell {spec.cell_id}"
        )

    fit_mask = (table.timestamps >= step.train_start_s) & (
        table.timestamps < step.train_end_s
    )
    norm = fit_normalization(features, fit_mask)
    features = apply_normalization(features, norm)

    allowed = None
    if (
        spec.t0_reference_length is not None
        and spec.t0_reference_length != spec.sequence_length
    ):
        ref = build_windows(
            features, table, WindowConfig(sequence_length=spec.t0_reference_length)
        )
        allowed = ref.t0_s
    windows = build_windows(
        features, table, WindowConfig(sequence_length=spec.sequence_length),
        allowed_t0_s=allowed,
    )

    in_train = (windows.t0_s >= step.train_start_s) & (windows.t0_s < step.train_end_s)
    in_test = (windows.t0_s >= step.train_end_s) & (windows.t0_s < step.test_end_s)
    train_all = windows.subset(in_train)
    test = windows.subset(in_test)
    if len(train_all) < 10 or len(test) < 1:
        raise ConfigError(
            f"cell {spec.cell_id}: split too small "
            f"(train {len(train_all)}, test {len(test)})"
        )
    # Validation takes every Nth day of the training range, so it sees
    # the same mix of sky regimes as training; a contiguous tail slice
    # would hold whatever the sky happened to do that week.
    day_index = (train_all.t0_s - step.train_start_s) // 86400
    in_val = day_index % val_day_stride == val_day_stride - 1
    if not in_val.any() or in_val.all():
        raise ConfigError(
            f"cell {spec.cell_id}: validation day stride {val_day_stride} "
            "leaves train or validation empty"
        )
    train = train_all.subset(~in_val)
    val = train_all.subset(in_val)

    rep = TargetRepresentation(spec.target_representation)
    y_train = encode_target(rep, train.y, train.decode_context())
    y_val = encode_target(rep, val.y, val.decode_context())
    # Per-horizon standardization keeps the loss scale comparable across
    # encodings; the shift and scale invert exactly before decoding.
    y_mean = y_train.mean(axis=0)
    y_scale = y_train.std(axis=0)
    y_scale[y_scale < 1e-12] = 1.0

    init_seed, train_seed, aux_seed = cell_seeds(spec.cell_id)
    # Overrides size the architecture; data and spec pin the rest.
    net_kwargs = dict(network_overrides or {})
    net_kwargs["n_features"] = features.values.shape[1]
    net_kwargs["sequence_length"] = spec.sequence_length
    net_kwargs["n_outputs"] = len(windows.horizons_s)
    net_kwargs["noise_scale"] = spec.noise_scale
    network = Network(NetworkConfig(**net_kwargs), seed=init_seed)

    train_kwargs = dict(training_overrides or {})
    train_kwargs["seed"] = train_seed
    log_path = None
    if artifacts_dir is not None:
        os.makedirs(artifacts_dir, exist_ok=True)
        log_path = os.path.join(artifacts_dir, "epochs.tsv")
    fit_result = fit(
        network,
        train.x, (y_train - y_mean) / y_scale,
        val.x, (y_val - y_mean) / y_scale,
        TrainingConfig(**train_kwargs),
        log_path=log_path,
    )
    if artifacts_dir is not None:
        network.save(os.path.join(artifacts_dir, "checkpoint.bin"))
        _write_bundle_meta(
            artifacts_dir, spec, data, norm, y_mean, y_scale,
            list(windows.horizons_s),
        )

    def decode(pred_z, ws):
        return decode_to_ghi(rep, pred_z * y_scale + y_mean, ws.decode_context())

    val_mae_wm2 = mae(val.y, decode(network.predict(val.x), val))
    test_ctx = test.decode_context()
    ghi_model = decode(network.predict(test.x), test)
    forecasts = ForecastSet(
        t0_s=test.t0_s,
        horizons_s=np.array(windows.horizons_s),
        ghi_true=test.y,
        ghi_model=ghi_model,
        ghi_reference=persistence_forecast(test_ctx),
        csi_t0=test_ctx.csi_t0,
    )
    report = evaluate_forecasts(forecasts)

    importance = None
    if spec.permutation_repeats > 0:
        importance = _permutation_importance(
            network, test, rep, y_mean, y_scale,
            report.overall["mae_wm2"], spec.permutation_repeats, aux_seed,
        )

    return {
        "cell_id": spec.cell_id,
        "experiment": spec.experiment,
        "step": step.name,
        "time_representation": spec.time_representation,
        "target_representation": rep.value,
        "sequence_length": spec.sequence_length,
        "replicate": spec.replicate,
        "noise_scale": spec.noise_scale,
        "n_features": int(features.values.shape[1]),
        "n_train": len(train),
        "n_val": len(val),
        "n_test": len(test),
        "best_epoch": fit_result.best_epoch,
        "n_epochs": fit_result.n_epochs,
        "val_mae_encoded": fit_result.best_val_mae,
        "val_mae_wm2": val_mae_wm2,
        "feature_subset": None if spec.feature_subset is None
        else list(spec.feature_subset),
        "test_overall": report.overall,
        "test_reference": report.reference_overall,
        "importance": importance,
    }


def _permutation_importance(network, test, rep, y_mean, y_scale,
                            base_mae, repeats, seed) -> dict:
    """Shuffle one feature's whole time slice across samples, re-score.

    The permutation breaks the pairing between that feature and the
    target while preserving the feature's own within-window dynamics.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ctx = test.decode_context()
    out = {}
    for f_idx, fname in enumerate(test.feature_names):
        deltas = []
        for _ in range(repeats):
            perm = rng.permutation(len(test))
            x_perm = test.x.copy()
            x_perm[:, :, f_idx] = test.x[perm, :, f_idx]
            pred = network.predict(x_perm) * y_scale + y_mean
            ghi_perm = decode_to_ghi(rep, pred, ctx)
            deltas.append(float(mae(test.y, ghi_perm) - base_mae))
        out[fname] = {
            "delta_mae_wm2": float(np.mean(deltas)),
            "per_repeat": deltas,
        }
    return out


def _write_bundle_meta(artifacts_dir, spec: CellSpec, data: DataSpec,
                       norm: Normalization, y_mean, y_scale, horizons_s) -> None:
    meta = {
        "cadence_s": data.cadence_s,
        "feature_names": list(norm.names),
        "feature_set": data.feature_set,
        "feature_subset": None if spec.feature_subset is None
        else list(spec.feature_subset),
        "horizons_s": [int(h) for h in horizons_s],
        "norm_mean": [float(v) for v in norm.mean],
        "norm_scale": [float(v) for v in norm.scale],
        "sequence_length": spec.sequence_length,
        "target_representation": spec.target_representation,
        "time_representation": spec.time_representation,
        "y_mean": [float(v) for v in y_mean],
        "y_scale": [float(v) for v in y_scale],
    }
    _write_result(os.path.join(str(artifacts_dir), "preprocess.json"), meta)


@dataclass
class ModelBundle:
    """A trained network plus the preprocessing state to reuse it."""

    network: Network
    meta: dict


def load_model_bundle(artifacts_dir) -> ModelBundle:
    meta_path = os.path.join(str(artifacts_dir), "preprocess.json")
    meta = _load_result(meta_path)
    if meta is None:
        raise DataError(f"{meta_path}: missing or unreadable model metadata")
    network = Network.load(os.path.join(str(artifacts_dir), "checkpoint.bin"))
    return ModelBundle(network=network, meta=meta)


def _windows_in_range(features, table, sequence_length, start_s, end_s):
    windows = build_windows(
        features, table, WindowConfig(sequence_length=sequence_length)
    )
    keep = np.ones(len(windows), dtype=bool)
    if start_s is not None:
        keep &= windows.t0_s >= start_s
    if end_s is not None:
        keep &= windows.t0_s < end_s
    windows = windows.subset(keep)
    if len(windows) == 0:
        raise DataError(
            "no admissible forecast windows in the requested range; "
            "gaps, night or span bounds removed every candidate issue time"
        )
    return windows


def reference_forecasts(data: DataSpec, sequence_length: int = 12,
                        time_representation: str = "tod_toy",
                        start_s: int = None, end_s: int = None) -> ForecastSet:
    """Issue-time persistence alone, for evaluating without a model."""
    table, features = load_dataset(data, time_representation)
    windows = _windows_in_range(features, table, sequence_length, start_s, end_s)
    ctx = windows.decode_context()
    reference = persistence_forecast(ctx)
    return ForecastSet(
        t0_s=windows.t0_s,
        horizons_s=np.array(windows.horizons_s),
        ghi_true=windows.y,
        ghi_model=reference,
        ghi_reference=reference,
        csi_t0=ctx.csi_t0,
    )


def bundle_forecasts(bundle: ModelBundle, data: DataSpec,
                     start_s: int = None, end_s: int = None) -> ForecastSet:
    """Apply a trained bundle to every admissible issue time in a range."""
    meta = bundle.meta
    table, features = load_dataset(data, meta["time_representation"])
    if meta["feature_subset"] is not None:
        features = _subset_features(features, meta["feature_subset"], "bundle")
    norm = Normalization(
        names=list(meta["feature_names"]),
        mean=np.array(meta["norm_mean"]),
        scale=np.array(meta["norm_scale"]),
    )
    features = apply_normalization(features, norm)
    windows = _windows_in_range(
        features, table, meta["sequence_length"], start_s, end_s
    )
    if list(windows.horizons_s) != list(meta["horizons_s"]):
        raise ConfigError("window horizons do not match the trained model")
    rep = TargetRepresentation(meta["target_representation"])
    ctx = windows.decode_context()
    pred = bundle.network.predict(windows.x) * np.array(meta["y_scale"]) + np.array(
        meta["y_mean"]
    )
    return ForecastSet(
        t0_s=windows.t0_s,
        horizons_s=np.array(windows.horizons_s),
        ghi_true=windows.y,
        ghi_model=decode_to_ghi(rep, pred, ctx),
        ghi_reference=persistence_forecast(ctx),
        csi_t0=ctx.csi_t0,
    )


def _result_path(out_dir, cell_id: str) -> str:
    return os.path.join(out_dir, "cells", f"{cell_id}.json")


def _load_result(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


def _write_result(path: str, result: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def _run_job(args) -> dict:
    data, spec, net_over, train_over, val_day_stride, path, config_hash = args
    result = run_cell(data, spec, net_over, train_over, val_day_stride)
    result["config_hash"] = config_hash
    _write_result(path, result)
    return result


def run_cells(
    cells,
    data: DataSpec,
    out_dir,
    workers: int = 1,
    max_cells: int = None,
    network_overrides: dict = None,
    training_overrides: dict = None,
    val_day_stride: int = 5,
) -> list:
    """Run cells that have no stored result yet; return results in order.

    Finished cells are loaded from disk untouched, which is what makes
    interrupted sweeps resumable. A stored result whose configuration
    hash disagrees with the request is an error, not a silent rerun.
    ``max_cells`` caps how many new cells this call may run.
    """
    out_dir = str(out_dir)
    os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    seen = set()
    results = {}
    pending = []
    for spec in cells:
        if spec.cell_id in seen:
            raise ConfigError(f"duplicate cell id {spec.cell_id!r}")
        seen.add(spec.cell_id)
        path = _result_path(out_dir, spec.cell_id)
        digest = cell_config_hash(
            data, spec, network_overrides, training_overrides, val_day_stride
        )
        existing = _load_result(path)
        if existing is not None:
            if existing.get("config_hash") != digest:
                raise ConfigError(
                    f"{path}: stored result came from a different configuration; "
                    "use a fresh output directory"
                )
            results[spec.cell_id] = existing
        else:
            pending.append((data, spec, network_overrides, training_overrides,
                            val_day_stride, path, digest))
    if max_cells is not None:
        pending = pending[:max_cells]
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_run_job, pending):
                results[result["cell_id"]] = result
    else:
        for job in pending:
            result = _run_job(job)
            results[result["cell_id"]] = result
    return [results[spec.cell_id] for spec in cells if spec.cell_id in results]


def representation_cells(
    step: SplitStep,
    time_representations=TIME_REPRESENTATIONS,
    target_representations=TARGET_REPRESENTATIONS,
    replicates: int = 5,
    sequence_length: int = 12,
    noise_scale: float = 1.0,
) -> list:
    """Grid over input time encodings and target encodings."""
    cells = []
    for time_rep in time_representations:
        for target_rep in target_representations:
            for r in range(replicates):
                cells.append(CellSpec(
                    cell_id=(
                        f"rep-{step.name}-{time_rep}-{target_rep}"
                        f"-L{sequence_length}-r{r}"
                    ),
                    experiment="representation",
                    step=step,
                    time_representation=time_rep,
                    target_representation=target_rep,
                    sequence_length=sequence_length,
                    replicate=r,
                    noise_scale=noise_scale,
                ))
    return cells


def sequence_length_cells(
    step: SplitStep,
    lengths=(3, 6, 9, 12),
    time_representation: str = "tod_toy",
    target_representation: str = "delta_csi",
    replicates: int = 5,
    noise_scale: float = 1.0,
) -> list:
    """Grid over input sequence lengths, sharing the longest one's issue times."""
    t_max = max(lengths)
    cells = []
    for length in lengths:
        for r in range(replicates):
            cells.append(CellSpec(
                cell_id=(
                    f"seq-{step.name}-{time_representation}-{target_representation}"
                    f"-L{length}-r{r}"
                ),
                experiment="sequence_length",
                step=step,
                time_representation=time_representation,
                target_representation=target_representation,
                sequence_length=length,
                replicate=r,
                noise_scale=noise_scale,
                t0_reference_length=t_max,
            ))
    return cells


def importance_cells(
    step: SplitStep,
    time_representation: str = "tod_toy",
    target_representation: str = "delta_csi",
    sequence_length: int = 12,
    replicates: int = 5,
    permutation_repeats: int = 5,
    noise_scale: float = 1.0,
) -> list:
    """Replicated training runs that each score permutation importance."""
    return [
        CellSpec(
            cell_id=(
                f"imp-{step.name}-{time_representation}-{target_representation}"
                f"-L{sequence_length}-r{r}"
            ),
            experiment="importance",
            step=step,
            time_representation=time_representation,
            target_representation=target_representation,
            sequence_length=sequence_length,
            replicate=r,
            noise_scale=noise_scale,
            permutation_repeats=permutation_repeats,
        )
        for r in range(replicates)
    ]


def noise_ablation_cells(
    step: SplitStep,
    noise_scales=(0.0, 1.0),
    feature_sets=None,
    time_representation: str = "tod_toy",
    target_representation: str = "delta_csi",
    sequence_length: int = 12,
    replicates: int = 5,
) -> list:
    """Grid over noise-channel scale and feature set.

    ``feature_sets`` maps a short label to a tuple of feature names, or
    to None for the full set; the default runs the full set only. The
    off arm keeps the noise channels and drives them at scale zero, so
    every arm shares one architecture.
    """
    if feature_sets is None:
        feature_sets = {"all": None}
    cells = []
    for set_name in sorted(feature_sets):
        subset = feature_sets[set_name]
        for scale in noise_scales:
            for r in range(replicates):
                cells.append(CellSpec(
                    cell_id=(
                        f"noise-{step.name}-{time_representation}"
                        f"-{target_representation}-L{sequence_length}"
                        f"-{set_name}-n{scale:g}-r{r}"
                    ),
                    experiment="noise_ablation",
                    step=step,
                    time_representation=time_representation,
                    target_representation=target_representation,
                    sequence_length=sequence_length,
                    replicate=r,
                    noise_scale=scale,
                    feature_subset=None if subset is None else tuple(subset),
                ))
    return cells


def collect_cells(out_dir) -> list:
    """All stored cell results under out_dir, ordered by cell id."""
    cell_dir = os.path.join(str(out_dir), "cells")
    if not os.path.isdir(cell_dir):
        return []
    results = []
    for name in sorted(os.listdir(cell_dir)):
        if name.endswith(".json"):
            result = _load_result(os.path.join(cell_dir, name))
            if result is not None:
                results.append(result)
    return results


def lookup(result: dict, dotted: str):
    value = result
    for part in dotted.split("."):
        value = value[part]
    return value


def summarize(results, group_keys, value: str = "test_overall.mae_wm2") -> list:
    """Median of one value over replicates, grouped by the given keys."""
    groups = {}
    for result in results:
        # JSON round-trips tuples as lists; keys must stay hashable.
        key = tuple(
            tuple(v) if isinstance(v, list) else v
            for v in (result[k] for k in group_keys)
        )
        groups.setdefault(key, []).append(float(lookup(result, value)))
    rows = []
    for key in sorted(groups, key=str):
        values = groups[key]
        row = dict(zip(group_keys, key))
        row["median"] = float(np.median(values))
        row["n"] = len(values)
        rows.append(row)
    return rows
