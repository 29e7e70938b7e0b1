"""Declarative run configuration and run manifests.

One YAML file describes a whole run: the site, where the data lives,
the split schedule, the architecture and training knobs, and the sweep
axes. Command-line flags only override keys that already exist here,
so the file plus the flags is always enough to reproduce a run.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError, DataError
from .experiments import (
    TARGET_REPRESENTATIONS,
    DataSpec,
    SplitStep,
    fraction_steps,
)
from .features import TIME_REPRESENTATIONS
from .solar import SiteConfig
from .synth import SynthConfig
from .timeseries import format_timestamp, parse_timestamp

# Architecture knobs a config file may set; the data-shaped fields
# (n_features, sequence_length, n_outputs) are derived per run.
NETWORK_KEYS = ("conv_filters", "conv_kernel", "lstm_hidden", "dense_hidden",
                "noise_channels", "dropout")
TRAINING_KEYS = ("learning_rate", "batch_size", "max_epochs", "patience")

FAST_MAX_EPOCHS = 10  # --fast caps the training budget for smoke runs


@dataclass(frozen=True)
class ExperimentOptions:
    """Sweep axes and shared run options."""

    step: str = "step1"
    replicates: int = 5
    val_day_stride: int = 5
    noise_scale: float = 1.0
    time_representation: str = "tod_toy"
    target_representation: str = "delta_csi"
    sequence_lengths: tuple = (3, 6, 9, 12)
    noise_scales: tuple = (0.0, 1.0)
    permutation_repeats: int = 5
    time_representations: tuple = TIME_REPRESENTATIONS
    target_representations: tuple = TARGET_REPRESENTATIONS
    feature_sets: tuple = (("all", None),)

    def __post_init__(self):
        if self.replicates < 1 or self.val_day_stride < 1:
            raise ConfigError("replicates and val_day_stride must be positive")
        if self.permutation_repeats < 1:
            raise ConfigError("permutation_repeats must be positive")
        unknown_time = (
            set(self.time_representations) | {self.time_representation}
        ) - set(TIME_REPRESENTATIONS)
        if unknown_time:
            raise ConfigError(f"unknown time representations {sorted(unknown_time)}")
        unknown_target = (
            set(self.target_representations) | {self.target_representation}
        ) - set(TARGET_REPRESENTATIONS)
        if unknown_target:
            raise ConfigError(
                f"unknown target representations {sorted(unknown_target)}"
            )

    @property
    def feature_set_map(self) -> dict:
        return {label: subset for label, subset in self.feature_sets}


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, resolved from one YAML file."""

    site: SiteConfig
    csv_path: str | None
    feature_set: str
    cadence_s: int
    steps: tuple
    sequence_length: int
    network: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    experiments: ExperimentOptions = ExperimentOptions()
    synth: SynthConfig = None
    seed: int = 0
    config_digest: str = ""

    def step_named(self, name: str) -> SplitStep:
        for step in self.steps:
            if step.name == name:
                return step
        raise ConfigError(
            f"no split named {name!r}; have {[s.name for s in self.steps]}"
        )

    def data_spec(self, csv_path: str | None = None) -> DataSpec:
        path = csv_path or self.csv_path
        if path is None:
            raise ConfigError("no csv_path configured; generate or point at data")
        return DataSpec(
            csv_path=path,
            site=self.site,
            feature_set=self.feature_set,
            cadence_s=self.cadence_s,
        )


def _epoch_s(value) -> int:
    # YAML hands unquoted ISO timestamps over as datetime objects.
    if isinstance(value, dt.datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=dt.timezone.utc)
        return int(value.timestamp())
    return parse_timestamp(str(value))


def _require_mapping(block, name: str) -> dict:
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"config block {name!r} must be a mapping")
    return dict(block)


def _reject_unknown(block: dict, allowed, name: str) -> None:
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")


def _site_from(block: dict) -> SiteConfig:
    _reject_unknown(
        block, ("latitude", "longitude", "elevation_m", "turbidity", "pressure_pa"),
        "site",
    )
    turbidity = block.get("turbidity", 3.0)
    if isinstance(turbidity, list):
        turbidity = tuple(turbidity)
    return SiteConfig(
        latitude_deg=float(block.get("latitude", 39.742)),
        longitude_deg=float(block.get("longitude", -105.18)),
        elevation_m=float(block.get("elevation_m", 1829.0)),
        linke_turbidity=turbidity,
        pressure_pa=block.get("pressure_pa"),
    )


def _synth_from(block: dict, site: SiteConfig, seed: int) -> SynthConfig:
    allowed = [f.name for f in fields(SynthConfig) if f.name != "site"]
    _reject_unknown(block, allowed, "synth")
    kwargs = dict(block)
    kwargs.setdefault("seed", seed)
    if "start" in kwargs:
        kwargs["start"] = format_timestamp(_epoch_s(kwargs["start"]))
    return SynthConfig(site=site, **kwargs)


def _steps_from(block: dict, synth: SynthConfig) -> tuple:
    """Resolve the split schedule.

    Explicit dated steps win; otherwise fractions are laid over either
    a given [start, end) range or the synthetic data span.
    """
    _reject_unknown(block, ("steps", "start", "end", "fractions"), "splits")
    if "steps" in block:
        steps = []
        for entry in block["steps"]:
            entry = _require_mapping(entry, "splits.steps[]")
            _reject_unknown(
                entry, ("name", "train_start", "train_end", "test_end"),
                "splits.steps[]",
            )
            try:
                steps.append(SplitStep(
                    name=str(entry["name"]),
                    train_start_s=_epoch_s(entry["train_start"]),
                    train_end_s=_epoch_s(entry["train_end"]),
                    test_end_s=_epoch_s(entry["test_end"]),
                ))
            except KeyError as exc:
                raise ConfigError(f"splits.steps[] entry missing {exc}") from None
        return tuple(steps)
    if "start" in block or "end" in block:
        try:
            start = _epoch_s(block["start"])
            end = _epoch_s(block["end"])
        except KeyError as exc:
            raise ConfigError(f"splits block missing {exc}") from None
    else:
        start = parse_timestamp(synth.start)
        end = start + synth.days * 86400
    fractions = block.get("fractions")
    if fractions is None:
        return fraction_steps(start, end)
    return fraction_steps(start, end, tuple(tuple(f) for f in fractions))


def _experiments_from(block: dict) -> ExperimentOptions:
    allowed = [f.name for f in fields(ExperimentOptions)]
    _reject_unknown(block, allowed, "experiments")
    kwargs = dict(block)
    for key in ("sequence_lengths", "noise_scales", "time_representations",
                "target_representations"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    if "feature_sets" in kwargs:
        sets = _require_mapping(kwargs["feature_sets"], "experiments.feature_sets")
        kwargs["feature_sets"] = tuple(
            (label, None if names is None else tuple(names))
            for label, names in sorted(sets.items())
        )
    return ExperimentOptions(**kwargs)


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate one YAML run configuration."""
    try:
        with open(path, "rb") as fh:
            raw_bytes = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    try:
        raw = yaml.safe_load(raw_bytes)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from None
    raw = _require_mapping(raw, "top level")
    _reject_unknown(
        raw,
        ("site", "data", "splits", "window", "network", "training",
         "experiments", "synth", "seed"),
        "top level",
    )

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = seed_override

    site = _site_from(_require_mapping(raw.get("site"), "site"))
    data = _require_mapping(raw.get("data"), "data")
    _reject_unknown(data, ("csv_path", "feature_set", "cadence_s"), "data")
    synth = _synth_from(_require_mapping(raw.get("synth"), "synth"), site, seed)
    steps = _steps_from(_require_mapping(raw.get("splits"), "splits"), synth)

    window = _require_mapping(raw.get("window"), "window")
    _reject_unknown(window, ("sequence_length",), "window")

    network = _require_mapping(raw.get("network"), "network")
    _reject_unknown(network, NETWORK_KEYS, "network")
    training = _require_mapping(raw.get("training"), "training")
    _reject_unknown(training, TRAINING_KEYS, "training")

    return RunConfig(
        site=site,
        csv_path=data.get("csv_path"),
        feature_set=str(data.get("feature_set", "synthetic")),
        cadence_s=int(data.get("cadence_s", 60)),
        steps=steps,
        sequence_length=int(window.get("sequence_length", 12)),
        network=network,
        training=training,
        experiments=_experiments_from(
            _require_mapping(raw.get("experiments"), "experiments")
        ),
        synth=synth,
        seed=seed,
        config_digest=hashlib.sha256(raw_bytes).hexdigest(),
    )


def file_digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


@dataclass
class ManifestWriter:
    """Collects what a command touched, then writes one manifest file.

    The manifest is the only output whose bytes may differ between
    reruns, and only in its wall-time field.
    """

    command: str
    config_digest: str
    seed: int
    out_dir: str

    def __post_init__(self):
        self._t0 = time.time()
        self._inputs = {}
        self._outputs = []

    def add_input(self, path: str) -> None:
        try:
            self._inputs[os.path.abspath(path)] = file_digest(path)
        except OSError as exc:
            raise DataError(f"cannot read input {path!r}: {exc}") from None

    def add_output(self, path: str) -> None:
        self._outputs.append(os.path.abspath(path))

    def write(self, extra: dict | None = None) -> str:
        from . import __version__

        payload = {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "inputs": dict(sorted(self._inputs.items())),
            "outputs": sorted(self._outputs),
            "version": __version__,
            "wall_time_s": time.time() - self._t0,
        }
        if extra:
            payload.update(extra)
        path = os.path.join(self.out_dir, "manifest.json")
        os.makedirs(self.out_dir, exist_ok=True)
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path
