"""Scalar feature engineering over station tables.

A feature pipeline is a list of :class:`FeatureSpec` entries, each naming
a transform kind, an optional source column, and kind-specific
parameters. Specs may consume the outputs of other specs (for example a
rolling mean over a clear-sky deviation that is itself derived); the
assembler resolves evaluation order topologically and rejects cycles.

Transforms never drop rows: anything not computable at a given instant
(insufficient lag history, missing inputs) is NaN there, so gap detection
on the assembled matrix gives the complete-sequence rule for free.

Time transforms
---------------
``tod``   fraction of the UTC day in [0, 1)
``toy``   (day of year + tod) / 365, slightly above 1 late in leap years
``tm``    signed day-fraction offsets from sunrise, solar noon and sunset
``cyclic`` sine and cosine of a fraction-valued column; by default the
          argument is scaled by 2*pi so the encoding is actually
          periodic, with ``literal: true`` applying sin/cos to the raw
          value instead

Value transforms
----------------
``raw``            passthrough of a station column
``lag``            value ``k`` grid steps earlier
``roll_mean`` / ``roll_median`` / ``roll_std``
                   trailing statistics over ``window`` samples ending at
                   and including the current one (std uses ddof=1)
``csi``            guarded ratio to a clear-sky column
``cs_dev``         clear-sky column minus source
``cos_deg``        cosine of an angle column given in degrees
``product``        source times another column
``wind_components`` north-south / east-west projections of speed along a
                   meteorological direction (degrees from north)
``sun_position``   horizontal unit-vector components of the sun direction
``flag``           1.0 where source compares true against a threshold
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .solar import SiteConfig, sun_events
from .targets import clear_sky_index
from .timeseries import TimeSeriesTable

__all__ = [
    "FeatureSpec",
    "FeatureMatrix",
    "FeatureManifest",
    "Normalization",
    "assemble_features",
    "fit_normalization",
    "apply_normalization",
    "load_feature_manifest",
    "time_representation_specs",
    "TIME_REPRESENTATIONS",
]

_DEG = np.pi / 180.0

_SINGLE_OUTPUT_KINDS = {
    "raw",
    "tod",
    "toy",
    "lag",
    "roll_mean",
    "roll_median",
    "roll_std",
    "csi",
    "cs_dev",
    "cos_deg",
    "product",
    "flag",
}
_KINDS = _SINGLE_OUTPUT_KINDS | {"tm", "cyclic", "wind_components", "sun_position"}

# Spec lists for the interchangeable time encodings swept in experiments.
TIME_REPRESENTATIONS = ("tod_toy", "angle_tod_toy", "tm", "angle_tm")


@dataclass(frozen=True)
class FeatureSpec:
    """One transform: ``kind`` applied to ``source`` with ``params``.

    ``name`` is the output column, or the prefix for multi-output kinds
    (``tm`` appends _sunrise/_noon/_sunset, ``cyclic`` appends _sin/_cos,
    ``wind_components`` and ``sun_position`` append _ns/_ew). A spec with
    ``intermediate: true`` in its params is computed and referenceable by
    later specs but left out of the final matrix.
    """

    name: str
    kind: str
    source: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if not self.name:
            raise ConfigError("feature name must be non-empty")

    @property
    def output_names(self) -> list[str]:
        if self.kind == "tm":
            return [f"{self.name}_sunrise", f"{self.name}_noon", f"{self.name}_sunset"]
        if self.kind == "cyclic":
            return [f"{self.name}_sin", f"{self.name}_cos"]
        if self.kind in ("wind_components", "sun_position"):
            return [f"{self.name}_ns", f"{self.name}_ew"]
        return [self.name]

    @property
    def input_names(self) -> list[str]:
        deps = []
        if self.source is not None:
            deps.append(self.source)
        for key in ("clear_column", "direction_column", "elevation_column", "other"):
            if key in self.params:
                deps.append(self.params[key])
        return deps

    @classmethod
    def from_mapping(cls, raw: dict) -> "FeatureSpec":
        known = {"name", "kind", "source"}
        params = {k: v for k, v in raw.items() if k not in known}
        try:
            return cls(
                name=raw["name"],
                kind=raw["kind"],
                source=raw.get("source"),
                params=params,
            )
        except KeyError as exc:
            raise ConfigError(f"feature spec missing field {exc}") from None


@dataclass
class FeatureMatrix:
    """Assembled features: (N, F) float64 values on the table's grid."""

    timestamps: np.ndarray
    names: list[str]
    values: np.ndarray
    cadence_s: int

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.timestamps), len(self.names)):
            raise ConfigError(
                f"values shape {self.values.shape} != "
                f"({len(self.timestamps)}, {len(self.names)})"
            )
        if len(set(self.names)) != len(self.names):
            raise ConfigError("duplicate feature names")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise ConfigError(f"unknown feature {name!r}") from None

    def as_table(self) -> TimeSeriesTable:
        """View as a time-series table, e.g. for gap detection."""
        cols = {n: self.values[:, j] for j, n in enumerate(self.names)}
        return TimeSeriesTable(self.timestamps, cols, self.cadence_s)


def _day_fraction(timestamps: np.ndarray) -> np.ndarray:
    return (timestamps % 86400).astype(np.float64) / 86400.0


def _tod(table: TimeSeriesTable) -> np.ndarray:
    return _day_fraction(table.timestamps)


def _toy(table: TimeSeriesTable) -> np.ndarray:
    dt_day = (table.timestamps // 86400).astype("datetime64[D]")
    year_start = dt_day.astype("datetime64[Y]").astype("datetime64[D]")
    doy = (dt_day - year_start).astype(np.int64) + 1
    return (doy + _day_fraction(table.timestamps)) / 365.0


def _tm(table: TimeSeriesTable, site: SiteConfig) -> np.ndarray:
    """(N, 3) signed day fractions from sunrise, solar noon, sunset.

    On polar days/nights the missing rise/set falls back to the transit
    instant so the columns stay defined.
    """
    ts = table.timestamps
    days = np.unique(ts // 86400)
    out = np.empty((len(ts), 3))
    for day_num in days:
        day = datetime.date(1970, 1, 1) + datetime.timedelta(days=int(day_num))
        ev = sun_events(day, site)
        rise = ev.sunrise_s if ev.sunrise_s is not None else ev.solar_noon_s
        sets = ev.sunset_s if ev.sunset_s is not None else ev.solar_noon_s
        rows = (ts // 86400) == day_num
        t = ts[rows].astype(np.float64)
        out[rows, 0] = (t - rise) / 86400.0
        out[rows, 1] = (t - ev.solar_noon_s) / 86400.0
        out[rows, 2] = (t - sets) / 86400.0
    return out


def _rolling(x: np.ndarray, window: int, fn) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if window <= 0:
        raise ConfigError(f"rolling window must be positive, got {window}")
    if len(x) >= window:
        sw = np.lib.stride_tricks.sliding_window_view(x, window)
        out[window - 1 :] = fn(sw, axis=-1)
    return out


def _lag(x: np.ndarray, k: int) -> np.ndarray:
    if k <= 0:
        raise ConfigError(f"lag must be positive, got {k}")
    out = np.full(len(x), np.nan)
    if k < len(x):
        out[k:] = x[:-k]
    return out


def _evaluate(
    spec: FeatureSpec,
    resolve,
    table: TimeSeriesTable,
    site: SiteConfig | None,
) -> list[np.ndarray]:
    kind = spec.kind
    p = spec.params
    if kind == "tod":
        return [_tod(table)]
    if kind == "toy":
        return [_toy(table)]
    if kind == "tm":
        if site is None:
            raise ConfigError(f"feature {spec.name!r} needs a site for sun events")
        tm = _tm(table, site)
        return [tm[:, 0], tm[:, 1], tm[:, 2]]

    src = resolve(spec.source, spec)
    if kind == "raw":
        return [src.copy()]
    if kind == "cyclic":
        arg = src if p.get("literal", False) else 2.0 * np.pi * src
        return [np.sin(arg), np.cos(arg)]
    if kind == "lag":
        return [_lag(src, int(p.get("k", 1)))]
    if kind == "roll_mean":
        return [_rolling(src, int(p["window"]), np.mean)]
    if kind == "roll_median":
        return [_rolling(src, int(p["window"]), np.median)]
    if kind == "roll_std":
        return [
            _rolling(src, int(p["window"]), lambda a, axis: np.std(a, axis=axis, ddof=1))
        ]
    if kind == "csi":
        return [clear_sky_index(src, resolve(p["clear_column"], spec))]
    if kind == "cs_dev":
        return [resolve(p["clear_column"], spec) - src]
    if kind == "cos_deg":
        return [np.cos(src * _DEG)]
    if kind == "product":
        return [src * resolve(p["other"], spec)]
    if kind == "wind_components":
        d = resolve(p["direction_column"], spec) * _DEG
        return [src * np.cos(d), src * np.sin(d)]
    if kind == "sun_position":
        el = resolve(p["elevation_column"], spec) * _DEG
        az = src * _DEG
        return [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el)]
    if kind == "flag":
        op = p.get("op", ">")
        thr = float(p.get("threshold", 0.0))
        if op == ">":
            hit = src > thr
        elif op == "<":
            hit = src < thr
        else:
            raise ConfigError(f"flag op must be '>' or '<', got {op!r}")
        out = np.where(hit, 1.0, 0.0)
        out[np.isnan(src)] = np.nan
        return [out]
    raise ConfigError(f"unhandled feature kind {kind!r}")


def assemble_features(
    table: TimeSeriesTable,
    specs: list[FeatureSpec],
    site: SiteConfig | None = None,
) -> FeatureMatrix:
    """Evaluate specs in dependency order into one matrix.

    Output order follows the spec list (multi-output kinds expand in
    place); dependency cycles and name collisions are configuration
    errors.
    """
    produced: dict[str, FeatureSpec] = {}
    ordered_names: list[str] = []
    for spec in specs:
        # A raw spec may carry a station column through under its own
        # name; any other collision with the table would shadow data.
        passthrough = spec.kind == "raw" and spec.source == spec.name
        for out in spec.output_names:
            if out in produced or (out in table.columns and not passthrough):
                raise ConfigError(f"feature output {out!r} already defined")
            produced[out] = spec
            if not spec.params.get("intermediate", False):
                ordered_names.append(out)

    values: dict[str, np.ndarray] = {}
    in_progress: set[str] = set()

    def resolve(name: str | None, for_spec: FeatureSpec) -> np.ndarray:
        if name is None:
            raise ConfigError(f"feature {for_spec.name!r} requires a source column")
        if name in values:
            return values[name]
        if name in table.columns:
            return table.columns[name]
        if name in produced:
            evaluate(produced[name])
            return values[name]
        raise ConfigError(
            f"feature {for_spec.name!r} references unknown column {name!r}"
        )

    def evaluate(spec: FeatureSpec) -> None:
        if spec.output_names[0] in values:
            return
        key = spec.output_names[0]
        if key in in_progress:
            raise ConfigError(f"feature dependency cycle through {spec.name!r}")
        in_progress.add(key)
        try:
            outs = _evaluate(spec, resolve, table, site)
        finally:
            in_progress.discard(key)
        for out_name, arr in zip(spec.output_names, outs):
            values[out_name] = np.asarray(arr, dtype=np.float64)

    for spec in specs:
        evaluate(spec)

    if not ordered_names:
        raise ConfigError("feature list produces no output columns")
    matrix = np.column_stack([values[n] for n in ordered_names])
    return FeatureMatrix(
        timestamps=table.timestamps,
        names=ordered_names,
        values=matrix,
        cadence_s=table.cadence_s,
    )


@dataclass
class Normalization:
    """Frozen per-feature standardization parameters."""

    names: list[str]
    mean: np.ndarray
    scale: np.ndarray


def fit_normalization(fm: FeatureMatrix, fit_mask: np.ndarray) -> Normalization:
    """Mean/scale from the masked rows only (training range).

    NaN entries are ignored; near-constant columns get scale 1 so they
    pass through centered instead of exploding.
    """
    mask = np.asarray(fit_mask, dtype=bool)
    if mask.shape != (len(fm.timestamps),):
        raise ConfigError("fit_mask length mismatch")
    if not mask.any():
        raise ConfigError("fit_mask selects no rows")
    sub = fm.values[mask]
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(sub, axis=0)
        std = np.nanstd(sub, axis=0)
    mean = np.where(np.isfinite(mean), mean, 0.0)
    std = np.where(np.isfinite(std) & (std > 1e-12), std, 1.0)
    return Normalization(names=list(fm.names), mean=mean, scale=std)


def apply_normalization(fm: FeatureMatrix, norm: Normalization) -> FeatureMatrix:
    if norm.names != fm.names:
        raise ConfigError("normalization was fitted on different features")
    return FeatureMatrix(
        timestamps=fm.timestamps,
        names=list(fm.names),
        values=(fm.values - norm.mean) / norm.scale,
        cadence_s=fm.cadence_s,
    )


@dataclass
class FeatureManifest:
    """Canonical station schema plus the engineered feature pipeline."""

    station_columns: dict[str, list[str]]
    derived_columns: list[str]
    specs: list[FeatureSpec]

    @property
    def all_station_names(self) -> list[str]:
        out: list[str] = []
        for group in self.station_columns.values():
            out.extend(group)
        return out


def load_feature_manifest() -> FeatureManifest:
    """The packaged manifest for full-schema station exports."""
    import importlib.resources

    import yaml

    text = (
        importlib.resources.files("skycast")
        .joinpath("data/station_features.yaml")
        .read_text()
    )
    raw = yaml.safe_load(text)
    return FeatureManifest(
        station_columns=raw["station_columns"],
        derived_columns=list(raw["derived_columns"]),
        specs=[FeatureSpec.from_mapping(m) for m in raw["features"]],
    )


def time_representation_specs(representation: str) -> list[FeatureSpec]:
    """Specs for one of the interchangeable time encodings.

    ``tod_toy`` gives the two plain fractions; ``angle_tod_toy`` their
    sine/cosine pairs; ``tm`` the three milestone offsets; ``angle_tm``
    the milestones plus their sine/cosine pairs.
    """
    hidden = {"intermediate": True}
    if representation == "tod_toy":
        return [FeatureSpec("tod", "tod"), FeatureSpec("toy", "toy")]
    if representation == "angle_tod_toy":
        return [
            FeatureSpec("tod", "tod", params=dict(hidden)),
            FeatureSpec("toy", "toy", params=dict(hidden)),
            FeatureSpec("tod", "cyclic", source="tod"),
            FeatureSpec("toy", "cyclic", source="toy"),
        ]
    if representation == "tm":
        return [FeatureSpec("tm", "tm")]
    if representation == "angle_tm":
        return [
            FeatureSpec("tm", "tm", params=dict(hidden)),
            FeatureSpec("tm_sunrise", "cyclic", source="tm_sunrise"),
            FeatureSpec("tm_noon", "cyclic", source="tm_noon"),
            FeatureSpec("tm_sunset", "cyclic", source="tm_sunset"),
        ]
    raise ConfigError(
        f"unknown time representation {representation!r}; "
        f"expected one of {TIME_REPRESENTATIONS}"
    )
