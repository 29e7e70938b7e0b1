"""Forecast window construction.

A window pairs an input sequence with its future targets. The input
sequence samples the feature matrix at ``sequence_length`` instants
spaced ``spacing_s`` apart and ending at the issue time t0. Targets
are ground irradiance at fixed horizons after t0.

Admission rules, applied to every candidate t0 on the stride grid:

  * the full input span and the latest horizon must lie inside the table
  * no recorded data gap may intersect the input span (closed) or the
    horizon span (open at t0)
  * clear-sky irradiance must exceed the daylight floor at t0 and at
    every horizon instant
  * every sampled feature value and every target value must be finite
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureMatrix
from .targets import CSI_CLEAR_SKY_FLOOR_WM2, DecodeContext
from .timeseries import GapReport, TimeSeriesTable, detect_gaps

_CACHE_MAGIC = b"SKWIN1\n"

DEFAULT_HORIZONS_S = tuple(600 * k for k in range(1, 13))


@dataclass(frozen=True)
class WindowConfig:
    """Geometry of the forecast windows."""

    sequence_length: int = 12
    spacing_s: int = 600
    horizons_s: tuple = DEFAULT_HORIZONS_S
    stride_s: int = 600
    daylight_floor_wm2: float = CSI_CLEAR_SKY_FLOOR_WM2

    def __post_init__(self):
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be at least 1")
        if self.spacing_s < 1 or self.stride_s < 1:
            raise ConfigError("spacing_s and stride_s must be positive")
        hs = tuple(int(h) for h in self.horizons_s)
        if not hs or any(h <= 0 for h in hs) or list(hs) != sorted(set(hs)):
            raise ConfigError("horizons_s must be strictly increasing and positive")
        object.__setattr__(self, "horizons_s", hs)


def window_schema_hash(feature_names, cadence_s: int, config: WindowConfig) -> str:
    """Digest identifying a window layout; used to validate cached sets."""
    payload = {
        "cadence_s": int(cadence_s),
        "daylight_floor_wm2": float(config.daylight_floor_wm2),
        "feature_names": list(feature_names),
        "horizons_s": list(config.horizons_s),
        "sequence_length": int(config.sequence_length),
        "spacing_s": int(config.spacing_s),
        "stride_s": int(config.stride_s),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class WindowSet:
    """Columnar store of admitted windows.

    ``x`` is (N, T, F) with time ascending, so ``x[:, -1, :]`` is the
    issue instant. ``y`` holds future ground irradiance per horizon.
    """

    t0_s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    ghi_t0: np.ndarray
    ghi_cs_t0: np.ndarray
    ghi_cs_h: np.ndarray
    feature_names: tuple
    horizons_s: tuple
    spacing_s: int
    schema_hash: str = ""

    def __post_init__(self):
        n = len(self.t0_s)
        t = self.x.shape[1] if self.x.ndim == 3 else -1
        h = len(self.horizons_s)
        if self.x.shape[0] != n or self.x.ndim != 3:
            raise ConfigError("x must be (N, T, F)")
        if self.x.shape[2] != len(self.feature_names):
            raise ConfigError("x width must match feature_names")
        if self.y.shape != (n, h) or self.ghi_cs_h.shape != (n, h):
            raise ConfigError("y and ghi_cs_h must be (N, H)")
        if self.ghi_t0.shape != (n,) or self.ghi_cs_t0.shape != (n,):
            raise ConfigError("ghi_t0 and ghi_cs_t0 must be (N,)")
        del t

    def __len__(self) -> int:
        return len(self.t0_s)

    @property
    def sequence_length(self) -> int:
        return self.x.shape[1]

    def subset(self, selector) -> "WindowSet":
        """New set holding the selected rows (mask or index array)."""
        return WindowSet(
            t0_s=self.t0_s[selector],
            x=self.x[selector],
            y=self.y[selector],
            ghi_t0=self.ghi_t0[selector],
            ghi_cs_t0=self.ghi_cs_t0[selector],
            ghi_cs_h=self.ghi_cs_h[selector],
            feature_names=self.feature_names,
            horizons_s=self.horizons_s,
            spacing_s=self.spacing_s,
            schema_hash=self.schema_hash,
        )

    def split_at(self, boundary_s: int):
        """(windows issued before boundary, windows issued at or after)."""
        before = self.t0_s < boundary_s
        return self.subset(before), self.subset(~before)

    def decode_context(self) -> DecodeContext:
        return DecodeContext(
            ghi_t0=self.ghi_t0, ghi_cs_t0=self.ghi_cs_t0, ghi_cs_h=self.ghi_cs_h
        )

    def save(self, path) -> None:
        save_window_set(self, path)


def build_windows(
    features: FeatureMatrix,
    table: TimeSeriesTable,
    config: WindowConfig = WindowConfig(),
    gaps: GapReport = None,
    ghi_column: str = "ghi",
    clear_column: str = "ghi_cs",
    allowed_t0_s=None,
) -> WindowSet:
    """Scan the table for admissible issue times and gather windows.

    ``gaps`` defaults to a report over every table column; pass a
    narrower report to ignore columns that do not feed the model.
    ``allowed_t0_s`` restricts candidates to a fixed issue-time set so
    window sets built with different sequence lengths stay comparable.
    """
    cadence = table.cadence_s
    if not np.array_equal(features.timestamps, table.timestamps):
        raise ConfigError("feature matrix and table must share one time grid")
    for name, value in (("spacing_s", config.spacing_s), ("stride_s", config.stride_s)):
        if value % cadence != 0:
            raise ConfigError(f"{name} must be a multiple of the {cadence}s cadence")
    if any(h % cadence != 0 for h in config.horizons_s):
        raise ConfigError(f"horizons must be multiples of the {cadence}s cadence")
    if ghi_column not in table.columns or clear_column not in table.columns:
        raise ConfigError(f"table must provide {ghi_column!r} and {clear_column!r}")
    if gaps is None:
        gaps = detect_gaps(table, sorted(table.columns))

    ts = table.timestamps
    n_rows = len(ts)
    t_len = config.sequence_length
    spacing_steps = config.spacing_s // cadence
    h_steps = np.array([h // cadence for h in config.horizons_s], dtype=np.int64)
    lookback = spacing_steps * (t_len - 1)

    # Issue times sit on the absolute stride grid, independent of where
    # this particular table happens to start.
    cand = np.nonzero(ts % config.stride_s == 0)[0]
    if allowed_t0_s is not None:
        cand = cand[np.isin(ts[cand], np.asarray(allowed_t0_s, dtype=np.int64))]
    cand = cand[(cand >= lookback) & (cand + h_steps[-1] <= n_rows - 1)]

    ghi = table.column(ghi_column)
    clear = table.column(clear_column)
    floor = config.daylight_floor_wm2

    keep = clear[cand] > floor
    h_idx = cand[:, None] + h_steps[None, :]
    keep &= (clear[h_idx] > floor).all(axis=1)

    # Gap overlap against the closed input span and the post-issue span.
    span_start = ts[cand] - config.spacing_s * (t_len - 1)
    span_end = ts[cand]
    post_end = ts[cand] + config.horizons_s[-1]
    for gap_start, gap_end in gaps.intervals:
        keep &= ~((span_start <= gap_end) & (gap_start <= span_end))
        keep &= ~((span_end + 1 <= gap_end) & (gap_start <= post_end))

    cand = cand[keep]
    h_idx = h_idx[keep]

    offsets = spacing_steps * np.arange(-(t_len - 1), 1, dtype=np.int64)
    in_idx = cand[:, None] + offsets[None, :]
    x = features.values[in_idx]
    y = ghi[h_idx]
    finite = (
        np.isfinite(x).all(axis=(1, 2))
        & np.isfinite(y).all(axis=1)
        & np.isfinite(ghi[cand])
    )
    cand, x, y, h_idx = cand[finite], x[finite], y[finite], h_idx[finite]

    return WindowSet(
        t0_s=ts[cand].copy(),
        x=np.ascontiguousarray(x),
        y=np.ascontiguousarray(y),
        ghi_t0=ghi[cand].copy(),
        ghi_cs_t0=clear[cand].copy(),
        ghi_cs_h=np.ascontiguousarray(clear[h_idx]),
        feature_names=tuple(features.names),
        horizons_s=config.horizons_s,
        spacing_s=config.spacing_s,
        schema_hash=window_schema_hash(features.names, cadence, config),
    )


_ARRAY_FIELDS = ("t0_s", "x", "y", "ghi_t0", "ghi_cs_t0", "ghi_cs_h")


def save_window_set(ws: WindowSet, path) -> None:
    """Write a window set as one self-describing binary file."""
    header = {
        "arrays": [
            {
                "name": name,
                "dtype": str(getattr(ws, name).dtype),
                "shape": list(getattr(ws, name).shape),
            }
            for name in _ARRAY_FIELDS
        ],
        "feature_names": list(ws.feature_names),
        "horizons_s": list(ws.horizons_s),
        "spacing_s": ws.spacing_s,
        "schema_hash": ws.schema_hash,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in _ARRAY_FIELDS:
            arr = np.ascontiguousarray(getattr(ws, name))
            fh.write(arr.tobytes())


def load_window_set(path, expected_schema_hash: str = None) -> WindowSet:
    """Read a saved window set, optionally checking its layout digest."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise DataError(f"{path}: not a window cache file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if expected_schema_hash is not None and header["schema_hash"] != expected_schema_hash:
            raise DataError(
                f"{path}: cached windows were built with a different layout"
            )
        arrays = {}
        for meta in header["arrays"]:
            dtype = np.dtype(meta["dtype"])
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise DataError(f"{path}: truncated window cache")
            arrays[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return WindowSet(
        feature_names=tuple(header["feature_names"]),
        horizons_s=tuple(header["horizons_s"]),
        spacing_s=header["spacing_s"],
        schema_hash=header["schema_hash"],
        **arrays,
    )
