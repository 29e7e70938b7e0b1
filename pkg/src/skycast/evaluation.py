"""Forecast quality metrics, sky-condition stratification, and reports.

All metrics compare in decoded GHI units (W/m^2) so results are
comparable across target encodings. Skill is measured against the
scaled-persistence reference: positive skill means the model beats simply
holding the issue-time clear-sky index.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError

__all__ = [
    "mae",
    "rmse",
    "nmap_pct",
    "forecast_skill",
    "spearman",
    "autocorrelation",
    "stratify_by_cloudiness",
    "ForecastSet",
    "MetricsReport",
    "evaluate_forecasts",
    "write_report",
]

# Sky-condition strata on cloudiness = 1 - clear-sky index at issue time.
STRATA_BOUNDS = {
    "clear": (0.0, 0.2),      # cloudiness below 20%
    "partial": (0.2, 0.8),    # 20% to 80%
    "overcast": (0.8, 1.01),  # 80% and above
}


def _paired(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ConfigError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(y_true, y_pred) -> float:
    """Mean absolute error."""
    a, b = _paired(y_true, y_pred)
    if a.size == 0:
        return math.nan
    return float(np.mean(np.abs(a - b)))


def rmse(y_true, y_pred) -> float:
    """Root mean squared error."""
    a, b = _paired(y_true, y_pred)
    if a.size == 0:
        return math.nan
    return float(np.sqrt(np.mean((a - b) ** 2)))


def nmap_pct(y_true, y_pred) -> float:
    """Mean absolute error normalized by the mean observation, percent."""
    a, b = _paired(y_true, y_pred)
    if a.size == 0:
        return math.nan
    denom = float(np.mean(a))
    if denom <= 0.0:
        raise NumericsError("cannot normalize: mean observation is not positive")
    return 100.0 * float(np.mean(np.abs(a - b))) / denom


def forecast_skill(y_true, y_model, y_reference) -> float:
    """One minus the MAE ratio of model to reference.

    Zero means no improvement; identical forecasts score exactly zero
    even when both errors vanish. A zero-error reference with a nonzero
    model error is not a measurable ratio and raises.
    """
    e_model = mae(y_true, y_model)
    e_ref = mae(y_true, y_reference)
    if math.isnan(e_model) or math.isnan(e_ref):
        return math.nan
    if e_model == e_ref:
        return 0.0
    if e_ref == 0.0:
        raise NumericsError("reference forecast has zero error; skill undefined")
    return 1.0 - e_model / e_ref


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation: product-moment correlation of average ranks.

    Without ties this reduces to the classical 1 - 6*sum(d^2)/(n(n^2-1))
    form; with ties, averaged ranks keep the estimate unbiased.
    """
    a, b = _paired(x, y)
    if a.size < 2:
        return math.nan
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = float(np.sqrt(np.sum(ra**2) * np.sum(rb**2)))
    if denom == 0.0:
        return math.nan  # a constant series has no rank ordering
    return float(np.sum(ra * rb) / denom)


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag (biased normalization)."""
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size <= max_lag:
        raise ConfigError(f"need more than {max_lag} samples, got {a.size}")
    a = a - a.mean()
    var = float(np.sum(a * a))
    if var == 0.0:
        raise NumericsError("constant series has undefined autocorrelation")
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        out[k] = float(np.sum(a[: len(a) - k] * a[k:])) / var
    return out


def stratify_by_cloudiness(cloudiness: np.ndarray) -> dict[str, np.ndarray]:
    """Boolean masks per sky-condition stratum.

    ``cloudiness`` is one minus the issue-time clear-sky index, clipped to
    [0, 1]; the three bands partition every sample exactly once.
    """
    c = np.clip(np.asarray(cloudiness, dtype=np.float64), 0.0, 1.0)
    return {
        name: (c >= lo) & (c < hi) for name, (lo, hi) in STRATA_BOUNDS.items()
    }


@dataclass
class ForecastSet:
    """Aligned decoded forecasts over a set of issue times.

    ``ghi_true``, ``ghi_model`` and ``ghi_reference`` all have shape
    (N, n_horizons); the reference is the scaled-persistence baseline.
    """

    t0_s: np.ndarray
    horizons_s: np.ndarray
    ghi_true: np.ndarray
    ghi_model: np.ndarray
    ghi_reference: np.ndarray
    csi_t0: np.ndarray

    def __post_init__(self) -> None:
        n, h = np.asarray(self.ghi_true).shape
        for name in ("ghi_model", "ghi_reference"):
            if np.asarray(getattr(self, name)).shape != (n, h):
                raise ConfigError(f"{name} shape mismatch")
        if len(np.asarray(self.horizons_s)) != h:
            raise ConfigError("horizons_s length mismatch")
        if len(np.asarray(self.t0_s)) != n or len(np.asarray(self.csi_t0)) != n:
            raise ConfigError("issue-time array length mismatch")

    @property
    def cloudiness_t0(self) -> np.ndarray:
        return np.clip(1.0 - np.asarray(self.csi_t0, dtype=np.float64), 0.0, 1.0)


@dataclass
class MetricsReport:
    """Overall, per-horizon, and per-stratum metric tables."""

    overall: dict[str, float]
    per_horizon: list[dict[str, float]]
    strata: list[dict[str, float]]
    n_forecasts: int = 0
    reference_overall: dict[str, float] = field(default_factory=dict)


def _metric_row(y_true, y_model, y_reference) -> dict[str, float]:
    return {
        "mae_wm2": mae(y_true, y_model),
        "rmse_wm2": rmse(y_true, y_model),
        "nmap_pct": nmap_pct(y_true, y_model),
        "skill": forecast_skill(y_true, y_model, y_reference),
        "spearman": spearman(y_true, y_model),
    }


def evaluate_forecasts(fs: ForecastSet) -> MetricsReport:
    """Score a forecast set overall, per horizon, and per sky stratum."""
    overall = _metric_row(fs.ghi_true, fs.ghi_model, fs.ghi_reference)
    reference = {
        "mae_wm2": mae(fs.ghi_true, fs.ghi_reference),
        "rmse_wm2": rmse(fs.ghi_true, fs.ghi_reference),
        "nmap_pct": nmap_pct(fs.ghi_true, fs.ghi_reference),
    }
    per_horizon = []
    for j, hz in enumerate(np.asarray(fs.horizons_s)):
        row = _metric_row(fs.ghi_true[:, j], fs.ghi_model[:, j], fs.ghi_reference[:, j])
        row["horizon_s"] = int(hz)
        row["reference_mae_wm2"] = mae(fs.ghi_true[:, j], fs.ghi_reference[:, j])
        per_horizon.append(row)
    strata = []
    for name, mask in stratify_by_cloudiness(fs.cloudiness_t0).items():
        row: dict[str, float] = {"stratum": name, "n": int(mask.sum())}
        if mask.any():
            row.update(
                _metric_row(
                    fs.ghi_true[mask], fs.ghi_model[mask], fs.ghi_reference[mask]
                )
            )
        strata.append(row)
    return MetricsReport(
        overall=overall,
        per_horizon=per_horizon,
        strata=strata,
        n_forecasts=len(np.asarray(fs.t0_s)),
        reference_overall=reference,
    )


def _write_csv_rows(path: str, rows: list[dict]) -> None:
    import csv as _csv

    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    # Union of keys in first-seen order: an empty stratum row carries
    # fewer fields than a populated one.
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = _csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_report(
    report: MetricsReport,
    fs: ForecastSet,
    out_dir: str,
    density_bins: int = 40,
) -> dict[str, str]:
    """Persist a report directory; returns name -> path of written files.

    Contents: ``metrics.json`` (all tables), ``per_horizon.csv``,
    ``strata.csv``, ``records.csv`` (every forecast flattened), and
    ``density.csv`` (2-d histogram of model vs true GHI for scatter-style
    plots without shipping raw points).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    metrics_path = os.path.join(out_dir, "metrics.json")
    payload = {
        "n_forecasts": report.n_forecasts,
        "overall": report.overall,
        "reference_overall": report.reference_overall,
        "per_horizon": report.per_horizon,
        "strata": report.strata,
    }
    with open(metrics_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    paths["metrics"] = metrics_path

    ph_path = os.path.join(out_dir, "per_horizon.csv")
    _write_csv_rows(ph_path, report.per_horizon)
    paths["per_horizon"] = ph_path

    st_path = os.path.join(out_dir, "strata.csv")
    _write_csv_rows(st_path, report.strata)
    paths["strata"] = st_path

    rec_path = os.path.join(out_dir, "records.csv")
    horizons = np.asarray(fs.horizons_s)
    rows = []
    for i in range(len(np.asarray(fs.t0_s))):
        for j, hz in enumerate(horizons):
            rows.append(
                {
                    "t0_s": int(fs.t0_s[i]),
                    "horizon_s": int(hz),
                    "ghi_true": repr(float(fs.ghi_true[i, j])),
                    "ghi_model": repr(float(fs.ghi_model[i, j])),
                    "ghi_reference": repr(float(fs.ghi_reference[i, j])),
                }
            )
    _write_csv_rows(rec_path, rows)
    paths["records"] = rec_path

    den_path = os.path.join(out_dir, "density.csv")
    true_flat = np.asarray(fs.ghi_true).ravel()
    model_flat = np.asarray(fs.ghi_model).ravel()
    top = max(float(true_flat.max(initial=0.0)), float(model_flat.max(initial=0.0)), 1.0)
    grid, xedges, yedges = np.histogram2d(
        true_flat, model_flat, bins=density_bins, range=[[0.0, top], [0.0, top]]
    )
    den_rows = []
    for a in range(density_bins):
        for b in range(density_bins):
            if grid[a, b] > 0:
                den_rows.append(
                    {
                        "true_lo": repr(float(xedges[a])),
                        "true_hi": repr(float(xedges[a + 1])),
                        "model_lo": repr(float(yedges[b])),
                        "model_hi": repr(float(yedges[b + 1])),
                        "count": int(grid[a, b]),
                    }
                )
    _write_csv_rows(den_path, den_rows)
    paths["density"] = den_path
    return paths
