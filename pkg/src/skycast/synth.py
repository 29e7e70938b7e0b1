"""Synthetic station data with known ground truth.

The generator simulates a sky whose cloud cover drives irradiance
attenuation with a fixed delay, so the information content of every
column is known by construction. That makes it a verification bed for
the whole pipeline: persistence must be exact under the all-clear
preset, the planted cover column must dominate a faithful importance
ranking, and the serially uncorrelated distractor columns must not.

Mechanics, all at table cadence:

  * a two-state regime chain (clear or cloudy) flips with fixed
    per-step probabilities
  * latent cloud cover follows a mean-reverting walk towards the
    active regime's level, clipped to [0, 100] percent
  * the clear-sky index is a piecewise-linear attenuation of the cover
    from ``cover_delay_steps`` ago, times mean-one lognormal jitter,
    times an unmeasured mean-reverting disturbance, clipped to [0, 1.2]
  * direct irradiance collapses faster than the clear-sky index as the
    sky darkens, keeping the diffuse component non-negative and the
    component identity exact
  * the observable cover column is the latent cover plus sensor noise;
    distractor columns are autocorrelated noise with no causal role
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .solar import SiteConfig, add_solar_columns
from .timeseries import TimeSeriesTable, parse_timestamp, write_csv

DEFAULT_SITE = SiteConfig(latitude_deg=39.742, longitude_deg=-105.18, elevation_m=1829.0)

# (cover percent, transmitted fraction of clear-sky irradiance)
ATTENUATION_KNOTS = (
    (0.0, 1.0),
    (10.0, 1.0),
    (30.0, 0.92),
    (60.0, 0.55),
    (85.0, 0.30),
    (100.0, 0.15),
)


@dataclass(frozen=True)
class SynthConfig:
    start: str = "2021-06-01T00:00:00Z"
    days: int = 60
    cadence_s: int = 60
    site: SiteConfig = DEFAULT_SITE
    p_clear_to_cloudy: float = 1.0 / 480.0
    p_cloudy_to_clear: float = 1.0 / 360.0
    cover_clear_mean: float = 3.0
    cover_cloudy_mean: float = 65.0
    cover_revert: float = 1.0 / 20.0
    cover_noise: float = 3.0
    cover_delay_steps: int = 45
    jitter_sigma: float = 0.12
    disturbance_revert: float = 1.0 / 120.0
    disturbance_sigma: float = 0.015
    cover_obs_noise: float = 1.0
    n_distractors: int = 4
    distractor_rho: float = 0.98
    seed: int = 0

    def __post_init__(self):
        if self.days < 1 or self.cadence_s < 1:
            raise ConfigError("days and cadence_s must be positive")
        if not 0 <= self.p_clear_to_cloudy <= 1 or not 0 <= self.p_cloudy_to_clear <= 1:
            raise ConfigError("regime flip probabilities must lie in [0, 1]")
        if self.cover_delay_steps < 0 or self.n_distractors < 0:
            raise ConfigError("cover_delay_steps and n_distractors must be non-negative")


def all_clear_config(**overrides) -> SynthConfig:
    """Preset with every stochastic term switched off.

    The sky never leaves the clear regime and nothing perturbs the
    attenuation, so measured irradiance equals the clear-sky curve
    exactly and issue-time persistence is a perfect forecast.
    """
    base = SynthConfig(
        p_clear_to_cloudy=0.0,
        cover_noise=0.0,
        jitter_sigma=0.0,
        disturbance_sigma=0.0,
        cover_obs_noise=0.0,
    )
    return replace(base, **overrides)


def attenuation(cover_pct: np.ndarray) -> np.ndarray:
    xs = np.array([k[0] for k in ATTENUATION_KNOTS])
    ys = np.array([k[1] for k in ATTENUATION_KNOTS])
    return np.interp(cover_pct, xs, ys)


def _regime_chain(n, p01, p10, draws):
    state = np.zeros(n, dtype=np.int64)
    s = 0
    for i in range(n):
        state[i] = s
        if s == 0 and draws[i] < p01:
            s = 1
        elif s == 1 and draws[i] < p10:
            s = 0
    return state


def _mean_reverting(n, start, revert, sigma, shocks, target):
    out = np.empty(n)
    v = start
    for i in range(n):
        out[i] = v
        v = v + revert * (target[i] - v) + sigma * shocks[i]
    return out


def generate(config: SynthConfig = SynthConfig()):
    """Simulate one station record.

    Returns ``(table, truth)``. The table holds what a station would
    measure: irradiance components, the noisy cover observable, and the
    distractors, plus the deterministic geometry columns. The truth
    table exposes the latent state for verification only and must never
    feed a model.
    """
    n = config.days * 86400 // config.cadence_s
    start_s = parse_timestamp(config.start)
    ts = start_s + config.cadence_s * np.arange(n, dtype=np.int64)

    root = np.random.SeedSequence(config.seed)
    regime_rng, cover_rng, jitter_rng, dist_rng, obs_rng, ar_rng = (
        np.random.default_rng(s) for s in root.spawn(6)
    )

    regime = _regime_chain(
        n, config.p_clear_to_cloudy, config.p_cloudy_to_clear, regime_rng.random(n)
    )
    target = np.where(regime == 0, config.cover_clear_mean, config.cover_cloudy_mean)
    cover = _mean_reverting(
        n, config.cover_clear_mean, config.cover_revert, config.cover_noise,
        cover_rng.standard_normal(n), target,
    )
    cover = np.clip(cover, 0.0, 100.0)

    if config.cover_delay_steps > 0:
        delayed = np.concatenate(
            [np.full(config.cover_delay_steps, cover[0]),
             cover[: -config.cover_delay_steps]]
        )
    else:
        delayed = cover

    if config.jitter_sigma > 0:
        s = config.jitter_sigma
        jitter = np.exp(s * jitter_rng.standard_normal(n) - 0.5 * s * s)
    else:
        jitter = np.ones(n)
    disturbance = _mean_reverting(
        n, 0.0, config.disturbance_revert, config.disturbance_sigma,
        dist_rng.standard_normal(n), np.zeros(n),
    )
    csi = np.clip(attenuation(delayed) * jitter * np.exp(disturbance), 0.0, 1.2)

    base = TimeSeriesTable(ts, {"placeholder": np.zeros(n)}, config.cadence_s)
    geo = add_solar_columns(base, config.site)
    ghi_cs = geo.column("ghi_cs")
    dni_cs = geo.column("dni_cs")
    cos_z = np.cos(np.radians(geo.column("zenith_deg")))

    ghi = csi * ghi_cs
    # Direct beam dies faster than total irradiance under cloud; the
    # fraction never exceeds csi, so dhi stays non-negative.
    frac = np.minimum(np.maximum(0.0, (csi - 0.3) / 0.7) ** 1.5, csi)
    dni = dni_cs * frac
    dhi = ghi - dni * np.maximum(cos_z, 0.0)

    cover_obs = np.clip(
        cover + config.cover_obs_noise * obs_rng.standard_normal(n), 0.0, 100.0
    )

    columns = {
        "ghi": ghi,
        "dni": dni,
        "dhi": dhi,
        "cloud_cover_pct": cover_obs,
    }
    for k in range(config.n_distractors):
        shocks = ar_rng.standard_normal(n)
        x = np.empty(n)
        v = 0.0
        for i in range(n):
            v = config.distractor_rho * v + shocks[i]
            x[i] = v
        columns[f"distractor_{k + 1}"] = x

    table = TimeSeriesTable(ts, columns, config.cadence_s)
    table = add_solar_columns(table, config.site)
    truth = TimeSeriesTable(
        ts,
        {
            "regime": regime.astype(float),
            "cover_latent": cover,
            "disturbance": disturbance,
            "csi": csi,
        },
        config.cadence_s,
    )
    return table, truth


def write_synthetic(config: SynthConfig, data_path, truth_path=None):
    """Generate and write the station CSV, plus an optional truth sidecar.

    Only measured columns go into the station file; geometry columns are
    recomputed downstream from timestamps and site, the same as for real
    station data.
    """
    table, truth = generate(config)
    measured = [
        name for name in table.column_names
        if name not in (
            "zenith_deg", "azimuth_deg", "elevation_deg", "hour_angle_deg",
            "ghi_cs", "dni_cs", "dhi_cs", "eclipse_shading",
        )
    ]
    write_csv(table.select(measured), data_path)
    if truth_path is not None:
        write_csv(truth, truth_path)
    return table, truth
