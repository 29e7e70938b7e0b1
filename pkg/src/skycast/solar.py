"""Solar geometry and clear-sky irradiance.

Position comes from the NOAA low-accuracy algorithm (fractional-year
Fourier fits for the equation of time and declination), good to roughly
0.1 degrees, which is plenty for window admission and clear-sky
normalization. Clear-sky irradiance uses the Ineichen/Perez formulation
with Linke turbidity and Kasten-Young airmass. The optical enhancement
factor some variants apply at low airmass is deliberately omitted: with
it, modeled GHI is no longer monotone in zenith near the horizon, and
downstream code relies on monotonicity.

Conventions: timestamps are int64 UTC epoch seconds, longitude is
positive east, azimuth is degrees clockwise from north, zenith from
vertical. All angle outputs are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date as Date

import numpy as np

from .errors import ConfigError
from .timeseries import TimeSeriesTable

__all__ = [
    "SiteConfig",
    "SolarPosition",
    "SunEvents",
    "ClearSkyIrradiance",
    "solar_position",
    "sun_events",
    "clear_sky",
    "add_solar_columns",
    "airmass_kasten_young",
    "extraterrestrial_irradiance",
    "ineichen_clear_sky",
]

SOLAR_CONSTANT_WM2 = 1366.1
STANDARD_PRESSURE_PA = 101325.0
# Zenith at which the top of the disc crosses the horizon, including
# mean atmospheric refraction; used only for rise/set times.
RISE_SET_ZENITH_DEG = 90.833

_DEG = np.pi / 180.0


@dataclass(frozen=True)
class SiteConfig:
    """Observation site. Longitude positive east, elevation in meters.

    ``linke_turbidity`` is either one scalar or 12 monthly values
    (January first, applied by UTC calendar month).
    """

    latitude_deg: float
    longitude_deg: float
    elevation_m: float = 0.0
    linke_turbidity: float | tuple = 3.0
    pressure_pa: float | None = None  # default: standard atmosphere at elevation

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ConfigError(f"latitude {self.latitude_deg} out of [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ConfigError(f"longitude {self.longitude_deg} out of [-180, 180]")
        tl = self.linke_turbidity
        if isinstance(tl, (list, tuple)):
            if len(tl) != 12:
                raise ConfigError("monthly linke_turbidity needs 12 values")
            object.__setattr__(
                self, "linke_turbidity", tuple(float(v) for v in tl)
            )
            if min(self.linke_turbidity) <= 0:
                raise ConfigError("linke_turbidity must be positive")
        elif tl <= 0:
            raise ConfigError("linke_turbidity must be positive")

    def turbidity_at(self, timestamps: np.ndarray):
        """Turbidity per sample: the scalar, or each instant's month value."""
        if not isinstance(self.linke_turbidity, tuple):
            return self.linke_turbidity
        months = (
            np.asarray(timestamps, dtype=np.int64)
            .astype("datetime64[s]")
            .astype("datetime64[M]")
            .astype(np.int64)
            % 12
        )
        return np.asarray(self.linke_turbidity)[months]

    @property
    def surface_pressure_pa(self) -> float:
        if self.pressure_pa is not None:
            return self.pressure_pa
        # International Standard Atmosphere barometric profile.
        return STANDARD_PRESSURE_PA * (1.0 - 2.25577e-5 * self.elevation_m) ** 5.25588


@dataclass
class SolarPosition:
    """Per-instant geometry, all arrays aligned with the input timestamps."""

    zenith_deg: np.ndarray
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    declination_deg: np.ndarray
    hour_angle_deg: np.ndarray
    equation_of_time_min: np.ndarray


@dataclass
class SunEvents:
    """Rise/set/transit instants for one UTC calendar date at a site.

    ``sunrise_s``/``sunset_s`` are epoch seconds, or None during polar
    day or polar night (exactly one of the flags is set in that case).
    ``solar_noon_s`` (the transit instant) is always defined.
    """

    sunrise_s: int | None
    sunset_s: int | None
    solar_noon_s: int = 0
    polar_day: bool = False
    polar_night: bool = False

    @property
    def daylight_s(self) -> int:
        if self.polar_day:
            return 86400
        if self.polar_night or self.sunrise_s is None or self.sunset_s is None:
            return 0
        return self.sunset_s - self.sunrise_s


@dataclass
class ClearSkyIrradiance:
    """Modeled cloud-free irradiance components, W/m^2."""

    ghi: np.ndarray
    dni: np.ndarray
    dhi: np.ndarray


def _fractional_year(timestamps: np.ndarray) -> np.ndarray:
    """NOAA fractional year (radians), leap-year aware."""
    ts = np.asarray(timestamps, dtype=np.int64)
    days = ts // 86400
    dt_day = days.astype("datetime64[D]")
    year_start = dt_day.astype("datetime64[Y]")
    doy = (dt_day - year_start.astype("datetime64[D]")).astype(np.int64) + 1
    year = year_start.astype(np.int64) + 1970
    leap = (year % 4 == 0) & ((year % 100 != 0) | (year % 400 == 0))
    days_in_year = np.where(leap, 366.0, 365.0)
    frac_hour = (ts % 86400).astype(np.float64) / 3600.0
    return 2.0 * np.pi / days_in_year * (doy - 1 + (frac_hour - 12.0) / 24.0)


def _equation_of_time_min(gamma: np.ndarray) -> np.ndarray:
    return 229.18 * (
        0.000075
        + 0.001868 * np.cos(gamma)
        - 0.032077 * np.sin(gamma)
        - 0.014615 * np.cos(2 * gamma)
        - 0.040849 * np.sin(2 * gamma)
    )


def _declination_rad(gamma: np.ndarray) -> np.ndarray:
    return (
        0.006918
        - 0.399912 * np.cos(gamma)
        + 0.070257 * np.sin(gamma)
        - 0.006758 * np.cos(2 * gamma)
        + 0.000907 * np.sin(2 * gamma)
        - 0.002697 * np.cos(3 * gamma)
        + 0.00148 * np.sin(3 * gamma)
    )


def solar_position(timestamps: np.ndarray, site: SiteConfig) -> SolarPosition:
    """Vectorized sun position for UTC instants at a fixed site."""
    ts = np.asarray(timestamps, dtype=np.int64)
    gamma = _fractional_year(ts)
    eqtime = _equation_of_time_min(gamma)
    decl = _declination_rad(gamma)

    minutes_of_day = (ts % 86400).astype(np.float64) / 60.0
    true_solar_min = minutes_of_day + eqtime + 4.0 * site.longitude_deg
    ha_deg = true_solar_min / 4.0 - 180.0
    # Wrap to (-180, 180] so morning/afternoon tests behave near midnight.
    ha_deg = (ha_deg + 180.0) % 360.0 - 180.0
    ha = ha_deg * _DEG

    lat = site.latitude_deg * _DEG
    cos_zen = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(ha)
    cos_zen = np.clip(cos_zen, -1.0, 1.0)
    zen = np.arccos(cos_zen)
    sin_zen = np.sin(zen)

    with np.errstate(divide="ignore", invalid="ignore"):
        cos_az = (np.sin(decl) - np.sin(lat) * cos_zen) / (np.cos(lat) * sin_zen)
    cos_az = np.clip(cos_az, -1.0, 1.0)
    az = np.degrees(np.arccos(cos_az))
    az = np.where(ha_deg > 0, 360.0 - az, az)
    # Sun at the zenith or pole: azimuth undefined, pick due south.
    az = np.where(np.isfinite(az), az, 180.0)

    return SolarPosition(
        zenith_deg=np.degrees(zen),
        azimuth_deg=az,
        elevation_deg=90.0 - np.degrees(zen),
        declination_deg=np.degrees(decl),
        hour_angle_deg=ha_deg,
        equation_of_time_min=eqtime,
    )


def _rise_set_cos_ha(decl_rad: float, lat_rad: float) -> float:
    return float(
        np.cos(RISE_SET_ZENITH_DEG * _DEG) / (np.cos(lat_rad) * np.cos(decl_rad))
        - np.tan(lat_rad) * np.tan(decl_rad)
    )


def sun_events(day: Date, site: SiteConfig) -> SunEvents:
    """Sunrise and sunset (UTC) for one calendar date.

    Solved from the hour-angle equation at zenith 90.833 degrees, with one
    refinement pass that re-evaluates declination and the equation of time
    at the first-guess event instants.
    """
    midnight = int(
        np.datetime64(day.isoformat(), "s").astype("datetime64[s]").astype(np.int64)
    )
    lat = site.latitude_deg * _DEG

    def solve(frac_hour_guess: float, rising: bool) -> tuple[float | None, bool, bool]:
        gamma = _fractional_year(
            np.array([midnight + int(frac_hour_guess * 3600)], dtype=np.int64)
        )
        eqtime = float(_equation_of_time_min(gamma)[0])
        decl = float(_declination_rad(gamma)[0])
        cos_ha = _rise_set_cos_ha(decl, lat)
        if cos_ha > 1.0:
            return None, False, True  # never rises
        if cos_ha < -1.0:
            return None, True, False  # never sets
        ha_deg = float(np.degrees(np.arccos(cos_ha)))
        sign = 1.0 if rising else -1.0
        minutes = 720.0 - 4.0 * (site.longitude_deg + sign * ha_deg) - eqtime
        return minutes, False, False

    def transit_minutes(frac_hour_guess: float) -> float:
        gamma = _fractional_year(
            np.array([midnight + int(frac_hour_guess * 3600)], dtype=np.int64)
        )
        eqtime = float(_equation_of_time_min(gamma)[0])
        return 720.0 - 4.0 * site.longitude_deg - eqtime

    # First pass at local solar noon, refinement at the estimated events.
    noon_guess = 12.0 - site.longitude_deg / 15.0
    noon_min = transit_minutes(transit_minutes(noon_guess) / 60.0)
    noon_s = midnight + int(round(noon_min * 60.0))
    sr, pd1, pn1 = solve(noon_guess, rising=True)
    ss, _, _ = solve(noon_guess, rising=False)
    if pd1 or pn1:
        return SunEvents(None, None, noon_s, polar_day=pd1, polar_night=pn1)
    sr, pd2, pn2 = solve(sr / 60.0, rising=True)
    ss, pd3, pn3 = solve(ss / 60.0, rising=False)
    if pd2 or pn2 or pd3 or pn3:
        return SunEvents(
            None, None, noon_s, polar_day=pd2 or pd3, polar_night=pn2 or pn3
        )
    return SunEvents(
        sunrise_s=midnight + int(round(sr * 60.0)),
        sunset_s=midnight + int(round(ss * 60.0)),
        solar_noon_s=noon_s,
    )


def airmass_kasten_young(elevation_deg: np.ndarray) -> np.ndarray:
    """Relative optical airmass; elevation clipped to the horizon."""
    e = np.clip(np.asarray(elevation_deg, dtype=np.float64), 0.0, 90.0)
    return 1.0 / (np.sin(e * _DEG) + 0.50572 * (e + 6.07995) ** -1.6364)


def extraterrestrial_irradiance(timestamps: np.ndarray) -> np.ndarray:
    """Normal-incidence top-of-atmosphere irradiance, W/m^2 (Spencer fit)."""
    gamma = _fractional_year(np.asarray(timestamps, dtype=np.int64))
    e0 = (
        1.00011
        + 0.034221 * np.cos(gamma)
        + 0.00128 * np.sin(gamma)
        + 0.000719 * np.cos(2 * gamma)
        + 0.000077 * np.sin(2 * gamma)
    )
    return SOLAR_CONSTANT_WM2 * e0


def ineichen_clear_sky(
    cos_zenith: np.ndarray,
    airmass_absolute: np.ndarray,
    elevation_m: float,
    linke_turbidity,
    dni_extra: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ineichen/Perez clear-sky components for daylight samples.

    Inputs must already be restricted to cos_zenith > 0; the caller zeroes
    night samples. ``linke_turbidity`` is a scalar or a per-sample array.
    Returns (ghi, dni, dhi); dhi is the closure residual
    dhi = ghi - dni * cos_zenith, so the component identity holds exactly.
    """
    tl = linke_turbidity
    fh1 = np.exp(-elevation_m / 8000.0)
    fh2 = np.exp(-elevation_m / 1250.0)
    cg1 = 5.09e-5 * elevation_m + 0.868
    cg2 = 3.92e-5 * elevation_m + 0.0387

    ghi = (
        cg1
        * dni_extra
        * cos_zenith
        * np.exp(-cg2 * airmass_absolute * (fh1 + fh2 * (tl - 1.0)))
    )
    ghi = np.maximum(ghi, 0.0)

    b = 0.664 + 0.163 / fh1
    bnci = dni_extra * np.maximum(
        b * np.exp(-0.09 * airmass_absolute * (tl - 1.0)), 0.0
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        bnci2 = (
            ghi
            * (1.0 - (0.1 - 0.2 * np.exp(-tl)) / (0.1 + 0.882 / fh1))
            / cos_zenith
        )
    bnci2 = np.where(np.isfinite(bnci2), np.maximum(bnci2, 0.0), 0.0)
    dni = np.minimum(bnci, bnci2)
    dhi = ghi - dni * cos_zenith
    return ghi, dni, dhi


def clear_sky(timestamps: np.ndarray, site: SiteConfig) -> ClearSkyIrradiance:
    """Cloud-free GHI/DNI/DHI for UTC instants; zero below the horizon."""
    ts = np.asarray(timestamps, dtype=np.int64)
    pos = solar_position(ts, site)
    cos_zen = np.cos(pos.zenith_deg * _DEG)
    day = cos_zen > 0.0

    ghi = np.zeros(len(ts))
    dni = np.zeros(len(ts))
    dhi = np.zeros(len(ts))
    if day.any():
        am = airmass_kasten_young(pos.elevation_deg[day])
        am_abs = am * (site.surface_pressure_pa / STANDARD_PRESSURE_PA)
        i0 = extraterrestrial_irradiance(ts[day])
        g, dn, dh = ineichen_clear_sky(
            cos_zen[day], am_abs, site.elevation_m, site.turbidity_at(ts[day]), i0
        )
        ghi[day] = g
        dni[day] = dn
        dhi[day] = dh
    return ClearSkyIrradiance(ghi=ghi, dni=dni, dhi=dhi)


def add_solar_columns(table: TimeSeriesTable, site: SiteConfig) -> TimeSeriesTable:
    """Append geometry and clear-sky columns to a station table.

    Adds ``zenith_deg``, ``azimuth_deg``, ``elevation_deg``,
    ``hour_angle_deg``, ``ghi_cs``, ``dni_cs``, ``dhi_cs``, and
    ``eclipse_shading`` (the unobstructed fraction of the solar disc; no
    eclipse model is included, so it is constant 1). These are
    deterministic functions of the grid, never NaN, so they do not create
    data gaps.
    """
    pos = solar_position(table.timestamps, site)
    cs = clear_sky(table.timestamps, site)
    return table.with_columns(
        {
            "zenith_deg": pos.zenith_deg,
            "azimuth_deg": pos.azimuth_deg,
            "elevation_deg": pos.elevation_deg,
            "hour_angle_deg": pos.hour_angle_deg,
            "ghi_cs": cs.ghi,
            "dni_cs": cs.dni,
            "dhi_cs": cs.dhi,
            "eclipse_shading": np.ones(len(table)),
        }
    )
