"""Forecast target representations and the scaled-persistence baseline.

The model can be trained to predict future irradiance in five
interchangeable encodings: raw GHI, clear-sky index, deviation below the
clear-sky curve, change from the issue-time GHI, or change from the
issue-time clear-sky index. Every encoding decodes back to GHI through a
:class:`DecodeContext`, so metrics always compare in W/m^2 regardless of
what the network was fitted on.

The baseline forecast holds the issue-time clear-sky index constant and
rescales it by the clear-sky curve at each horizon. By construction, a
model that predicts all-zero change-in-index decodes to exactly that
baseline, which pins the semantics of the delta encodings.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError

__all__ = [
    "TargetRepresentation",
    "DecodeContext",
    "clear_sky_index",
    "persistence_forecast",
    "encode_target",
    "decode_to_ghi",
]

# Guards for the issue-time clear-sky index: below this clear-sky level
# the ratio is numerically meaningless, and cloud-enhancement spikes are
# capped so one lensing event cannot dominate a long horizon.
CSI_CLEAR_SKY_FLOOR_WM2 = 10.0
CSI_CLAMP_MAX = 2.0


class TargetRepresentation(str, Enum):
    """What the network predicts; all decode back to GHI in W/m^2."""

    GHI = "ghi"              # future GHI directly
    CSI = "csi"              # future GHI / future clear-sky GHI
    CS_DEV = "cs_dev"        # future clear-sky GHI - future GHI
    DELTA_GHI = "delta_ghi"  # future GHI - issue-time GHI
    DELTA_CSI = "delta_csi"  # future index - guarded issue-time index


def clear_sky_index(
    ghi: np.ndarray,
    ghi_clear: np.ndarray,
    floor_wm2: float = CSI_CLEAR_SKY_FLOOR_WM2,
    clamp_max: float = CSI_CLAMP_MAX,
) -> np.ndarray:
    """Guarded ratio of measured to modeled clear-sky GHI.

    The denominator is floored so twilight samples cannot explode, and
    the result is clamped to [0, clamp_max].
    """
    ratio = np.asarray(ghi, dtype=np.float64) / np.maximum(
        np.asarray(ghi_clear, dtype=np.float64), floor_wm2
    )
    return np.clip(ratio, 0.0, clamp_max)


@dataclass
class DecodeContext:
    """Issue-time state needed to map any encoding back to GHI.

    Arrays are aligned per window: ``ghi_t0`` and ``ghi_cs_t0`` have shape
    (B,), ``ghi_cs_h`` has shape (B, n_horizons) and holds the clear-sky
    GHI at each forecast horizon.
    """

    ghi_t0: np.ndarray
    ghi_cs_t0: np.ndarray
    ghi_cs_h: np.ndarray

    def __post_init__(self) -> None:
        self.ghi_t0 = np.asarray(self.ghi_t0, dtype=np.float64)
        self.ghi_cs_t0 = np.asarray(self.ghi_cs_t0, dtype=np.float64)
        self.ghi_cs_h = np.asarray(self.ghi_cs_h, dtype=np.float64)
        if self.ghi_t0.ndim != 1 or self.ghi_cs_t0.shape != self.ghi_t0.shape:
            raise ConfigError("ghi_t0 and ghi_cs_t0 must be matching 1-d arrays")
        if self.ghi_cs_h.ndim != 2 or self.ghi_cs_h.shape[0] != self.ghi_t0.shape[0]:
            raise ConfigError("ghi_cs_h must have shape (len(ghi_t0), n_horizons)")

    @property
    def csi_t0(self) -> np.ndarray:
        """Guarded issue-time clear-sky index, shape (B,)."""
        return clear_sky_index(self.ghi_t0, self.ghi_cs_t0)


def persistence_forecast(ctx: DecodeContext) -> np.ndarray:
    """Hold the issue-time index constant, rescale by clear sky per horizon."""
    return ctx.csi_t0[:, None] * ctx.ghi_cs_h


def encode_target(
    representation: TargetRepresentation, ghi_future: np.ndarray, ctx: DecodeContext
) -> np.ndarray:
    """Map true future GHI (B, n_horizons) into the training encoding.

    The future-index encodings use the raw ratio (the window builder only
    admits daylight samples, where clear-sky GHI is well above the guard
    floor) so encode/decode is an exact bijection; only the issue-time
    index inside the delta encoding is guarded.
    """
    rep = TargetRepresentation(representation)
    ghi_future = np.asarray(ghi_future, dtype=np.float64)
    if ghi_future.shape != ctx.ghi_cs_h.shape:
        raise ConfigError(
            f"ghi_future shape {ghi_future.shape} != horizons shape {ctx.ghi_cs_h.shape}"
        )
    if rep is TargetRepresentation.GHI:
        return ghi_future.copy()
    if rep is TargetRepresentation.CSI:
        return ghi_future / ctx.ghi_cs_h
    if rep is TargetRepresentation.CS_DEV:
        return ctx.ghi_cs_h - ghi_future
    if rep is TargetRepresentation.DELTA_GHI:
        return ghi_future - ctx.ghi_t0[:, None]
    if rep is TargetRepresentation.DELTA_CSI:
        return ghi_future / ctx.ghi_cs_h - ctx.csi_t0[:, None]
    raise ConfigError(f"unhandled representation {rep!r}")


def decode_to_ghi(
    representation: TargetRepresentation, y: np.ndarray, ctx: DecodeContext
) -> np.ndarray:
    """Map a prediction in the training encoding back to GHI, floored at 0.

    The floor only binds when a model predicts unphysical negative
    irradiance; true targets always round-trip exactly.
    """
    rep = TargetRepresentation(representation)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != ctx.ghi_cs_h.shape:
        raise ConfigError(
            f"prediction shape {y.shape} != horizons shape {ctx.ghi_cs_h.shape}"
        )
    if rep is TargetRepresentation.GHI:
        ghi = y
    elif rep is TargetRepresentation.CSI:
        ghi = y * ctx.ghi_cs_h
    elif rep is TargetRepresentation.CS_DEV:
        ghi = ctx.ghi_cs_h - y
    elif rep is TargetRepresentation.DELTA_GHI:
        ghi = y + ctx.ghi_t0[:, None]
    elif rep is TargetRepresentation.DELTA_CSI:
        ghi = (y + ctx.csi_t0[:, None]) * ctx.ghi_cs_h
    else:
        raise ConfigError(f"unhandled representation {rep!r}")
    return np.maximum(ghi, 0.0)
