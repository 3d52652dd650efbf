"""Per-band contrast stretching between low/high quantiles.

Each band is mapped linearly so that its low quantile lands on ``v_min`` and
its high quantile on ``v_max``, with values outside that quantile window
clamped to the bounds. Quantiles use linear interpolation between the two
closest order statistics over valid pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .cube import RasterCube
from .errors import ComputeError, DataError


@dataclass(frozen=True)
class StretchParams:
    """Target range and quantile fractions for a band stretch."""

    v_min: float = 0.0
    v_max: float = 1.0
    q_low_fraction: float = 0.01
    q_high_fraction: float = 0.99

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise DataError(f"v_min ({self.v_min}) must be < v_max ({self.v_max})")
        if not 0.0 <= self.q_low_fraction < self.q_high_fraction <= 1.0:
            raise DataError(
                "quantile fractions must satisfy 0 <= low < high <= 1, got "
                f"({self.q_low_fraction}, {self.q_high_fraction})"
            )


def band_quantiles(
    plane: NDArray[np.floating],
    validity: NDArray[np.bool_] | None = None,
    fractions: tuple[float, float] = (0.01, 0.99),
) -> tuple[float, float]:
    """Low/high quantiles of a band plane over its valid pixels.

    Linear interpolation between closest order statistics (the common
    "type 7" convention).
    """
    low_f, high_f = fractions
    if not 0.0 <= low_f <= high_f <= 1.0:
        raise DataError(f"fractions must satisfy 0 <= low <= high <= 1, got {fractions}")
    plane = np.asarray(plane)
    values = plane[validity] if validity is not None else plane.ravel()
    if values.size == 0:
        raise ComputeError("no valid pixels to take quantiles over")
    q_low, q_high = np.quantile(values.astype(np.float64), [low_f, high_f], method="linear")
    return float(q_low), float(q_high)


def stretch_band(
    plane: NDArray[np.floating],
    params: StretchParams,
    q_low: float,
    q_high: float,
) -> NDArray[np.float64]:
    """Linearly map [q_low, q_high] onto [v_min, v_max], clamping outside.

    The endpoints map exactly: every pixel at or below ``q_low`` becomes
    ``v_min`` and every pixel at or above ``q_high`` becomes ``v_max``.
    A degenerate band (``q_high == q_low``) maps entirely to ``v_min``.
    """
    if q_high < q_low:
        raise ComputeError(f"q_high ({q_high}) below q_low ({q_low})")
    p = np.asarray(plane, dtype=np.float64)
    if q_high == q_low:
        return np.full(p.shape, params.v_min, dtype=np.float64)
    scale = (params.v_max - params.v_min) / (q_high - q_low)
    out = params.v_min + scale * (p - q_low)
    np.clip(out, params.v_min, params.v_max, out=out)
    out[p <= q_low] = params.v_min
    out[p >= q_high] = params.v_max
    return out


def stretch_cube(cube: RasterCube, params: StretchParams) -> RasterCube:
    """Stretch every band independently with its own quantiles.

    Band metadata is preserved. If the input declares nodata, invalid pixels
    are written as ``v_min - 1`` (guaranteed outside the stretched range) and
    the output declares that value as its nodata.
    """
    fractions = (params.q_low_fraction, params.q_high_fraction)
    out = np.empty_like(cube.data)
    lo32 = np.float32(params.v_min)
    hi32 = np.float32(params.v_max)
    for i in range(cube.bands):
        q_low, q_high = band_quantiles(cube.plane(i), cube.validity, fractions)
        stretched = stretch_band(cube.plane(i), params, q_low, q_high)
        out[i] = np.clip(stretched.astype(np.float32), lo32, hi32)
    nodata = None
    if cube.nodata is not None:
        nodata = params.v_min - 1.0
        if cube.validity is not None:
            out[:, ~cube.validity] = np.float32(nodata)
    return RasterCube(data=out, band_meta=list(cube.band_meta), nodata=nodata)
