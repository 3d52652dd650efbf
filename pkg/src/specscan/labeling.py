"""Automated label generation.

Water labeling uses the normalized difference water index over the green and
NIR bands; cloud/haze labeling uses the haze optimized transform against a
clear-sky line fitted from the scene's darkest blue pixels; thermal labeling
uses fixed band thresholds. Continuous products are binarized either at a
fixed threshold or at one chosen by Otsu's method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .cube import BinaryMask, RasterCube, ScoreMap
from .errors import ComputeError, ConfigError, DataError

HOT_MODES = ("as_written", "point_line_distance")
POLARITIES = ("above", "below")

CLEAR_SKY_SUBSET_FRACTION = 0.0015
CLEAR_SKY_BIN_COUNT = 20
CLEAR_SKY_POINTS_PER_BIN = 20


@dataclass(frozen=True)
class ClearSkyLine:
    """Linear red-vs-blue relationship fitted to presumed clear pixels."""

    slope: float
    intercept: float
    n_fit_points: int
    fit_residual_rms: float

    def __post_init__(self):
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise DataError("clear-sky line parameters must be finite")
        if self.n_fit_points < 2:
            raise DataError("clear-sky line needs at least 2 fit points")


@dataclass(frozen=True)
class OtsuResult:
    """Threshold maximizing inter-class variance over a score histogram."""

    threshold: float
    inter_class_variance: float
    histogram_bins: int
    degenerate: bool = False


def ndwi(cube: RasterCube) -> ScoreMap:
    """(green - nir) / (green + nir) per pixel.

    Pixels with green + nir == 0 score 0 by convention and are flagged.
    Scores are clipped into [-1, 1].
    """
    green = cube.plane("green").astype(np.float64)
    nir = cube.plane("nir").astype(np.float64)
    total = green + nir
    zero = total == 0.0
    scores = np.where(zero, 0.0, (green - nir) / np.where(zero, 1.0, total))
    np.clip(scores, -1.0, 1.0, out=scores)
    return ScoreMap(data=scores, score_kind="NDWI", flags=zero if zero.any() else None)


def fit_clear_sky_line(cube: RasterCube) -> ClearSkyLine:
    """Fit the clear-sky red = slope * blue + intercept line.

    Procedure: take the 0.15% of valid pixels with the smallest blue value
    (at least 2), split them into 20 equal-width bins over the subset's blue
    range, keep the 20 highest-red points of each bin, and fit red on blue
    by ordinary least squares over the retained points. Ties in blue or red
    are broken by lower linear pixel index, so identical scenes yield
    bit-identical fits.
    """
    blue = cube.plane("blue").astype(np.float64).ravel()
    red = cube.plane("red").astype(np.float64).ravel()
    if cube.validity is not None:
        valid_idx = np.flatnonzero(cube.validity.ravel())
    else:
        valid_idx = np.arange(blue.size)
    n_valid = valid_idx.size
    if n_valid < 2:
        raise ComputeError(f"clear-sky fit needs at least 2 valid pixels, have {n_valid}")

    subset_count = max(2, int(CLEAR_SKY_SUBSET_FRACTION * n_valid))
    order = np.argsort(blue[valid_idx], kind="stable")
    subset = valid_idx[order[:subset_count]]
    blue_sub = blue[subset]

    lo = float(blue_sub.min())
    hi = float(blue_sub.max())
    if hi == lo:
        raise ComputeError("all selected blue values identical; clear-sky line is vertical")
    width = (hi - lo) / CLEAR_SKY_BIN_COUNT
    bins = np.floor((blue_sub - lo) / width).astype(np.int64)
    np.clip(bins, 0, CLEAR_SKY_BIN_COUNT - 1, out=bins)

    retained: list[np.ndarray] = []
    for b in range(CLEAR_SKY_BIN_COUNT):
        members = subset[bins == b]
        if members.size == 0:
            continue
        # primary key: red descending; secondary: pixel index ascending
        ranking = np.lexsort((members, -red[members]))
        retained.append(members[ranking[:CLEAR_SKY_POINTS_PER_BIN]])
    points = np.concatenate(retained)
    if points.size < 2:
        raise ComputeError("fewer than 2 points retained for the clear-sky fit")

    x = blue[points]
    y = red[points]
    x_mean = x.mean()
    y_mean = y.mean()
    xc = x - x_mean
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise ComputeError("all retained blue values identical; clear-sky line is vertical")
    slope = float(np.dot(xc, y - y_mean) / denom)
    intercept = float(y_mean - slope * x_mean)
    residuals = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(residuals * residuals)))
    return ClearSkyLine(slope=slope, intercept=intercept, n_fit_points=int(points.size), fit_residual_rms=rms)


def hot(cube: RasterCube, line: ClearSkyLine, mode: str = "as_written") -> ScoreMap:
    """Haze optimized transform of the blue and red planes against `line`.

    ``as_written`` scores |slope*blue - red| + intercept/sqrt(1 + slope^2).
    ``point_line_distance`` scores |slope*blue - red + intercept| /
    sqrt(1 + slope^2), the textbook distance from the pixel to the line.
    """
    if mode not in HOT_MODES:
        raise ConfigError(f"unknown HOT mode {mode!r}; expected one of {HOT_MODES}")
    blue = cube.plane("blue").astype(np.float64)
    red = cube.plane("red").astype(np.float64)
    norm = math.sqrt(1.0 + line.slope * line.slope)
    if mode == "as_written":
        scores = np.abs(line.slope * blue - red) + line.intercept / norm
    else:
        scores = np.abs(line.slope * blue - red + line.intercept) / norm
    return ScoreMap(data=scores, score_kind="HOT")


def otsu_threshold(scores: ScoreMap | NDArray[np.floating], bins: int = 256) -> OtsuResult:
    """Histogram threshold maximizing inter-class variance.

    Builds `bins` equal-width bins over the observed score range and returns
    the lower edge of the best split bin; ties pick the lowest edge. Class
    means use the actual score values falling in each bin, so the result
    matches an exhaustive search over all bin edges. A constant input is
    degenerate: the threshold is that value.
    """
    if bins < 2:
        raise DataError(f"otsu needs at least 2 bins, got {bins}")
    values = scores.data if isinstance(scores, ScoreMap) else np.asarray(scores)
    values = values.astype(np.float64).ravel()
    if values.size == 0:
        raise ComputeError("otsu needs at least one score")
    if not np.isfinite(values).all():
        raise DataError("otsu input contains non-finite scores")
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        return OtsuResult(threshold=lo, inter_class_variance=0.0, histogram_bins=bins, degenerate=True)

    edges = np.linspace(lo, hi, bins + 1)
    idx = np.searchsorted(edges, values, side="right") - 1
    np.clip(idx, 0, bins - 1, out=idx)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    sums = np.bincount(idx, weights=values, minlength=bins)

    n_total = float(values.size)
    sum_total = float(values.sum())
    n0 = np.cumsum(counts)[:-1]          # class sizes left of edges 1..bins-1
    s0 = np.cumsum(sums)[:-1]
    n1 = n_total - n0
    s1 = sum_total - s0
    valid = (n0 > 0) & (n1 > 0)
    mean0 = np.divide(s0, n0, out=np.zeros_like(s0), where=valid)
    mean1 = np.divide(s1, n1, out=np.zeros_like(s1), where=valid)
    variance = np.where(valid, (n0 * n1) / (n_total * n_total) * (mean0 - mean1) ** 2, 0.0)

    best = int(np.argmax(variance))      # first maximum: lowest edge wins ties
    return OtsuResult(
        threshold=float(edges[best + 1]),
        inter_class_variance=float(variance[best]),
        histogram_bins=bins,
        degenerate=False,
    )


def binarize(
    scores: ScoreMap | NDArray[np.floating],
    threshold: float,
    polarity: str = "above",
) -> BinaryMask:
    """Label pixels strictly beyond `threshold` as 1.

    ``above`` labels scores > threshold; ``below`` labels scores < threshold.
    The comparison is strict so a threshold sitting on a constant background
    never labels that background.
    """
    if polarity not in POLARITIES:
        raise ConfigError(f"unknown polarity {polarity!r}; expected one of {POLARITIES}")
    values = scores.data if isinstance(scores, ScoreMap) else np.asarray(scores)
    if polarity == "above":
        labels = values > threshold
    else:
        labels = values < threshold
    return BinaryMask(data=labels.astype(np.uint8))


def band_threshold_label(
    cube: RasterCube,
    band: int | str,
    low: float | None = None,
    high: float | None = None,
) -> BinaryMask:
    """Label pixels whose band value lies within [low, high], bounds inclusive.

    A missing bound leaves that side unbounded; at least one bound is
    required.
    """
    if low is None and high is None:
        raise ConfigError("band threshold needs at least one of low/high")
    if low is not None and high is not None and low > high:
        raise ConfigError(f"low ({low}) exceeds high ({high})")
    plane = cube.plane(band).astype(np.float64)
    labels = np.ones(plane.shape, dtype=bool)
    if low is not None:
        labels &= plane >= low
    if high is not None:
        labels &= plane <= high
    return BinaryMask(data=labels.astype(np.uint8))
