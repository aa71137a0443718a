"""
Color-difference fields over the overlap and their perceptual remapping.

The Euclidean field lives in raw RGB distance units, [0, sqrt(3)] for colors
in [0, 1]. The threshold is picked by Otsu's method on a histogram with fixed
bin width spanning that full range, and the sigmoid steepness is the inverse
bin width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .energy import OverlapRegion
from .errors import DegenerateHistogramError
from .warp import AlignedPair

EUCLIDEAN_MAX = math.sqrt(3.0)
DEFAULT_EPSILON = 0.06


@dataclass(frozen=True, eq=False)
class DiffField:
    """Per-pixel difference values over P, in region order."""

    values: np.ndarray
    metric: str
    domain_max: float

    def __post_init__(self):
        if self.metric not in ("euclidean", "sigmoid"):
            raise ValueError(f"unknown metric {self.metric!r}")
        v = np.array(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def to_raster(self, region: OverlapRegion, fill: float = 0.0) -> np.ndarray:
        out = np.full(region.shape, fill, dtype=np.float64)
        out[region.rows, region.cols] = self.values
        return out


@dataclass(frozen=True)
class SigmoidParams:
    tau: float
    kappa: float
    epsilon: float


def euclidean_diff(pair: AlignedPair, region: OverlapRegion) -> DiffField:
    d = pair.img0.pixels[region.rows, region.cols] - pair.img1.pixels[region.rows, region.cols]
    values = np.sqrt(np.einsum("ij,ij->i", d, d))
    return DiffField(np.minimum(values, EUCLIDEAN_MAX), "euclidean", EUCLIDEAN_MAX)


def bin_count(domain_max: float, epsilon: float) -> int:
    return max(1, math.ceil(domain_max / epsilon))


def histogram(field: DiffField, epsilon: float) -> np.ndarray:
    """Counts per bin of width ``epsilon`` over [0, domain_max]; the last bin may be short."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    nbins = bin_count(field.domain_max, epsilon)
    idx = np.minimum(np.floor(field.values / epsilon), nbins - 1).astype(np.int64)
    return np.bincount(np.maximum(idx, 0), minlength=nbins)


def otsu_split(counts) -> int:
    """Index t maximizing between-class variance for classes [0, t) and [t, n).

    Bins are valued at their nominal centers (i + 1/2) eps. Scores are compared
    exactly in integer arithmetic, in units where the center of bin i is 2i + 1,
    so equal variances tie exactly and the first (smallest) split wins.
    """
    counts = [int(c) for c in counts]
    if sum(1 for c in counts if c > 0) < 2:
        raise DegenerateHistogramError("difference histogram occupies fewer than two bins")
    total_n = sum(counts)
    total_s = sum(c * (2 * i + 1) for i, c in enumerate(counts))
    n0 = s0 = 0
    best_t, best_num, best_den = 1, 0, 1
    for t in range(1, len(counts)):
        n0 += counts[t - 1]
        s0 += counts[t - 1] * (2 * t - 1)
        n1, s1 = total_n - n0, total_s - s0
        if n0 == 0 or n1 == 0:
            num, den = 0, 1
        else:
            num, den = (n1 * s0 - n0 * s1) ** 2, n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(field: DiffField, epsilon: float = DEFAULT_EPSILON) -> SigmoidParams:
    """Otsu threshold on the difference histogram; tau is the winning bin edge."""
    t = otsu_split(histogram(field, epsilon))
    return SigmoidParams(tau=t * epsilon, kappa=1.0 / epsilon, epsilon=epsilon)


def sigmoid(x, tau: float, kappa: float):
    return expit(4.0 * kappa * (np.asarray(x, dtype=np.float64) - tau))


def sigmoid_remap(field: DiffField, params: SigmoidParams) -> DiffField:
    if field.metric != "euclidean":
        raise ValueError("sigmoid remapping expects a Euclidean field")
    return DiffField(sigmoid(field.values, params.tau, params.kappa), "sigmoid", 1.0)
