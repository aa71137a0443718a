"""
Minimum-barrier-distance saliency and the per-edge saliency weights.

The barrier of a path is max - min of the intensities along it. Distances are
taken from the footprint border and approximated with alternating
raster / anti-raster sweeps; the per-pixel saliency is the channel sum of the
distances, min-max normalized over the footprint.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .energy import OverlapRegion, dilate4
from .imgcore import ImageBuffer

DEFAULT_PASSES = 3


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Canvas raster of saliency in [0, 1], meaningful where ``support`` is set."""

    values: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.size and (v.min() < 0.0 or v.max() > 1.0 or not np.all(np.isfinite(v))):
            raise ValueError("saliency values must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class WeightField:
    """One weight per edge of the overlap region, in edge order."""

    values: np.ndarray


def seed_mask(mask: np.ndarray) -> np.ndarray:
    """Footprint pixels on the canvas edge or 4-adjacent to a pixel outside the footprint."""
    mask = np.asarray(mask, dtype=bool)
    outside = np.pad(~mask, 1, constant_values=True)
    touches = dilate4(outside)[1:-1, 1:-1]
    return mask & touches


@numba.njit(cache=True, nogil=True)
def _relax(dist, upper, lower, plane, y, x, ny, nx):
    v = plane[y, x]
    hi = max(upper[ny, nx], v)
    lo = min(lower[ny, nx], v)
    if hi - lo < dist[y, x]:
        dist[y, x] = hi - lo
        upper[y, x] = hi
        lower[y, x] = lo


@numba.njit(cache=True, nogil=True)
def _mbd_sweeps(plane, mask, seeds, passes):
    h, w = plane.shape
    dist = np.full((h, w), np.inf)
    upper = plane.copy()
    lower = plane.copy()
    for y in range(h):
        for x in range(w):
            if seeds[y, x]:
                dist[y, x] = 0.0
    for it in range(passes):
        if it % 2 == 0:
            for y in range(h):
                for x in range(w):
                    if not mask[y, x]:
                        continue
                    if y > 0 and mask[y - 1, x]:
                        _relax(dist, upper, lower, plane, y, x, y - 1, x)
                    if x > 0 and mask[y, x - 1]:
                        _relax(dist, upper, lower, plane, y, x, y, x - 1)
        else:
            for y in range(h - 1, -1, -1):
                for x in range(w - 1, -1, -1):
                    if not mask[y, x]:
                        continue
                    if y < h - 1 and mask[y + 1, x]:
                        _relax(dist, upper, lower, plane, y, x, y + 1, x)
                    if x < w - 1 and mask[y, x + 1]:
                        _relax(dist, upper, lower, plane, y, x, y, x + 1)
    return dist


def barrier_distance(plane: np.ndarray, mask: np.ndarray | None = None, passes: int = DEFAULT_PASSES) -> np.ndarray:
    """Approximate minimum barrier distance of one channel from the footprint border.

    Pixels outside the mask get 0. A single forward sweep already reaches
    every mask pixel (each non-seed pixel has an in-mask upper neighbor), so
    the result is finite for any ``passes``.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    plane = np.ascontiguousarray(plane, dtype=np.float64)
    mask = np.ones(plane.shape, dtype=bool) if mask is None else np.ascontiguousarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("saliency needs a nonempty mask")
    dist = _mbd_sweeps(plane, mask, seed_mask(mask), passes)
    dist[~mask] = 0.0
    return dist


def _normalize(raw: np.ndarray, support: np.ndarray) -> np.ndarray:
    out = np.zeros(raw.shape)
    lo, hi = raw[support].min(), raw[support].max()
    if hi > lo:
        out[support] = (raw[support] - lo) / (hi - lo)
    return out


def mbd_saliency(img: ImageBuffer, mask: np.ndarray | None = None, passes: int = DEFAULT_PASSES) -> SaliencyMap:
    mask = img.valid() if mask is None else np.asarray(mask, dtype=bool)
    raw = sum(barrier_distance(img.pixels[:, :, c], mask, passes) for c in range(3))
    return SaliencyMap(_normalize(raw, mask), mask)


def average_saliency(pair, region: OverlapRegion, passes: int = DEFAULT_PASSES, workers: int = 1) -> SaliencyMap:
    """Mean of both images' saliency on P, renormalized to [0, 1] over P.

    Each image's saliency is computed over its whole footprint so the seeds
    follow image content, not the overlap window.
    """
    jobs = [(pair.img0, pair.mask0), (pair.img1, pair.mask1)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            sal0, sal1 = pool.map(lambda job: mbd_saliency(job[0], job[1], passes), jobs)
    else:
        sal0, sal1 = (mbd_saliency(im, m, passes) for im, m in jobs)
    mean = 0.5 * (sal0.values + sal1.values)
    return SaliencyMap(_normalize(np.where(region.mask, mean, 0.0), region.mask), region.mask)


def weight_field(omega: SaliencyMap, region: OverlapRegion) -> WeightField:
    """1 + mean saliency of the two endpoints; 0 if either endpoint is on the canvas border."""
    vals = omega.values[region.rows, region.cols]
    p, q = region.edges[:, 0], region.edges[:, 1]
    w = 1.0 + 0.5 * (vals[p] + vals[q])
    w[region.canvas_border[p] | region.canvas_border[q]] = 0.0
    return WeightField(w)
