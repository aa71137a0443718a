"""
The binary labeling problem over the overlap.

Label 0 takes the pixel from I0, label 1 from I1. Overlap pixels that touch
the I0-only area are pinned to label 0 and those touching the I1-only area to
label 1, each by a penalty ``mu`` on the wrong label. Neighbor pairs are
4-connected and stored once, ordered row-major by their first pixel.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOverlapError, InstanceFormatError, NoOverlapError, PenaltyTooSmallError

log = logging.getLogger(__name__)

CAPACITY_SCALE = 2**20


def dilate4(mask: np.ndarray) -> np.ndarray:
    """True where at least one 4-neighbor is set."""
    out = np.zeros_like(mask)
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def canvas_border_mask(shape: tuple[int, int]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[0, :] = m[-1, :] = True
    m[:, 0] = m[:, -1] = True
    return m


@dataclass(frozen=True, eq=False)
class OverlapRegion:
    """Pixel set P on the canvas, its border classes and its 4-neighborhood.

    ``border0``/``border1`` flag pixels adjacent to the I0-only / I1-only
    area; ``canvas_border`` flags pixels on the outer canvas rectangle.
    """

    mask: np.ndarray
    index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    edges: np.ndarray
    border0: np.ndarray
    border1: np.ndarray
    canvas_border: np.ndarray

    @classmethod
    def from_masks(cls, mask, border0=None, border1=None, canvas_border=None) -> "OverlapRegion":
        """Build from raster masks; border arguments are H x W rasters (restricted to P)."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise NoOverlapError("overlap region is empty")
        rows, cols = np.nonzero(mask)
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[rows, cols] = np.arange(rows.size)

        def pick(raster):
            if raster is None:
                return np.zeros(rows.size, dtype=bool)
            return np.asarray(raster, dtype=bool)[rows, cols]

        if canvas_border is None:
            canvas_border = canvas_border_mask(mask.shape)
        b0, b1 = pick(border0), pick(border1)
        both = np.flatnonzero(b0 & b1)
        if both.size:
            i = both[0]
            raise DegenerateOverlapError(
                f"{both.size} pixel(s) are in both border classes, first at row {rows[i]}, col {cols[i]}"
            )

        # right neighbor sorts before down neighbor, so stable sort on p gives row-major order
        right = mask[:, :-1] & mask[:, 1:]
        down = mask[:-1, :] & mask[1:, :]
        rr, rc = np.nonzero(right)
        dr, dc = np.nonzero(down)
        p = np.concatenate([index[rr, rc], index[dr, dc]])
        q = np.concatenate([index[rr, rc + 1], index[dr + 1, dc]])
        order = np.lexsort((q, p))
        edges = np.stack([p[order], q[order]], axis=1) if p.size else np.zeros((0, 2), dtype=np.int64)
        region = cls(mask, index, rows, cols, edges.astype(np.int64), b0, b1, pick(canvas_border))
        for arr in (region.mask, region.index, region.rows, region.cols, region.edges,
                    region.border0, region.border1, region.canvas_border):
            arr.flags.writeable = False
        return region

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def size(self) -> int:
        return int(self.rows.size)

    def raster(self, values, fill=0):
        values = np.asarray(values)
        out = np.full(self.shape, fill, dtype=values.dtype)
        out[self.rows, self.cols] = values
        return out


def classify_borders(pair) -> OverlapRegion:
    """Overlap region of an AlignedPair with its border classes.

    Where the two footprint outlines cross (the overlap corners of any pair
    offset in both axes), a pixel can touch both one-sided areas. Such
    pixels are where the seam ends, so they are left unpinned. The overlap
    is rejected as a sliver only when unpinning them leaves a side that
    touches the overlap with no pinned pixel at all.
    """
    overlap = pair.mask0 & pair.mask1
    if not overlap.any():
        raise NoOverlapError("the two footprints do not overlap")
    only0 = pair.mask0 & ~pair.mask1
    only1 = pair.mask1 & ~pair.mask0
    border0 = overlap & dilate4(only0)
    border1 = overlap & dilate4(only1)
    both = border0 & border1
    if both.any():
        border0, border1 = border0 & ~both, border1 & ~both
        if not border0.any() or not border1.any():
            ys, xs = np.nonzero(both)
            raise DegenerateOverlapError(
                f"sliver overlap: {ys.size} pixel(s) border both one-sided areas (first at row {ys[0]}, "
                f"col {xs[0]}) and one side keeps no other contact"
            )
        log.debug("left %d corner pixel(s) touching both one-sided areas unpinned", int(both.sum()))
    return OverlapRegion.from_masks(overlap, border0, border1, canvas_border_mask(overlap.shape) & overlap)


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Data costs per pixel, cut costs per edge, and the pinning penalty."""

    d0: np.ndarray
    d1: np.ndarray
    edges: np.ndarray
    smooth: np.ndarray
    mu: float
    region: OverlapRegion | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.d0.size)

    @property
    def is_quantized(self) -> bool:
        return self.smooth.dtype.kind == "i"

    def quantized(self, scale: int = CAPACITY_SCALE) -> "EnergyModel":
        """Integer copy with every cost rounded to a multiple of 1/scale."""
        if self.is_quantized:
            return self

        def q(a):
            return np.rint(np.asarray(a, dtype=np.float64) * scale).astype(np.int64)

        return EnergyModel(q(self.d0), q(self.d1), self.edges, q(self.smooth), int(q(self.mu)), self.region)


def build_energy(region: OverlapRegion, diff, weights=None, mu: float | None = None) -> EnergyModel:
    """Data term from the border classes plus per-edge cut costs.

    The cut cost of edge (p, q) is the mean of the two difference values,
    multiplied by the edge weight when ``weights`` is given. The default
    ``mu`` is one more than the sum of all cut costs.
    """
    values = diff.values if hasattr(diff, "values") else np.asarray(diff, dtype=np.float64)
    p, q = region.edges[:, 0], region.edges[:, 1]
    smooth = 0.5 * (values[p] + values[q])
    if weights is not None:
        w = weights.values if hasattr(weights, "values") else np.asarray(weights, dtype=np.float64)
        smooth = w * smooth
    if not np.all(np.isfinite(smooth)) or np.any(smooth < 0):
        raise ValueError("cut costs must be finite and nonnegative")
    total = float(smooth.sum())
    if mu is None:
        mu = 1.0 + total
    elif not mu > total:
        raise PenaltyTooSmallError(f"mu={mu} does not exceed the total cut cost {total}")
    d0 = np.where(region.border1, mu, 0.0)
    d1 = np.where(region.border0, mu, 0.0)
    return EnergyModel(d0, d1, region.edges, smooth, float(mu), region)


def evaluate_energy(model: EnergyModel, labels) -> float:
    labels = np.asarray(labels)
    if labels.shape != (model.size,):
        raise ValueError(f"expected {model.size} labels, got shape {labels.shape}")
    one = labels.astype(bool)
    data = model.d0[~one].sum() + model.d1[one].sum()
    cut = one[model.edges[:, 0]] != one[model.edges[:, 1]]
    return (data + model.smooth[cut].sum()).item()


def extract_seam(region: OverlapRegion, labels) -> np.ndarray:
    """Label-discordant neighbor pairs, as (k, 2) pixel indices in edge order."""
    one = np.asarray(labels).astype(bool)
    cut = one[region.edges[:, 0]] != one[region.edges[:, 1]]
    return region.edges[cut]


def constraints_satisfied(model: EnergyModel, labels) -> bool:
    one = np.asarray(labels).astype(bool)
    return not (np.any(one & (model.d1 > 0)) or np.any(~one & (model.d0 > 0)))


# --- plain-text instance format -------------------------------------------

HEADER = "seamweld-instance 1"


def _border_token(region: OverlapRegion | None, i: int, d0: float, d1: float) -> str:
    if region is None:
        parts = ["b0"] if d1 > 0 else ["b1"] if d0 > 0 else []
    else:
        parts = []
        if region.border0[i]:
            parts.append("b0")
        if region.border1[i]:
            parts.append("b1")
        if region.canvas_border[i]:
            parts.append("c")
    return ",".join(parts) or "-"


def dump_instance(model: EnergyModel, fh) -> None:
    """Write one ``p`` line per pixel and one ``e`` line per edge; floats use repr."""
    region = model.region
    h, w = region.shape if region is not None else (1, model.size)
    fh.write(f"{HEADER}\n")
    fh.write(f"canvas {h} {w}\n")
    fh.write(f"pixels {model.size} edges {len(model.edges)} mu {model.mu!r}\n")
    for i in range(model.size):
        r, c = (int(region.rows[i]), int(region.cols[i])) if region is not None else (0, i)
        d0, d1 = model.d0[i].item(), model.d1[i].item()
        fh.write(f"p {i} {r} {c} {d0!r} {d1!r} {_border_token(region, i, d0, d1)}\n")
    for (p, q), s in zip(model.edges.tolist(), model.smooth.tolist()):
        fh.write(f"e {p} {q} {s!r}\n")


def write_instance(model: EnergyModel, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        dump_instance(model, fh)


def parse_instance(text: str) -> EnergyModel:
    lines = [ln.split() for ln in io.StringIO(text) if ln.strip()]
    try:
        if " ".join(lines[0]) != HEADER:
            raise InstanceFormatError("missing instance header")
        n, m, mu = int(lines[2][1]), int(lines[2][3]), float(lines[2][5])
        prow = lines[3 : 3 + n]
        erow = lines[3 + n : 3 + n + m]
        if len(prow) != n or len(erow) != m or any(r[0] != "p" for r in prow) or any(r[0] != "e" for r in erow):
            raise InstanceFormatError("pixel/edge line counts do not match the header")
        if [int(r[1]) for r in prow] != list(range(n)):
            raise InstanceFormatError("pixel indices must run 0..n-1 in order")
        d0 = np.array([float(r[4]) for r in prow])
        d1 = np.array([float(r[5]) for r in prow])
        edges = np.array([[int(r[1]), int(r[2])] for r in erow], dtype=np.int64).reshape(m, 2)
        smooth = np.array([float(r[3]) for r in erow])
    except (IndexError, ValueError) as exc:
        raise InstanceFormatError(f"malformed instance: {exc}") from exc
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise InstanceFormatError("edge endpoint out of range")
    return EnergyModel(d0, d1, edges, smooth, mu)


def read_instance(path: str | os.PathLike) -> EnergyModel:
    with open(path) as fh:
        return parse_instance(fh.read())
