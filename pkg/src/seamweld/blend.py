"""
Compositing from a labeling, with optional gradient-domain correction.

The photometric reference is I0: everything sourced from I1 (the label-1 part
of the overlap plus the I1-only area) is re-solved so that its gradients
follow I1 while its values meet the label-0 side along the seam.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .energy import OverlapRegion, extract_seam
from .imgcore import ImageBuffer

UNCOVERED = -1
SEAM_COLOR = (1.0, 0.0, 0.0)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CompositePlan:
    """Per-canvas-pixel source image (0, 1, or UNCOVERED) and the seam edges."""

    source: np.ndarray
    seam: np.ndarray
    region: OverlapRegion


def make_plan(pair, region: OverlapRegion, labels) -> CompositePlan:
    labels = np.asarray(labels, dtype=np.int8)
    source = np.full(pair.shape, UNCOVERED, dtype=np.int8)
    source[pair.mask0] = 0
    source[pair.mask1 & ~pair.mask0] = 1
    source[region.rows, region.cols] = labels
    return CompositePlan(source, extract_seam(region, labels), region)


def composite_direct(pair, plan: CompositePlan) -> ImageBuffer:
    pick1 = (plan.source == 1)[..., None]
    pixels = np.where(pick1, pair.img1.pixels, pair.img0.pixels)
    pixels = np.where((plan.source == UNCOVERED)[..., None], 0.0, pixels)
    return ImageBuffer(pixels, plan.source != UNCOVERED)


@dataclass
class PoissonResult:
    image: ImageBuffer
    converged: bool
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list, repr=False)


def _neighbor_pairs(inside: np.ndarray, other: np.ndarray):
    """(p, q) pixel pairs, p in ``inside``, q its 4-neighbor in ``other``; flat canvas indices."""
    h, w = inside.shape
    flat = np.arange(h * w).reshape(h, w)
    ps, qs = [], []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yt = slice(max(0, dy), h + min(0, dy))
        xt = slice(max(0, dx), w + min(0, dx))
        hit = inside[ys, xs] & other[yt, xt]
        ps.append(flat[ys, xs][hit])
        qs.append(flat[yt, xt][hit])
    return np.concatenate(ps), np.concatenate(qs)


def poisson_system(pair, plan: CompositePlan):
    """Sparse Laplacian over the solvable part of the label-1 side.

    Returns (unknown mask, A, b) with b holding one column per channel for the
    correction c = f - I1. Components of the label-1 side with no label-0
    neighbor have no Dirichlet data and are left out (kept as I1).
    """
    support = pair.mask1
    omega = plan.source == 1
    fixed = (plan.source == 0) & support
    labels, count = ndi.label(omega)
    has_fixed = np.zeros(count + 1, dtype=bool)
    op, oq = _neighbor_pairs(omega, fixed)
    has_fixed[labels.ravel()[op]] = True
    has_fixed[0] = False
    unknown = has_fixed[labels]

    flat_unknown = np.flatnonzero(unknown)
    n = flat_unknown.size
    idx = np.full(unknown.size, -1, dtype=np.int64)
    idx[flat_unknown] = np.arange(n)

    deg = np.zeros(n)
    up, uq = _neighbor_pairs(unknown, support)
    np.add.at(deg, idx[up], 1.0)
    inner = idx[uq] >= 0
    a = sp.csr_matrix(
        (np.concatenate([deg, -np.ones(inner.sum())]),
         (np.concatenate([np.arange(n), idx[up[inner]]]), np.concatenate([np.arange(n), idx[uq[inner]]]))),
        shape=(n, n),
    )
    corr = (pair.img0.pixels - pair.img1.pixels).reshape(-1, 3)
    b = np.zeros((n, 3))
    boundary = ~inner
    np.add.at(b, idx[up[boundary]], corr[uq[boundary]])
    return unknown, a, b


def _pcg(a, b, x0, precond, tol, max_iter):
    """Preconditioned conjugate gradients, stopping on max |residual| < tol.

    Returns the iterate with the smallest max-residual seen, that residual,
    the iteration count and the 2-norm residual history.
    """
    x = x0.copy()
    r = b - a @ x
    res = np.abs(r).max() if r.size else 0.0
    best_x, best_res = x.copy(), res
    history = [float(np.linalg.norm(r))]
    if res < tol:
        return x, res, 0, history
    z = precond(r)
    p = z.copy()
    rz = r @ z
    it = 0
    for it in range(1, max_iter + 1):
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = np.abs(r).max()
        history.append(float(np.linalg.norm(r)))
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res < tol:
            break
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, best_res, it, history


def _preconditioner(a, kind: str):
    if kind == "jacobi":
        inv_diag = 1.0 / a.diagonal()
        return lambda r: inv_diag * r
    if kind == "amg":
        import pyamg

        # pyamg seeds its spectral-radius estimates from the global numpy RNG;
        # pin it for the setup so repeated runs build the same hierarchy
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(a.tocsr(), max_coarse=500)
        finally:
            np.random.set_state(state)
        m = ml.aspreconditioner(cycle="V")
        return lambda r: m @ r
    raise ValueError(f"unknown preconditioner {kind!r}")


def default_max_iter(n_unknowns: int) -> int:
    return int(10 * math.sqrt(n_unknowns)) + 1000


def composite_poisson(
    pair,
    plan: CompositePlan,
    tol: float = 1e-4,
    max_iter: int | None = None,
    preconditioner: str = "amg",
) -> PoissonResult:
    """Gradient-domain composite; the label-0 side is copied unchanged.

    Each channel solves the 5-point Poisson equation for the label-1 side
    with I1's gradients as guidance and the adjoining label-0 pixels as
    Dirichlet boundary. The result is clamped to [0, 1] afterwards.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    direct = composite_direct(pair, plan)
    unknown, a, b = poisson_system(pair, plan)
    n = a.shape[0]
    if n == 0:
        return PoissonResult(direct, True, 0, 0.0)
    max_iter = default_max_iter(n) if max_iter is None else max_iter
    precond = _preconditioner(a, preconditioner)
    sol = np.zeros((n, 3))
    worst, iters, converged, history = 0.0, 0, True, []
    for ch in range(3):
        x, res, it, hist = _pcg(a, b[:, ch], np.zeros(n), precond, tol, max_iter)
        sol[:, ch] = x
        worst, iters = max(worst, res), max(iters, it)
        converged &= bool(res < tol)
        history.append(hist)
    if not converged:
        warnings.warn(f"Poisson solve stopped at max residual {worst:.3g} (tol {tol:g})", ConvergenceWarning)
    pixels = np.array(direct.pixels)
    rows, cols = np.nonzero(unknown)
    pixels[rows, cols] = np.clip(pair.img1.pixels[rows, cols] + sol, 0.0, 1.0)
    return PoissonResult(ImageBuffer(pixels, direct.mask), converged, iters, float(worst), history)


def seam_pixels(plan: CompositePlan) -> tuple[np.ndarray, np.ndarray]:
    """Canvas (rows, cols) of every distinct seam-edge endpoint."""
    ends = np.unique(plan.seam.ravel())
    return plan.region.rows[ends], plan.region.cols[ends]


def render_overlays(pair, plan: CompositePlan, diff=None, omega=None, composite: ImageBuffer | None = None) -> dict:
    """Seam over the composite in pure red, plus grayscale difference / saliency maps."""
    from .imgcore import gray_to_buffer

    base = composite_direct(pair, plan) if composite is None else composite
    seam = np.array(base.pixels)
    rows, cols = seam_pixels(plan)
    seam[rows, cols] = SEAM_COLOR
    out = {"seam": ImageBuffer(seam, base.mask)}
    if diff is not None:
        out["diff"] = gray_to_buffer(plan.region.raster(diff.values / diff.domain_max, 0.0))
    if omega is not None:
        out["saliency"] = gray_to_buffer(np.where(plan.region.mask, omega.values, 0.0))
    return out
