"""
End-to-end seam cutting for one aligned pair.

Stages, in order: overlap and border classes, Euclidean difference, Otsu
threshold, sigmoid remap, saliency weights, data term, min-cut, compositing.
``metric="euclidean"`` with ``use_saliency=False`` is the plain seam-cutting
baseline.
"""

from __future__ import annotations

import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blend as blend_mod
from .colordiff import DEFAULT_EPSILON, DiffField, SigmoidParams, euclidean_diff, otsu_threshold, sigmoid_remap
from .energy import EnergyModel, OverlapRegion, build_energy, classify_borders, constraints_satisfied, evaluate_energy
from .errors import DegenerateHistogramError
from .imgcore import ImageBuffer, gray_to_buffer, load_image, load_mask, save_image
from .mincut import ALGORITHMS, DEFAULT_ALGORITHM, CutResult, minimize
from .saliency import DEFAULT_PASSES, SaliencyMap, WeightField, average_saliency, weight_field
from .warp import AlignedPair, Homography, load_homography, make_aligned_pair

log = logging.getLogger(__name__)

THREADS_ENV = "SEAMWELD_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return os.cpu_count() or 1


@dataclass(frozen=True)
class StitchConfig:
    epsilon: float = DEFAULT_EPSILON
    passes: int = DEFAULT_PASSES
    metric: str = "sigmoid"
    use_saliency: bool = True
    blend: str = "poisson"
    tol: float = 1e-4
    max_iter: int | None = None
    preconditioner: str = "amg"
    dump_dir: str | None = None
    max_dim: int | None = None
    maxflow: str = DEFAULT_ALGORITHM

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.metric not in ("euclidean", "sigmoid"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.blend not in ("none", "poisson"):
            raise ValueError(f"unknown blend mode {self.blend!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("amg", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.maxflow not in ALGORITHMS:
            raise ValueError(f"unknown max-flow algorithm {self.maxflow!r}")
        if self.max_dim is not None and self.max_dim < 1:
            raise ValueError("max_dim must be >= 1")


@dataclass
class StitchReport:
    tau: float = math.nan
    kappa: float = math.nan
    epsilon: float = math.nan
    metric: str = ""
    saliency: bool = False
    canvas_width: int = 0
    canvas_height: int = 0
    overlap_pixels: int = 0
    seam_length: int = 0
    energy: float = 0.0
    flow_value: float = 0.0
    normal_energy_of_same_seam: float = 0.0
    unweighted_energy_of_same_seam: float = 0.0
    blend: str = "none"
    poisson_converged: bool = True
    poisson_iterations: int = 0
    poisson_residual: float = 0.0
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_text(self, timings: bool = True) -> str:
        lines = []
        for key, value in self.__dict__.items():
            if key in ("timings", "warnings"):
                continue
            if isinstance(value, bool):
                value = int(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        lines.append("warnings=" + " | ".join(self.warnings))
        if timings:
            lines.extend(f"time_{k}_ms={v:.1f}" for k, v in self.timings.items())
        return "\n".join(lines) + "\n"


@dataclass
class SeamResult:
    """Everything computed up to (and including) the cut."""

    pair: AlignedPair
    region: OverlapRegion
    euclidean: DiffField
    params: SigmoidParams
    diff: DiffField
    omega: SaliencyMap | None
    weights: WeightField | None
    model: EnergyModel
    cut: CutResult
    plan: blend_mod.CompositePlan
    report: StitchReport


def _check_finite(stage: str, *arrays) -> None:
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values after stage {stage!r}")


@contextmanager
def _timed(report: StitchReport, stage: str):
    t0 = time.perf_counter()
    yield
    report.timings[stage] = (time.perf_counter() - t0) * 1e3


def downscale_pair(pair: AlignedPair, max_dim: int) -> AlignedPair:
    """Integer-factor area averaging; a coarse pixel is valid only if its whole block is."""
    h, w = pair.shape
    k = math.ceil(max(h, w) / max_dim)
    if k <= 1:
        return pair
    hh, ww = -(-h // k) * k, -(-w // k) * k

    def reduce_img(img, mask):
        px = np.zeros((hh, ww, 3))
        px[:h, :w] = img.pixels
        m = np.zeros((hh, ww), dtype=bool)
        m[:h, :w] = mask
        px = px.reshape(hh // k, k, ww // k, k, 3).mean(axis=(1, 3))
        m = m.reshape(hh // k, k, ww // k, k).all(axis=(1, 3))
        px = np.where(m[..., None], np.clip(px, 0.0, 1.0), 0.0)
        return ImageBuffer(px, m), m

    i0, m0 = reduce_img(pair.img0, pair.mask0)
    i1, m1 = reduce_img(pair.img1, pair.mask1)
    return make_aligned_pair(i0, i1, masks=(m0, m1))


def estimate_sigmoid(euclid: DiffField, epsilon: float, report: StitchReport) -> SigmoidParams:
    try:
        return otsu_threshold(euclid, epsilon)
    except DegenerateHistogramError:
        msg = "degenerate difference histogram; tau set to half the difference range"
        log.warning(msg)
        report.warnings.append(msg)
        return SigmoidParams(euclid.domain_max / 2.0, 1.0 / epsilon, epsilon)


def find_seam(pair: AlignedPair, config: StitchConfig = StitchConfig(), report: StitchReport | None = None) -> SeamResult:
    """Run everything up to the min-cut and build the composite plan."""
    report = StitchReport() if report is None else report
    report.epsilon, report.metric, report.saliency = config.epsilon, config.metric, config.use_saliency
    report.canvas_height, report.canvas_width = pair.shape

    with _timed(report, "overlap"):
        region = classify_borders(pair)
    report.overlap_pixels = region.size
    with _timed(report, "euclidean_diff"):
        euclid = euclidean_diff(pair, region)
    _check_finite("euclidean_diff", euclid.values)
    with _timed(report, "otsu"):
        params = estimate_sigmoid(euclid, config.epsilon, report)
    report.tau, report.kappa = params.tau, params.kappa
    with _timed(report, "sigmoid"):
        diff = sigmoid_remap(euclid, params) if config.metric == "sigmoid" else euclid
    _check_finite("sigmoid", diff.values)

    omega = weights = None
    if config.use_saliency:
        with _timed(report, "saliency"):
            omega = average_saliency(pair, region, config.passes, workers=worker_count())
            weights = weight_field(omega, region)
        _check_finite("saliency", omega.values, weights.values)

    with _timed(report, "energy"):
        model = build_energy(region, diff, weights)
    _check_finite("energy", model.d0, model.d1, model.smooth)
    with _timed(report, "mincut"):
        cut = minimize(model, config.maxflow)
    if not constraints_satisfied(model, cut.labels):
        raise AssertionError("optimal labeling violates a border pin")

    plan = blend_mod.make_plan(pair, region, cut.labels)
    report.seam_length = int(len(plan.seam))
    report.energy = cut.energy
    report.flow_value = cut.flow_value
    report.normal_energy_of_same_seam = evaluate_energy(build_energy(region, euclid), cut.labels)
    report.unweighted_energy_of_same_seam = evaluate_energy(build_energy(region, diff), cut.labels)
    return SeamResult(pair, region, euclid, params, diff, omega, weights, model, cut, plan, report)


def composite(seam: SeamResult, config: StitchConfig) -> ImageBuffer:
    report = seam.report
    report.blend = config.blend
    with _timed(report, "blend"):
        if config.blend == "none":
            out = blend_mod.composite_direct(seam.pair, seam.plan)
        else:
            res = blend_mod.composite_poisson(seam.pair, seam.plan, config.tol, config.max_iter, config.preconditioner)
            report.poisson_converged = res.converged
            report.poisson_iterations = res.iterations
            report.poisson_residual = res.residual
            if not res.converged:
                report.warnings.append(f"poisson solve did not reach tol={config.tol:g}")
            out = res.image
    _check_finite("blend", out.pixels)
    return out


def dump_maps(seam: SeamResult, directory: str | os.PathLike, result: ImageBuffer | None = None) -> list[Path]:
    """Write the difference fields, saliency map and seam overlay as PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    region = seam.region
    written = []

    def put(name, buf):
        path = directory / name
        save_image(buf, path)
        written.append(path)

    put("diff_euclidean.png", gray_to_buffer(seam.euclidean.to_raster(region) / seam.euclidean.domain_max))
    if seam.diff.metric == "sigmoid":
        put("diff_sigmoid.png", gray_to_buffer(seam.diff.to_raster(region)))
    else:
        sig = sigmoid_remap(seam.euclidean, seam.params)
        put("diff_sigmoid.png", gray_to_buffer(sig.to_raster(region)))
    omega = seam.omega if seam.omega is not None else average_saliency(seam.pair, region, DEFAULT_PASSES)
    put("saliency.png", gray_to_buffer(np.where(region.mask, omega.values, 0.0)))
    overlays = blend_mod.render_overlays(seam.pair, seam.plan, composite=result)
    put("seam.png", overlays["seam"])
    return written


def stitch_pair(pair: AlignedPair, config: StitchConfig = StitchConfig()) -> tuple[ImageBuffer, StitchReport]:
    report = StitchReport()
    if config.max_dim is not None:
        with _timed(report, "downscale"):
            pair = downscale_pair(pair, config.max_dim)
    seam = find_seam(pair, config, report)
    out = composite(seam, config)
    if config.dump_dir:
        dump_maps(seam, config.dump_dir, out)
    return out, report


def load_pair(
    path0: str | os.PathLike,
    path1: str | os.PathLike,
    homography: str | os.PathLike | Homography | None = None,
    masks: tuple[str | os.PathLike, str | os.PathLike] | None = None,
) -> AlignedPair:
    img0, img1 = load_image(path0), load_image(path1)
    if homography is not None and not isinstance(homography, Homography):
        homography = load_homography(homography)
    mask_arrays = None if masks is None else (load_mask(masks[0]), load_mask(masks[1]))
    return make_aligned_pair(img0, img1, homography, mask_arrays)


def stitch(config: StitchConfig, path0, path1, homography=None, masks=None) -> tuple[ImageBuffer, StitchReport]:
    t0 = time.perf_counter()
    pair = load_pair(path0, path1, homography, masks)
    load_ms = (time.perf_counter() - t0) * 1e3
    out, report = stitch_pair(pair, config)
    report.timings = {"load": load_ms, **report.timings}
    return out, report
