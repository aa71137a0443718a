import logging
import math

import numpy as np
import pytest

from oracles import naive_energy
from synthetic import stitch_pair_images
from seamweld.energy import CAPACITY_SCALE, evaluate_energy
from seamweld.errors import NoOverlapError
from seamweld.imgcore import ImageBuffer, save_image
from seamweld.pipeline import (StitchConfig, StitchReport, downscale_pair, find_seam, load_pair, stitch, stitch_pair,
                               worker_count)
from seamweld.warp import Homography, make_aligned_pair

ABLATION = StitchConfig(metric="euclidean", use_saliency=False)


@pytest.fixture(scope="module")
def small_pair():
    img0, img1, tx = stitch_pair_images(60, 90, seed=3)
    return make_aligned_pair(img0, img1, Homography.translation(tx, 0))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"epsilon": 0.0}, {"passes": 0}, {"metric": "lab"}, {"blend": "feather"}, {"tol": 0.0},
        {"max_iter": 0}, {"preconditioner": "ilu"}, {"maxflow": "simplex"}, {"max_dim": 0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            StitchConfig(**kwargs)

    def test_defaults(self):
        cfg = StitchConfig()
        assert (cfg.epsilon, cfg.passes, cfg.metric, cfg.use_saliency) == (0.06, 3, "sigmoid", True)

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("SEAMWELD_THREADS", "1")
        assert worker_count() == 1
        monkeypatch.setenv("SEAMWELD_THREADS", "lots")
        assert worker_count() >= 1


class TestFindSeam:
    def test_report(self, small_pair):
        seam = find_seam(small_pair)
        rep = seam.report
        assert rep.overlap_pixels == seam.region.size
        assert (rep.canvas_height, rep.canvas_width) == small_pair.shape
        assert rep.energy >= 0 and rep.energy == seam.cut.energy
        assert rep.seam_length == len(seam.plan.seam) > 0
        assert 0 < rep.tau < math.sqrt(3) and rep.kappa == 1 / 0.06
        assert {"overlap", "euclidean_diff", "otsu", "sigmoid", "saliency", "energy", "mincut"} <= set(rep.timings)

    def test_normal_energy_audit(self, small_pair):
        seam = find_seam(small_pair)
        region = seam.region
        a, b = small_pair.img0.pixels, small_pair.img1.pixels
        euclid = np.sqrt(((a - b) ** 2).sum(axis=2))[region.rows, region.cols]
        d0 = np.where(region.border1, seam.model.mu, 0.0)
        d1 = np.where(region.border0, seam.model.mu, 0.0)
        smooth = [(euclid[p] + euclid[q]) / 2 for p, q in region.edges]
        expect = naive_energy(d0, d1, region.edges.tolist(), smooth, seam.cut.labels)
        assert seam.report.normal_energy_of_same_seam == pytest.approx(expect, rel=1e-9)

    def test_unweighted_is_ablation_when_off(self, small_pair):
        seam = find_seam(small_pair, ABLATION)
        assert seam.report.unweighted_energy_of_same_seam == pytest.approx(seam.report.energy, rel=1e-12)
        assert seam.report.normal_energy_of_same_seam == pytest.approx(seam.report.energy, rel=1e-12)
        assert seam.omega is None and seam.weights is None

    def test_optimality_transfer(self, small_pair):
        full = find_seam(small_pair)
        base = find_seam(small_pair, ABLATION)
        # the cut is exact for the integer capacities; rounding each term to
        # 1/CAPACITY_SCALE moves any labeling by at most half a unit per term
        slack = (full.model.size + len(full.model.edges)) / CAPACITY_SCALE
        assert full.cut.energy <= evaluate_energy(full.model, base.cut.labels) + slack
        assert base.cut.energy <= evaluate_energy(base.model, full.cut.labels) + slack

    def test_solvers_same_seam(self, small_pair):
        a = find_seam(small_pair, StitchConfig(maxflow="bk"))
        b = find_seam(small_pair, StitchConfig(maxflow="push-relabel"))
        assert np.array_equal(a.cut.labels, b.cut.labels)

    @pytest.mark.parametrize("config", [StitchConfig(), ABLATION], ids=["sigmoid", "euclidean"])
    def test_identical_inputs(self, caplog, config):
        wide = stitch_pair_images(40, 80, seed=1)[0].pixels
        h, w = wide.shape[:2]
        cols = np.broadcast_to(np.arange(w), (h, w))
        pair = make_aligned_pair(ImageBuffer(wide), ImageBuffer(wide), masks=(cols < 50, cols >= 25))
        with caplog.at_level(logging.WARNING, logger="seamweld.pipeline"):
            out, report = stitch_pair(pair, config)
        # zero difference everywhere: Otsu has one occupied bin and falls back
        assert report.tau == pytest.approx(math.sqrt(3) / 2)
        assert report.warnings and "degenerate" in caplog.text
        if config.metric == "euclidean":
            assert report.energy == 0.0
        else:
            # the sigmoid never reaches zero; a zero difference maps to expit(-4 kappa tau)
            floor = 1.0 / (1.0 + math.exp(4 * report.kappa * report.tau))
            assert 0.0 < report.energy <= 2 * floor * report.seam_length
        assert report.poisson_converged
        assert np.abs(out.pixels - wide).max() < 2 * config.tol

    def test_no_overlap(self):
        img0, img1, _ = stitch_pair_images(20, 30)
        with pytest.raises(NoOverlapError):
            make_aligned_pair(img0, img1, Homography.translation(40, 0))


class TestStitch:
    def test_deterministic(self, small_pair):
        out_a, rep_a = stitch_pair(small_pair)
        out_b, rep_b = stitch_pair(small_pair)
        assert np.array_equal(out_a.pixels, out_b.pixels)
        rep_a.timings = rep_b.timings = {}
        assert rep_a == rep_b

    def test_direct_blend(self, small_pair):
        out, report = stitch_pair(small_pair, StitchConfig(blend="none"))
        assert report.blend == "none" and report.poisson_iterations == 0
        assert out.shape == small_pair.shape

    def test_poisson_report(self, small_pair):
        _, report = stitch_pair(small_pair, StitchConfig(tol=1e-5))
        assert report.poisson_converged and report.poisson_residual < 1e-5
        assert report.poisson_iterations > 0

    def test_downscale(self, small_pair):
        reduced = downscale_pair(small_pair, 50)
        h, w = small_pair.shape
        k = math.ceil(max(h, w) / 50)
        assert reduced.shape == (-(-h // k), -(-w // k))
        assert max(reduced.shape) <= 50
        out, _ = stitch_pair(small_pair, StitchConfig(max_dim=50))
        assert out.shape == reduced.shape
        assert downscale_pair(small_pair, 1000) is small_pair

    def test_dump_dir(self, small_pair, tmp_path):
        stitch_pair(small_pair, StitchConfig(dump_dir=str(tmp_path / "maps")))
        names = sorted(p.name for p in (tmp_path / "maps").iterdir())
        assert names == ["diff_euclidean.png", "diff_sigmoid.png", "saliency.png", "seam.png"]

    def test_from_files(self, tmp_path):
        img0, img1, tx = stitch_pair_images(30, 45, seed=2)
        save_image(img0, tmp_path / "a.png")
        save_image(img1, tmp_path / "b.ppm")
        (tmp_path / "h.txt").write_text(f"1 0 {tx}\n0 1 0\n0 0 1\n")
        pair = load_pair(tmp_path / "a.png", tmp_path / "b.ppm", tmp_path / "h.txt")
        assert pair.shape == (30, 45 + tx)
        out, report = stitch(StitchConfig(), tmp_path / "a.png", tmp_path / "b.ppm", tmp_path / "h.txt")
        assert "load" in report.timings and out.shape == pair.shape

    def test_report_text(self):
        rep = StitchReport(tau=0.24, seam_length=3, saliency=True, warnings=["x"], timings={"mincut": 1.25})
        text = rep.to_text()
        assert "tau=0.24\n" in text and "saliency=1\n" in text and "warnings=x\n" in text
        assert "time_mincut_ms=1.2" in text
        assert "time_" not in rep.to_text(timings=False)
