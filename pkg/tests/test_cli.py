import subprocess
import sys

import numpy as np
import pytest

from synthetic import stitch_pair_images
from seamweld.cli import EXIT_DATA, EXIT_USAGE, main
from seamweld.energy import read_instance
from seamweld.imgcore import ImageBuffer, load_image, save_image, save_mask
from seamweld.mincut import brute_force_min
from seamweld.pipeline import StitchConfig, find_seam, load_pair


def parse_report(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    img0, img1, tx = stitch_pair_images(30, 48, seed=4)
    save_image(img0, d / "a.png")
    save_image(img1, d / "b.png")
    (d / "h.txt").write_text(f"1 0 {tx}\n0 1 0\n0 0 1\n")
    return d


@pytest.fixture
def tiny_instance(tmp_path):
    """Writes a 4x3-pixel overlap instance through ``seam --instance``."""
    w = 8
    rng = np.random.default_rng(0)
    a = rng.random((4, w, 3))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    cols = np.broadcast_to(np.arange(w), (4, w))
    save_image(ImageBuffer(a), tmp_path / "a.png")
    save_image(ImageBuffer(b), tmp_path / "b.png")
    save_mask(cols < 5, tmp_path / "m0.png")
    save_mask(cols >= 2, tmp_path / "m1.png")
    code = main(["seam", str(tmp_path / "a.png"), str(tmp_path / "b.png"), "--mask0", str(tmp_path / "m0.png"),
                 "--mask1", str(tmp_path / "m1.png"), "-o", str(tmp_path / "ov.png"),
                 "--instance", str(tmp_path / "inst.txt")])
    assert code == 0
    return tmp_path


def test_stitch(inputs, tmp_path, capsys):
    out = tmp_path / "out.png"
    code = main(["stitch", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(inputs / "h.txt"),
                 "-o", str(out)])
    assert code == 0
    report = parse_report(capsys.readouterr().out)
    assert out.exists() and load_image(out).shape == (30, 48 + 29)
    assert {"tau", "kappa", "seam_length", "energy", "normal_energy_of_same_seam", "warnings"} <= set(report)
    assert float(report["energy"]) >= 0 and any(k.startswith("time_") for k in report)


def test_stitch_without_timings_is_repeatable(inputs, tmp_path, capsys):
    args = ["stitch", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(inputs / "h.txt"),
            "--no-timings"]
    assert main(args + ["-o", str(tmp_path / "1.png")]) == 0
    first = capsys.readouterr().out
    assert main(args + ["-o", str(tmp_path / "2.png")]) == 0
    assert capsys.readouterr().out == first
    assert "time_" not in first
    assert (tmp_path / "1.png").read_bytes() == (tmp_path / "2.png").read_bytes()


def test_seam_ablation_matches_library(inputs, tmp_path, capsys):
    overlay, labels = tmp_path / "ov.png", tmp_path / "lab.png"
    code = main(["seam", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(inputs / "h.txt"),
                 "--metric", "euclidean", "--no-saliency", "-o", str(overlay), "--labels", str(labels)])
    assert code == 0
    report = parse_report(capsys.readouterr().out)
    pair = load_pair(inputs / "a.png", inputs / "b.png", inputs / "h.txt")
    seam = find_seam(pair, StitchConfig(metric="euclidean", use_saliency=False))
    assert float(report["energy"]) == seam.cut.energy
    assert report["metric"] == "euclidean" and report["saliency"] == "0"
    raster = np.rint(load_image(labels).pixels[..., 0] * 255).astype(int)
    expect = np.select([seam.plan.source == 0, seam.plan.source == 1], [0, 255], default=128)
    assert np.array_equal(raster, expect)


def test_seam_default_labels_path(inputs, tmp_path):
    code = main(["seam", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(inputs / "h.txt"),
                 "-o", str(tmp_path / "ov.png")])
    assert code == 0 and (tmp_path / "ov_labels.png").exists()


def test_maps(inputs, tmp_path, capsys):
    code = main(["maps", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(inputs / "h.txt"),
                 "--out-dir", str(tmp_path / "m")])
    assert code == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 4 and all(p.endswith(".png") for p in printed)


def test_oracle_matches_library(tiny_instance, capsys):
    capsys.readouterr()
    assert main(["oracle", str(tiny_instance / "inst.txt")]) == 0
    report = parse_report(capsys.readouterr().out)
    model = read_instance(tiny_instance / "inst.txt")
    res = brute_force_min(model)
    assert report["pixels"] == "12"
    assert float(report["energy"]) == res.energy
    assert report["labels"] == "".join(str(int(b)) for b in res.labels)


def test_oracle_too_large(tiny_instance, capsys):
    assert main(["oracle", str(tiny_instance / "inst.txt"), "--limit", "5"]) == EXIT_DATA
    assert "limit" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["stitch", "a.png", "b.png"],
    ["stitch", "a.png", "b.png", "-o", "x.png", "--bogus"],
    ["stitch", "a.png", "b.png", "-o", "x.png", "--epsilon", "-1"],
    ["seam", "a.png", "b.png", "-o", "x.png", "--metric", "lab"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unpaired_mask_is_usage_error(inputs, tmp_path):
    save_mask(np.ones((30, 48), bool), tmp_path / "m.png")
    code = main(["seam", str(inputs / "a.png"), str(inputs / "b.png"), "--mask0", str(tmp_path / "m.png"),
                 "-o", str(tmp_path / "x.png")])
    assert code == EXIT_USAGE


def test_data_errors(inputs, tmp_path, capsys):
    assert main(["stitch", str(tmp_path / "missing.png"), str(inputs / "b.png"), "-o", str(tmp_path / "x.png")]) \
        == EXIT_DATA
    (tmp_path / "far.txt").write_text("1 0 500\n0 1 0\n0 0 1\n")
    assert main(["stitch", str(inputs / "a.png"), str(inputs / "b.png"), "--homography", str(tmp_path / "far.txt"),
                 "-o", str(tmp_path / "x.png")]) == EXIT_DATA
    (tmp_path / "bad.txt").write_text("seamweld-instance 1\ngarbage\n")
    assert main(["oracle", str(tmp_path / "bad.txt")]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "Traceback" not in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "seamweld", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "stitch" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "seamweld", "stitch"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
