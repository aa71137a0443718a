import numpy as np
import pytest

from seamweld.errors import DegenerateHomographyError, NoOverlapError
from seamweld.imgcore import ImageBuffer
from seamweld.warp import Homography, load_homography, make_aligned_pair, warp_image


def gradient_image(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    px = np.stack([xx / max(w - 1, 1), yy / max(h - 1, 1), 0.5 + 0.25 * np.sin(xx / 5.0) * np.cos(yy / 7.0)], axis=2)
    return ImageBuffer(px)


class TestHomography:
    def test_normalizes(self):
        h = Homography(2 * np.eye(3))
        assert np.array_equal(h.m, np.eye(3))

    def test_singular(self):
        with pytest.raises(DegenerateHomographyError):
            Homography(np.zeros((3, 3)))
        with pytest.raises(DegenerateHomographyError):
            Homography(np.ones((3, 3)))
        with pytest.raises(DegenerateHomographyError):
            Homography(np.eye(2))

    def test_inverse_round_trip(self):
        h = Homography(np.array([[1.01, 0.02, 3.0], [-0.01, 0.99, -2.0], [1e-4, 2e-5, 1.0]]))
        x, y, _ = h.apply([3.0, 10.0], [4.0, -2.0])
        bx, by, _ = h.inverse().apply(x, y)
        assert np.allclose(bx, [3.0, 10.0]) and np.allclose(by, [4.0, -2.0])

    def test_file(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("1 0 5\n0 1 -2\n0 0 1\n")
        assert np.array_equal(load_homography(path).m, Homography.translation(5, -2).m)
        path.write_text("1 0 5 0 1")
        with pytest.raises(DegenerateHomographyError):
            load_homography(path)
        path.write_text("1 0 5 0 1 x 0 0 1")
        with pytest.raises(DegenerateHomographyError):
            load_homography(path)


class TestWarp:
    def test_identity(self):
        src = gradient_image(6, 9)
        out = warp_image(src, Homography.identity())
        assert out.origin == (0, 0)
        assert np.array_equal(out.image.pixels, src.pixels)
        assert out.mask.all()

    def test_integer_translation_is_exact(self):
        src = gradient_image(5, 7)
        out = warp_image(src, Homography.translation(3, 2))
        assert out.image.shape == (7, 10)
        assert np.array_equal(out.image.pixels[2:, 3:], src.pixels)
        assert out.mask[2:, 3:].all() and not out.mask[:2].any() and not out.mask[:, :3].any()

    def test_negative_translation_extends_canvas(self):
        out = warp_image(gradient_image(4, 4), Homography.translation(-2, 0))
        assert out.origin == (-2, 0)
        assert out.image.shape == (4, 6)
        assert out.mask[:, :4].all() and not out.mask[:, 4:].any()

    def test_fractional_translation_drops_partial_support(self):
        out = warp_image(gradient_image(4, 4), Homography.translation(0.5, 0))
        # columns at x=0.5..2.5 are fully supported; x=3 would need a tap beyond the source
        assert out.mask[:, 1:4].all() and not out.mask[:, 0].any()

    def test_round_trip_within_two_levels(self):
        src = gradient_image(60, 80)
        h = Homography(np.array([[0.98, 0.05, 4.3], [-0.04, 1.02, 2.7], [0.0, 0.0, 1.0]]))
        fwd = warp_image(src, h)
        back = warp_image(fwd.image, h.inverse())
        # canvas pixel (0, 0) of ``back`` sits at fwd-origin + back-origin in source coordinates
        ox = fwd.origin[0] + back.origin[0]
        oy = fwd.origin[1] + back.origin[1]
        region = back.mask.copy()
        ys, xs = np.nonzero(region)
        sy, sx = ys + oy, xs + ox
        inside = (sy >= 5) & (sy < 55) & (sx >= 5) & (sx < 75)
        err = np.abs(back.image.pixels[ys[inside], xs[inside]] - src.pixels[sy[inside], sx[inside]])
        assert inside.sum() > 1000
        assert err.max() <= 2 / 255

    def test_monotone_mask(self):
        rng = np.random.default_rng(7)
        big = np.ones((20, 20), bool)
        small = big.copy()
        small[rng.random((20, 20)) < 0.2] = False
        h = Homography(np.array([[0.9, 0.1, 2.0], [0.05, 1.1, -1.0], [0.0, 0.0, 1.0]]))
        px = gradient_image(20, 20).pixels
        a = warp_image(ImageBuffer(px, big), h).mask
        b = warp_image(ImageBuffer(px, small), h).mask
        assert not np.any(b & ~a)

    def test_collapse(self):
        h = Homography(np.array([[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1.0]]))
        with pytest.raises(DegenerateHomographyError):
            warp_image(gradient_image(5, 5), h)

    def test_horizon(self):
        h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [-0.5, 0, 1.0]]))
        with pytest.raises(DegenerateHomographyError):
            warp_image(gradient_image(5, 5), h)


class TestAlignedPair:
    def test_identical_identity(self):
        img = gradient_image(10, 10)
        pair = make_aligned_pair(img, img, Homography.identity())
        assert pair.overlap.all()

    def test_translated_band(self):
        img = gradient_image(10, 10)
        pair = make_aligned_pair(img, img, Homography.translation(5, 0))
        assert pair.shape == (10, 15)
        cols = np.nonzero(pair.overlap.any(axis=0))[0]
        assert cols.tolist() == [5, 6, 7, 8, 9]
        assert pair.overlap[:, 5:10].all() and pair.overlap.sum() == 50
        assert np.array_equal(pair.overlap, pair.mask0 & pair.mask1)

    def test_disjoint(self):
        img = gradient_image(10, 10)
        with pytest.raises(NoOverlapError):
            make_aligned_pair(img, img, Homography.translation(12, 0))

    def test_same_canvas_with_masks(self):
        img = gradient_image(4, 6)
        m0 = np.zeros((4, 6), bool)
        m0[:, :4] = True
        m1 = np.zeros((4, 6), bool)
        m1[:, 2:] = True
        pair = make_aligned_pair(img, img, masks=(m0, m1))
        assert pair.overlap.sum() == 8
        assert np.all(pair.img0.pixels[:, 4:] == 0.0)

    def test_same_canvas_uses_image_masks(self):
        m0 = np.zeros((3, 3), bool)
        m0[0] = True
        img0 = ImageBuffer(np.full((3, 3, 3), 0.2), m0)
        img1 = ImageBuffer(np.full((3, 3, 3), 0.4))
        pair = make_aligned_pair(img0, img1)
        assert np.array_equal(pair.overlap, m0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            make_aligned_pair(gradient_image(3, 3), gradient_image(3, 4))
