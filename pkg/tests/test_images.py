import numpy as np
import pytest
from scipy import ndimage

from localmahal.errors import AngleTooLarge, BlankImage, ShiftTooLarge
from localmahal.images import (
    RasterImage,
    deskew,
    make_tangents,
    parse_transforms,
    rotate_small,
    shift,
    unflatten,
)


def blob_image(side=21, sigma=2.5):
    px = np.zeros((side, side))
    px[side // 2, side // 2] = 1.0
    px = ndimage.gaussian_filter(px, sigma)
    return RasterImage(px / px.max())


class TestRasterImage:
    def test_intensity_bounds_enforced(self):
        with pytest.raises(ValueError):
            RasterImage(np.full((2, 2), 1.5))

    def test_flatten_round_trip(self):
        rng = np.random.default_rng(5)
        img = RasterImage(rng.random((4, 6)))
        back = unflatten(img.flatten(), 4, 6)
        np.testing.assert_array_equal(back.pixels, img.pixels)


class TestShift:
    def test_zero_shift_identity(self):
        img = blob_image()
        np.testing.assert_array_equal(shift(img, 0, 0).pixels, img.pixels)

    def test_two_by_two_right_shift(self):
        img = RasterImage(np.array([[0.1, 0.2], [0.3, 0.4]]))
        out = shift(img, 1, 0)
        np.testing.assert_allclose(out.pixels, [[0.0, 0.1], [0.0, 0.3]])

    def test_composition_cancels_on_padded_image(self):
        px = np.zeros((5, 5))
        px[1:4, 1:4] = 0.7  # empty first and last columns
        img = RasterImage(px)
        back = shift(shift(img, 1, 0), -1, 0)
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_too_large_rejected(self):
        with pytest.raises(ShiftTooLarge):
            shift(blob_image(side=6), 4, 0)

    def test_mass_change_equals_border_loss(self):
        img = blob_image(side=9, sigma=2.0)
        out = shift(img, 2, 0)
        lost = img.pixels[:, -2:].sum()
        assert abs((img.pixels.sum() - out.pixels.sum()) - lost) < 1e-12


class TestRotate:
    def test_zero_angle_identity(self):
        img = blob_image()
        np.testing.assert_array_equal(rotate_small(img, 0.0).pixels, img.pixels)

    def test_zero_image_fixed_point(self):
        img = RasterImage(np.zeros((8, 8)))
        assert rotate_small(img, 10.0).pixels.sum() == 0.0

    def test_angle_limit(self):
        with pytest.raises(AngleTooLarge):
            rotate_small(blob_image(), 20.0)

    def test_mass_roughly_conserved_under_composition(self):
        img = blob_image(side=25, sigma=2.0)
        out = img
        for _ in range(4):
            out = rotate_small(out, 10.0)
        assert abs(out.pixels.sum() - img.pixels.sum()) <= 0.05 * img.pixels.sum()


class TestDeskew:
    def test_symmetric_image_unchanged(self):
        px = np.zeros((9, 9))
        px[2:7, 4] = 1.0  # vertical bar: zero row/column covariance
        img = RasterImage(px)
        np.testing.assert_allclose(deskew(img).pixels, px, atol=1e-9)

    def test_blank_image_rejected(self):
        with pytest.raises(BlankImage):
            deskew(RasterImage(np.zeros((5, 5))))

    def test_sheared_bar_recovered(self):
        side = 31
        shear = 0.4
        px = np.zeros((side, side))
        center = side // 2
        for r in range(6, side - 6):
            c = center + shear * (r - center)
            c0 = int(np.floor(c))
            w = c - c0
            px[r, c0] += 1.0 - w
            px[r, c0 + 1] += w
        img = RasterImage(np.clip(px, 0.0, 1.0))
        out = deskew(img).pixels
        rows, cols = np.mgrid[:side, :side]
        total = out.sum()
        r_bar = (rows * out).sum() / total
        c_bar = (cols * out).sum() / total
        mu_rr = (((rows - r_bar) ** 2) * out).sum() / total
        mu_rc = (((rows - r_bar) * (cols - c_bar)) * out).sum() / total
        assert abs(mu_rc / mu_rr) <= 0.05


class TestMakeTangents:
    def test_identity_descriptor(self):
        img = blob_image(side=7)
        rows = make_tangents(img, [("shift", 0, 0)])
        np.testing.assert_array_equal(rows[0], img.flatten())

    def test_blank_image_zero_tangents(self):
        img = RasterImage(np.zeros((6, 6)))
        rows = make_tangents(
            img, [("shift", 1, 0), ("shift", -1, 0), ("shift", 0, 1), ("shift", 0, -1)]
        )
        np.testing.assert_array_equal(rows - img.flatten(), np.zeros((4, 36)))

    def test_asymmetric_image_independent_tangents(self):
        from localmahal.invariance import build_tangent_set

        px = np.zeros((6, 6))
        px[2, 1] = 1.0
        px[3, 4] = 0.5
        px[4, 2] = 0.25
        img = RasterImage(px)
        rows = make_tangents(img, [("shift", 1, 0), ("shift", -1, 0)])
        t = build_tangent_set(img.flatten(), rows)
        assert t.size == 2

    def test_outputs_stay_in_range(self):
        img = blob_image()
        rows = make_tangents(img, [("shift", 1, 1), ("rotate", 7.5)])
        assert rows.min() >= 0.0 and rows.max() <= 1.0


class TestParseTransforms:
    def test_mixed_spec(self):
        spec = parse_transforms("shift:1,0;rotate:5;shift:-1,-1")
        assert spec == [("shift", 1, 0), ("rotate", 5.0), ("shift", -1, -1)]

    def test_unit_shift_shorthand(self):
        assert len(parse_transforms("unit-shifts")) == 4

    def test_bad_descriptor(self):
        with pytest.raises(ValueError):
            parse_transforms("spin:90")
