"""Resampling helpers shared by extraction, augmentation and attention maps."""

import numpy as np

from cineavd.interp import resize_bilinear_2d, resize_trilinear, rotate_bilinear


class TestBilinear:
    def test_identity_size_is_exact(self, rng):
        img = rng.standard_normal((9, 7)).astype(np.float32)
        np.testing.assert_array_equal(resize_bilinear_2d(img, (9, 7)), img)

    def test_constant_preserved(self):
        img = np.full((6, 6), 3.25, dtype=np.float32)
        np.testing.assert_allclose(resize_bilinear_2d(img, (11, 4)), 3.25, atol=1e-6)

    def test_doubling_interpolates_between_samples(self):
        img = np.array([[0.0, 1.0]], dtype=np.float64)
        out = resize_bilinear_2d(np.repeat(img, 2, axis=0), (2, 4))
        assert out[0, 0] == 0.0 and out[0, 3] == 1.0
        assert 0.0 < out[0, 1] < out[0, 2] < 1.0


class TestTrilinear:
    def test_identity_shape(self, rng):
        vol = rng.standard_normal((5, 4, 3)).astype(np.float32)
        np.testing.assert_array_equal(resize_trilinear(vol, (5, 4, 3)), vol)

    def test_constant_preserved_any_shape(self):
        vol = np.full((4, 4, 2), -1.5, dtype=np.float32)
        np.testing.assert_allclose(resize_trilinear(vol, (9, 3, 7)), -1.5, atol=1e-6)

    def test_range_bounded_by_input(self, rng):
        vol = rng.random((6, 6, 4))
        out = resize_trilinear(vol, (13, 5, 9))
        assert out.min() >= vol.min() - 1e-12
        assert out.max() <= vol.max() + 1e-12


class TestRotate:
    def test_quarter_turn_moves_bright_spot(self):
        img = np.zeros((15, 15), dtype=np.float32)
        img[7, 12] = 1.0  # right of center
        out = rotate_bilinear(img, 90.0)
        assert out[7, 12] < 0.5
        assert out[2:5, 6:9].max() > 0.5 or out[10:13, 6:9].max() > 0.5

    def test_outside_is_zero_filled(self):
        img = np.ones((8, 8), dtype=np.float32)
        out = rotate_bilinear(img, 45.0)
        assert out[0, 0] == 0.0 and out[-1, -1] == 0.0
