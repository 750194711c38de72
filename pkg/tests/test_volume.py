"""Cine volume model, .ctv round trips, depth resize, z-score."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cineavd.errors import VolumeError
from cineavd.volume import (CineVolume, depth_resize_weights, read_ctv,
                            resize_depth_area, write_ctv, zscore_normalize)


def make_volume(rng, shape=(8, 8, 4), spacing=(1.2, 1.4)):
    return CineVolume(rng.standard_normal(shape).astype(np.float32) * 10, spacing, "subj")


class TestCtvFormat:
    def test_zero_volume_round_trip(self, tmp_path):
        vol = CineVolume(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0), "z")
        path = tmp_path / "z.ctv"
        write_ctv(vol, path)
        header_len = open(path, "rb").readline()
        assert (path.stat().st_size - len(header_len)) == 32
        back = read_ctv(path)
        np.testing.assert_array_equal(back.voxels, vol.voxels)

    def test_nan_voxel_rejected(self):
        bad = np.zeros((2, 2, 2), dtype=np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(VolumeError, match="non-finite voxel"):
            CineVolume(bad)

    def test_round_trip_random_volume(self, tmp_path):
        rng = np.random.default_rng(7)
        vol = make_volume(rng)
        path = tmp_path / "v.ctv"
        write_ctv(vol, path)
        back = read_ctv(path)
        np.testing.assert_array_equal(back.voxels, vol.voxels)
        assert back.spacing_mm == vol.spacing_mm
        assert back.subject_id == vol.subject_id

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 6), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
    def test_round_trip_is_bit_exact(self, tmp_path_factory, h, w, d, seed):
        rng = np.random.default_rng(seed)
        voxels = (rng.standard_normal((h, w, d))
                  * 10.0 ** float(rng.integers(-3, 4))).astype(np.float32)
        vol = CineVolume(voxels, (0.5 + rng.random(), 0.5 + rng.random()), f"s{seed}")
        path = tmp_path_factory.mktemp("ctv") / "x.ctv"
        write_ctv(vol, path)
        back = read_ctv(path)
        assert back.voxels.tobytes() == vol.voxels.tobytes()

    def test_truncated_payload(self, tmp_path):
        vol = CineVolume(np.zeros((2, 2, 2), dtype=np.float32))
        path = tmp_path / "t.ctv"
        write_ctv(vol, path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])  # drop one float
        with pytest.raises(VolumeError, match="payload length mismatch"):
            read_ctv(path)

    def test_bad_magic(self, tmp_path):
        vol = CineVolume(np.zeros((2, 2, 2), dtype=np.float32))
        path = tmp_path / "m.ctv"
        write_ctv(vol, path)
        data = path.read_bytes().replace(b"CTV1", b"XTV1", 1)
        path.write_bytes(data)
        with pytest.raises(VolumeError, match="bad magic"):
            read_ctv(path)

    def test_invariants_enforced(self):
        with pytest.raises(VolumeError):
            CineVolume(np.zeros((1, 4, 4), dtype=np.float32))
        with pytest.raises(VolumeError):
            CineVolume(np.zeros((4, 4, 4), dtype=np.float32), (0.0, 1.0))
        with pytest.raises(VolumeError):
            CineVolume(np.zeros((4, 4, 4), dtype=np.float32), (1.0, 11.0))


class TestDepthResize:
    def test_identity_when_depths_match(self, rng):
        vol = make_volume(rng, (6, 6, 5))
        out = resize_depth_area(vol, 5)
        np.testing.assert_array_equal(out.voxels, vol.voxels)

    def test_constant_volume_preserved_exactly(self):
        vol = CineVolume(np.full((4, 4, 7), 2.75, dtype=np.float32))
        out = resize_depth_area(vol, 3)
        np.testing.assert_array_equal(out.voxels, np.full((4, 4, 3), 2.75, dtype=np.float32))

    def test_four_to_two_frame_average(self):
        frames = np.zeros((2, 2, 4), dtype=np.float32)
        for t in range(4):
            frames[:, :, t] = t
        out = resize_depth_area(CineVolume(frames), 2)
        np.testing.assert_allclose(out.voxels[:, :, 0], 0.5)
        np.testing.assert_allclose(out.voxels[:, :, 1], 2.5)

    def test_weights_match_direct_summation_oracle(self):
        # D=3 -> T=2: intervals [0,1.5) and [1.5,3)
        w = depth_resize_weights(3, 2)
        np.testing.assert_allclose(w[0], [1 / 1.5, 0.5 / 1.5, 0])
        np.testing.assert_allclose(w[1], [0, 0.5 / 1.5, 1 / 1.5])

    @pytest.mark.parametrize("d,t", [(4, 2), (5, 3), (3, 7), (6, 6), (2, 5), (12, 30)])
    def test_mean_of_frame_means_preserved(self, rng, d, t):
        vol = make_volume(rng, (5, 5, d))
        out = resize_depth_area(vol, t)
        assert out.frame_count == t
        before = vol.voxels.astype(np.float64).mean()
        after = out.voxels.astype(np.float64).mean()
        assert abs(before - after) < 1e-5

    def test_rows_sum_to_one(self):
        for d, t in [(7, 3), (3, 8), (10, 10)]:
            w = depth_resize_weights(d, t)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_spatial_dims_and_spacing_unchanged(self, rng):
        vol = make_volume(rng, (6, 7, 4), spacing=(1.1, 1.3))
        out = resize_depth_area(vol, 9)
        assert out.shape == (6, 7, 9)
        assert out.spacing_mm == (1.1, 1.3)


class TestZscore:
    def test_two_point_symmetry(self):
        v = np.zeros((2, 2, 2), dtype=np.float32)
        v[:, :, 1] = 2.0
        out = zscore_normalize(CineVolume(v))
        np.testing.assert_allclose(sorted(np.unique(out.voxels)), [-1.0, 1.0], atol=1e-6)

    def test_idempotent_within_tolerance(self, rng):
        vol = make_volume(rng, (8, 8, 4))
        once = zscore_normalize(vol)
        twice = zscore_normalize(once)
        np.testing.assert_allclose(twice.voxels, once.voxels, atol=1e-6)

    def test_against_two_pass_oracle(self, rng):
        vol = make_volume(rng, (16, 16, 8))
        out = zscore_normalize(vol).voxels.astype(np.float64)
        total = 0.0
        for x in vol.voxels.reshape(-1):
            total += float(x)
        mean = total / vol.voxels.size
        ss = 0.0
        for x in vol.voxels.reshape(-1):
            ss += (float(x) - mean) ** 2
        std = np.sqrt(ss / vol.voxels.size)
        np.testing.assert_allclose(out, (vol.voxels.astype(np.float64) - mean) / std, atol=1e-6)
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1.0) < 1e-5

    def test_degenerate_volume_rejected(self):
        with pytest.raises(VolumeError, match="degenerate volume"):
            zscore_normalize(CineVolume(np.full((3, 3, 3), 4.0, dtype=np.float32)))
