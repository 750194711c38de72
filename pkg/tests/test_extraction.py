"""Heart-extraction pipeline stages against analytic and brute-force oracles."""

import numpy as np
import pytest

from cineavd.errors import ExtractionError
from cineavd.extraction import (BoundingBox, ExtractionConfig, canny_edges,
                                detect_heart_bbox, dilate_diamond, extract_heart,
                                frame_difference, largest_component_bbox)
from cineavd.phantom import PhantomConfig, generate_phantom
from cineavd.volume import CineVolume

from conftest import brute_force_dilate_diamond

CFG = ExtractionConfig()


def _disk_mask(h, w, cy, cx, radius):
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2


class TestFrameDifference:
    def test_static_scene_is_zero(self, rng):
        frame = rng.random((10, 10)).astype(np.float32)
        vol = CineVolume(np.repeat(frame[:, :, None], 5, axis=2))
        np.testing.assert_array_equal(frame_difference(vol, CFG), 0.0)

    def test_two_frames_collision_bump(self, rng):
        a = rng.random((6, 6)).astype(np.float32)
        b = rng.random((6, 6)).astype(np.float32)
        vol = CineVolume(np.stack([a, b], axis=2))
        # early=round(0)=0, late=round(0.33)=0 -> bumped to 1
        np.testing.assert_allclose(frame_difference(vol, CFG),
                                   np.abs(b.astype(np.float64) - a.astype(np.float64)))

    def test_translating_disk_difference_region(self):
        h = w = 48
        frames = np.full((h, w, 10), 0.1, dtype=np.float32)
        m_early = _disk_mask(h, w, 24, 20, 6)
        m_late = _disk_mask(h, w, 24, 25, 6)
        frames[:, :, 0][m_early] = 1.0
        # defaults pick late index round(0.33 * 9) = 3
        frames[:, :, 3][m_late] = 1.0
        diff = frame_difference(CineVolume(frames), CFG)
        sym = m_early ^ m_late
        assert np.all(diff[sym] > 0.5)
        assert np.all(diff[~(m_early | m_late)] == 0.0)


class TestCanny:
    def test_constant_image_empty(self):
        assert not canny_edges(np.full((32, 32), 5.0), CFG).any()

    def test_vertical_step_edge_thin_and_localized(self):
        img = np.zeros((64, 64))
        img[:, 32:] = 100.0
        edges = canny_edges(img, CFG)
        rows, cols = np.nonzero(edges)
        assert len(rows) >= 32  # a full-height line
        assert set(np.unique(cols)) <= {31, 32}  # within +-1 column of the step
        for r in range(4, 60):
            assert edges[r].sum() <= 2

    def test_hysteresis_drops_weak_isolated_edge(self):
        img = np.zeros((64, 64))
        img[:, 20:] += 100.0  # strong step at col 20
        img[:, 44:] += 1.0    # weak step at col 44
        edges = canny_edges(img, CFG)
        cols = set(np.unique(np.nonzero(edges)[1]))
        assert cols & {19, 20, 21}
        assert not cols & {43, 44, 45}

    def test_nms_invariant_no_dominated_pixels(self, rng):
        from cineavd.extraction import _nms, _smooth
        img = rng.random((40, 40)) * 10
        smoothed = _smooth(img, CFG.canny_sigma)
        gr, gc = np.gradient(smoothed)
        mag = np.hypot(gr, gc)
        keep = _nms(mag, gr, gc)
        angle = np.mod(np.arctan2(gr, gc), np.pi)
        bins = ((angle + np.pi / 8) // (np.pi / 4)).astype(int) % 4
        offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
        padded = np.zeros((42, 42))
        padded[1:-1, 1:-1] = mag
        for r, c in zip(*np.nonzero(keep)):
            dr, dc = offsets[bins[r, c]]
            fwd = padded[1 + r + dr, 1 + c + dc]
            bwd = padded[1 + r - dr, 1 + c - dc]
            assert not (fwd > mag[r, c] and bwd > mag[r, c])


class TestDilateDiamond:
    def test_empty_stays_empty(self):
        assert not dilate_diamond(np.zeros((8, 8), dtype=bool), 2).any()

    def test_single_pixel_radius2_diamond(self):
        mask = np.zeros((9, 9), dtype=bool)
        mask[4, 4] = True
        out = dilate_diamond(mask, 2)
        assert out.sum() == 13  # 1+3+5+3+1
        rows, cols = np.nonzero(out)
        assert all(abs(r - 4) + abs(c - 4) <= 2 for r, c in zip(rows, cols))

    @pytest.mark.parametrize("case", range(20))
    def test_random_masks_match_brute_force(self, case):
        rng = np.random.default_rng(7000 + case)
        mask = rng.random((32, 32)) < 0.08
        radius = int(rng.integers(1, 4))
        np.testing.assert_array_equal(dilate_diamond(mask, radius),
                                      brute_force_dilate_diamond(mask, radius))


class TestLargestComponent:
    def test_single_pixel(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[3, 5] = True
        assert largest_component_bbox(mask) == BoundingBox(3, 3, 5, 5)

    def test_larger_blob_wins(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[1:3, 1:6] = True          # 10 pixels
        mask[10:15, 10:15] = True      # 25 pixels
        assert largest_component_bbox(mask) == BoundingBox(10, 14, 10, 14)

    def test_empty_mask_raises(self):
        with pytest.raises(ExtractionError, match="no moving structure found"):
            largest_component_bbox(np.zeros((4, 4), dtype=bool))

    def test_tie_broken_lexicographically(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[6:8, 6:8] = True
        mask[1:3, 1:3] = True  # same size, smaller corner
        assert largest_component_bbox(mask) == BoundingBox(1, 2, 1, 2)

    def test_diagonal_pixels_are_connected(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1, 1] = mask[2, 2] = mask[3, 3] = True
        assert largest_component_bbox(mask) == BoundingBox(1, 3, 1, 3)


class TestExtractHeart:
    def test_output_dims_and_spacing(self):
        cfg = PhantomConfig(grid=(96, 96, 10))
        vol, _ = generate_phantom(2, cfg, np.random.default_rng(3))
        out = extract_heart(vol, ExtractionConfig(target_hw=(64, 64)))
        assert out.shape == (64, 64, 10)
        assert out.spacing_mm == (1.0, 1.0)

    def test_static_volume_raises(self, rng):
        frame = rng.random((48, 48)).astype(np.float32) * 0  # exactly static
        vol = CineVolume(np.repeat(frame[:, :, None], 6, axis=2))
        with pytest.raises(ExtractionError, match="no moving structure found"):
            extract_heart(vol, ExtractionConfig(target_hw=(32, 32)))

    def test_deterministic(self):
        cfg = PhantomConfig(grid=(96, 96, 8))
        vol, _ = generate_phantom(1, cfg, np.random.default_rng(5))
        a = extract_heart(vol, ExtractionConfig(target_hw=(64, 64)))
        b = extract_heart(vol, ExtractionConfig(target_hw=(64, 64)))
        assert a.voxels.tobytes() == b.voxels.tobytes()

    def test_phantom_bbox_iou_and_distractor_exclusion(self):
        hits = 0
        for seed in range(10):
            cfg = PhantomConfig()
            vol, truth = generate_phantom(seed % 4, cfg, np.random.default_rng(100 + seed))
            bbox = detect_heart_bbox(vol, CFG)
            if bbox.iou(truth.union_bbox) >= 0.7:
                hits += 1
        assert hits >= 9

    def test_low_cardiac_function_phantoms_still_found(self):
        """Reduced contraction amplitude (weak motion) must not break extraction."""
        hits = 0
        for seed in range(20):
            cfg = PhantomConfig(contraction_amplitude=0.08)
            vol, truth = generate_phantom(seed % 4, cfg, np.random.default_rng(500 + seed))
            bbox = detect_heart_bbox(vol, CFG)
            hits += bbox.iou(truth.union_bbox) >= 0.7
        assert hits >= 18

    def test_resampling_respects_spacing(self):
        cfg = PhantomConfig(grid=(96, 96, 8))
        vol, truth = generate_phantom(0, cfg, np.random.default_rng(11))
        half = CineVolume(vol.voxels, (2.0, 2.0), "x")  # 2 mm pixels -> doubles the crop
        out = extract_heart(half, ExtractionConfig(target_hw=(224, 224)))
        bbox = detect_heart_bbox(half, CFG)
        # the resampled crop is about twice the bbox extent, well below 224 padding
        assert out.shape == (224, 224, 8)
        nz = np.nonzero(out.voxels[:, :, 0])
        extent = (nz[0].max() - nz[0].min() + 1, nz[1].max() - nz[1].min() + 1)
        assert abs(extent[0] - 2 * bbox.height) <= 3
        assert abs(extent[1] - 2 * bbox.width) <= 3

    def test_implausible_region_raises(self):
        # moving disk with 0.3 mm pixels: the ~20 px bbox resamples below 8x8
        h = w = 64
        frames = np.full((h, w, 4), 0.1, dtype=np.float32)
        frames[:, :, 0][_disk_mask(h, w, 32, 30, 9)] = 1.0
        for t in (1, 2, 3):
            frames[:, :, t][_disk_mask(h, w, 32, 34, 9)] = 1.0
        vol = CineVolume(frames, (0.3, 0.3))
        with pytest.raises(ExtractionError, match="implausible heart region"):
            extract_heart(vol, ExtractionConfig(target_hw=(32, 32)))

    def test_debug_dump_writes_stages(self, tmp_path):
        cfg = PhantomConfig(grid=(96, 96, 8))
        vol, _ = generate_phantom(3, cfg, np.random.default_rng(21))
        vol.subject_id = "dbg"
        extract_heart(vol, ExtractionConfig(target_hw=(64, 64)), debug_dir=tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert {"dbg_difference.ctv", "dbg_edges.ctv", "dbg_dilated.ctv",
                "dbg_bbox_overlay.ctv"} <= names
