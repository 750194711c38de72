"""Attention-map contracts: normalization, scale invariance, overlay blending."""

import numpy as np
import pytest

from cineavd.densenet import ArchConfig, build_model
from cineavd.errors import EvalError
from cineavd.gradcam import Heatmap, gradcam, overlay_export, save_heatmap_ctv
from cineavd.nn import Tensor
from cineavd.volume import CineVolume, read_ctv

CFG = ArchConfig(growth_rate=2, init_channels=4, num_classes=2, input_shape=(16, 16, 8))


@pytest.fixture(scope="module")
def warm_model():
    model = build_model(CFG, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(3):  # populate BN running statistics
        model.forward(Tensor(rng.standard_normal((2, 1, 16, 16, 8)).astype(np.float32)),
                      training=True)
    return model


@pytest.fixture
def sample(rng):
    return rng.standard_normal(CFG.input_shape).astype(np.float32)


class TestGradcam:
    def test_min_zero_max_one_and_shape(self, warm_model, sample):
        heat = gradcam(warm_model, sample, target_class=1)
        assert heat.values.shape == CFG.input_shape
        if not heat.empty_attention:
            assert heat.values.min() == 0.0
            assert heat.values.max() == 1.0
        assert heat.source_layer == "transition3.conv"

    def test_invalid_class_rejected(self, warm_model, sample):
        with pytest.raises(EvalError):
            gradcam(warm_model, sample, target_class=2)

    def test_invariant_to_positive_head_rescaling(self, warm_model, sample):
        before = gradcam(warm_model, sample, target_class=1).values.copy()
        w = warm_model.head_linear.weight
        original = w.data.copy()
        try:
            w.data = original.copy()
            w.data[1] *= 3.7
            after = gradcam(warm_model, sample, target_class=1).values
        finally:
            w.data = original
        np.testing.assert_allclose(after, before, atol=1e-5)

    def test_empty_attention_flagged(self, warm_model, sample):
        """Zeroed capture-layer weights give identically-zero activations, so the
        rectified map is empty regardless of the gradients."""
        w = warm_model.transitions[2].conv.weight
        original = w.data.copy()
        try:
            w.data = np.zeros_like(original)
            with pytest.warns(UserWarning, match="empty attention"):
                heat = gradcam(warm_model, sample, target_class=0)
        finally:
            w.data = original
        assert heat.empty_attention
        np.testing.assert_array_equal(heat.values, 0.0)

    def test_gradcam_deterministic(self, warm_model, sample):
        a = gradcam(warm_model, sample, target_class=0)
        b = gradcam(warm_model, sample, target_class=0)
        assert a.values.tobytes() == b.values.tobytes()

    def test_gradcam_leaves_model_untouched(self, warm_model, sample):
        warm_model.zero_grad()
        params_before = [t.data.copy() for _, t in warm_model.parameters()]
        gradcam(warm_model, sample, target_class=1)
        for (_, t), before in zip(warm_model.parameters(), params_before):
            assert t.grad is None
            np.testing.assert_array_equal(t.data, before)

    def test_capture_layer_configurable(self, warm_model, sample):
        heat = gradcam(warm_model, sample, target_class=1, layer="transition2.conv")
        assert heat.source_layer == "transition2.conv"
        assert heat.values.shape == CFG.input_shape


def _fixture_pair():
    i, j, t = np.meshgrid(np.arange(16), np.arange(16), np.arange(3), indexing="ij")
    vol = CineVolume((i * 0.1 + j * 0.05 + t * 0.2).astype(np.float32), (1, 1), "fix")
    r = np.hypot(i - 8, j - 8) / 12.0
    heat = Heatmap(np.clip(1 - r, 0, 1).astype(np.float32), 1, "transition3.conv")
    return vol, heat


class TestOverlay:
    def test_zero_heatmap_equals_grayscale(self, tmp_path):
        vol, _ = _fixture_pair()
        heat = Heatmap(np.zeros(vol.shape, dtype=np.float32), 0, "x")
        paths = overlay_export(vol, heat, tmp_path)
        raw = open(paths[0], "rb").read()
        header, pixels = raw.split(b"255\n", 1)
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(16, 16, 3)
        vox = vol.voxels.astype(np.float64)
        under = (vox - vox.min()) / (vox.max() - vox.min())
        expected = np.floor(under[:, :, 0] * 255 + 0.5).astype(np.uint8)
        for ch in range(3):
            np.testing.assert_array_equal(img[:, :, ch], expected)

    def test_uniform_heatmap_closed_form_blend(self, tmp_path):
        vol, _ = _fixture_pair()
        heat = Heatmap(np.ones(vol.shape, dtype=np.float32), 0, "x")
        paths = overlay_export(vol, heat, tmp_path)
        raw = open(paths[1], "rb").read()
        img = np.frombuffer(raw.split(b"255\n", 1)[1], dtype=np.uint8).reshape(16, 16, 3)
        vox = vol.voxels.astype(np.float64)
        under = (vox - vox.min()) / (vox.max() - vox.min())
        gray = under[:, :, 1]
        # alpha 0.4 toward pure red (1, 0, 0)
        np.testing.assert_array_equal(img[:, :, 0],
                                      np.floor((0.6 * gray + 0.4) * 255 + 0.5).astype(np.uint8))
        np.testing.assert_array_equal(img[:, :, 1],
                                      np.floor(0.6 * gray * 255 + 0.5).astype(np.uint8))

    def test_golden_ppm_bytes(self, tmp_path):
        vol, heat = _fixture_pair()
        paths = overlay_export(vol, heat, tmp_path)
        for t, path in enumerate(paths):
            golden = open(f"tests/golden/overlay/frame_{t:03d}.ppm", "rb").read()
            assert open(path, "rb").read() == golden

    def test_shape_mismatch_rejected(self, tmp_path):
        vol, _ = _fixture_pair()
        heat = Heatmap(np.zeros((8, 8, 3), dtype=np.float32), 0, "x")
        with pytest.raises(EvalError, match="does not match"):
            overlay_export(vol, heat, tmp_path)

    def test_heatmap_ctv_round_trip(self, tmp_path):
        _, heat = _fixture_pair()
        save_heatmap_ctv(heat, tmp_path / "h.ctv", "fix")
        back = read_ctv(tmp_path / "h.ctv")
        np.testing.assert_array_equal(back.voxels, heat.values)
