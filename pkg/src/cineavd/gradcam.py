"""Class-discriminative spatio-temporal attention maps.

The backward pass is seeded with a one-hot vector on the pre-softmax logits
(only the targeted class contributes); channel weights are the spatial means
of the captured layer's gradient; the ReLU-rectified weighted activation sum
is rescaled (trilinear) to the classifier input grid and min-max normalized
so min = 0 and max = 1 exactly, unless the raw map is identically zero.
"""

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .densenet import Model, final_transition_conv
from .errors import EvalError
from .interp import resize_trilinear
from .nn.tensor import Tensor
from .volume import CineVolume, write_ctv


@dataclass
class Heatmap:
    values: np.ndarray  # (H, W, D) float32 in [0, 1]
    target_class: int
    source_layer: str
    empty_attention: bool = False


def gradcam(model: Model, volume: np.ndarray, target_class: int, layer: str = None) -> Heatmap:
    """Attention map for one standardized (H, W, D) classifier input."""
    if not 0 <= target_class < model.cfg.num_classes:
        raise EvalError(f"target_class {target_class} outside "
                        f"[0, {model.cfg.num_classes})")
    layer = layer or final_transition_conv(model)
    volume = np.asarray(volume, dtype=np.float32)
    if volume.shape != model.cfg.input_shape:
        raise EvalError(f"volume shape {volume.shape} does not match model input "
                        f"{model.cfg.input_shape}")
    result = model.forward(Tensor(volume[None, None]), training=False, capture=layer)
    seed = np.zeros(result.logits.shape, dtype=result.logits.dtype)
    seed[0, target_class] = 1.0
    grads_by_node = {}  # keep the model itself untouched (read-only contract)
    result.logits.backward(seed, grad_store=grads_by_node)
    captured_grad = grads_by_node.get(id(result.captured))
    if captured_grad is None:
        raise EvalError(f"layer {layer!r} received no gradient")

    acts = result.captured.data[0].astype(np.float64)
    grads = captured_grad[0].astype(np.float64)
    weights = grads.mean(axis=(1, 2, 3))
    raw = np.maximum(np.tensordot(weights, acts, axes=([0], [0])), 0.0)
    scaled = resize_trilinear(raw, model.cfg.input_shape)
    peak = scaled.max()
    if peak <= 0.0:
        warnings.warn("empty attention: all channel contributions were rectified away")
        return Heatmap(np.zeros(model.cfg.input_shape, dtype=np.float32),
                       target_class, layer, empty_attention=True)
    low = scaled.min()
    values = ((scaled - low) / (peak - low)).astype(np.float32)
    return Heatmap(values, target_class, layer)


def _heat_rgb(v: np.ndarray) -> np.ndarray:
    """Blue (0) to red (1) colormap, shape (..., 3)."""
    return np.stack([v, np.zeros_like(v), 1.0 - v], axis=-1)


def overlay_export(cine: CineVolume, heatmap: Heatmap, out_dir) -> list:
    """Write one PPM per frame (heatmap alpha-blended over the grayscale cine,
    per-pixel alpha = 0.4 * heat) plus an index.txt; returns the frame paths."""
    if cine.shape != heatmap.values.shape:
        raise EvalError(f"cine shape {cine.shape} does not match heatmap "
                        f"{heatmap.values.shape}")
    os.makedirs(out_dir, exist_ok=True)
    vox = cine.voxels.astype(np.float64)
    lo, hi = vox.min(), vox.max()
    under = (vox - lo) / (hi - lo) if hi > lo else np.zeros_like(vox)
    paths = []
    h, w, d = cine.shape
    for t in range(d):
        gray = np.repeat(under[:, :, t][:, :, None], 3, axis=2)
        heat = heatmap.values[:, :, t].astype(np.float64)
        alpha = (0.4 * heat)[:, :, None]
        rgb = (1.0 - alpha) * gray + alpha * _heat_rgb(heat)
        img = np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)
        path = os.path.join(out_dir, f"frame_{t:03d}.ppm")
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
        paths.append(path)
    with open(os.path.join(out_dir, "index.txt"), "w") as fh:
        fh.write(f"subject {cine.subject_id} class {heatmap.target_class} "
                 f"layer {heatmap.source_layer}\n")
        for p in paths:
            fh.write(os.path.basename(p) + "\n")
    return paths


def save_heatmap_ctv(heatmap: Heatmap, path, subject_id="") -> None:
    write_ctv(CineVolume(heatmap.values, (1.0, 1.0), subject_id), path)
