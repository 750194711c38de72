"""On-the-fly training augmentation: rotation, contrast, bias field.

Each transform fires independently with the configured probability.  Draw
order is fixed (rotation gate+angle, contrast gate+gamma, bias gate+coeffs)
so a seeded generator reproduces the exact same augmented volume.
"""

import numpy as np

from .interp import rotate_bilinear


def _apply_rotation(vol: np.ndarray, angle_deg: float) -> np.ndarray:
    out = np.empty_like(vol)
    for t in range(vol.shape[2]):
        out[:, :, t] = rotate_bilinear(vol[:, :, t], angle_deg, fill=0.0)
    return out


def _apply_contrast(vol: np.ndarray, gamma: float) -> np.ndarray:
    lo, hi = float(vol.min()), float(vol.max())
    if hi <= lo:
        return vol
    unit = (vol.astype(np.float64) - lo) / (hi - lo)
    return (np.power(unit, gamma) * (hi - lo) + lo).astype(vol.dtype)


def _bias_field(shape_hw, order: int, coeffs: np.ndarray) -> np.ndarray:
    h, w = shape_hw
    ys = np.linspace(-1.0, 1.0, h)[:, None]
    xs = np.linspace(-1.0, 1.0, w)[None, :]
    poly = np.zeros((h, w), dtype=np.float64)
    k = 0
    for i in range(order + 1):
        for j in range(order + 1 - i):
            poly += coeffs[k] * (ys ** i) * (xs ** j)
            k += 1
    return np.exp(poly)


def num_bias_coeffs(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def augment(vol: np.ndarray, cfg, rng) -> np.ndarray:
    """Augment one standardized (H, W, D) volume with a per-sample generator.

    ``cfg`` provides augment_prob, rotation_range_deg, contrast_gamma_range,
    bias_field_order and bias_coeff_range (see TrainConfig).
    """
    out = vol
    if rng.random() < cfg.augment_prob:
        angle = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)
        out = _apply_rotation(out, angle)
    if rng.random() < cfg.augment_prob:
        gamma = rng.uniform(cfg.contrast_gamma_range[0], cfg.contrast_gamma_range[1])
        out = _apply_contrast(out, gamma)
    if rng.random() < cfg.augment_prob:
        coeffs = rng.uniform(cfg.bias_coeff_range[0], cfg.bias_coeff_range[1],
                             size=num_bias_coeffs(cfg.bias_field_order))
        field = _bias_field(out.shape[:2], cfg.bias_field_order, coeffs)
        out = (out.astype(np.float64) * field[:, :, None]).astype(vol.dtype)
    return out
