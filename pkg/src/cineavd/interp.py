"""Bilinear / trilinear resampling helpers (center-aligned grids).

Output pixel i samples input coordinate (i + 0.5) * (in/out) - 0.5; border
handling is clamp for resizing and zero-fill for rotation.
"""

import numpy as np


def _axis_coords(out_size: int, in_size: int) -> np.ndarray:
    return (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5


def _gather_weights(coords: np.ndarray, in_size: int):
    lo = np.floor(coords).astype(np.int64)
    frac = coords - lo
    lo0 = np.clip(lo, 0, in_size - 1)
    lo1 = np.clip(lo + 1, 0, in_size - 1)
    return lo0, lo1, frac


def resize_bilinear_2d(img: np.ndarray, out_hw) -> np.ndarray:
    h, w = img.shape
    oh, ow = int(out_hw[0]), int(out_hw[1])
    r0, r1, fr = _gather_weights(_axis_coords(oh, h), h)
    c0, c1, fc = _gather_weights(_axis_coords(ow, w), w)
    img64 = img.astype(np.float64, copy=False)
    top = img64[r0][:, c0] * (1 - fc)[None, :] + img64[r0][:, c1] * fc[None, :]
    bot = img64[r1][:, c0] * (1 - fc)[None, :] + img64[r1][:, c1] * fc[None, :]
    out = top * (1 - fr)[:, None] + bot * fr[:, None]
    return out.astype(img.dtype, copy=False)


def rotate_bilinear(img: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image center; samples outside the frame become ``fill``."""
    h, w = img.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rad = np.deg2rad(angle_deg)
    cos, sin = np.cos(rad), np.sin(rad)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    # inverse mapping: rotate output coords by -angle
    src_r = cos * (rows - cr) + sin * (cols - cc) + cr
    src_c = -sin * (rows - cr) + cos * (cols - cc) + cc
    inside = (src_r >= 0) & (src_r <= h - 1) & (src_c >= 0) & (src_c <= w - 1)
    r0 = np.clip(np.floor(src_r).astype(np.int64), 0, h - 1)
    c0 = np.clip(np.floor(src_c).astype(np.int64), 0, w - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    c1 = np.clip(c0 + 1, 0, w - 1)
    fr = np.clip(src_r - r0, 0.0, 1.0)
    fc = np.clip(src_c - c0, 0.0, 1.0)
    img64 = img.astype(np.float64, copy=False)
    val = (img64[r0, c0] * (1 - fr) * (1 - fc) + img64[r0, c1] * (1 - fr) * fc
           + img64[r1, c0] * fr * (1 - fc) + img64[r1, c1] * fr * fc)
    out = np.where(inside, val, fill)
    return out.astype(img.dtype, copy=False)


def resize_trilinear(vol: np.ndarray, out_shape) -> np.ndarray:
    """Separable trilinear resize of an (H, W, D) volume."""
    out = vol.astype(np.float64, copy=False)
    for axis, target in enumerate(out_shape):
        in_size = out.shape[axis]
        target = int(target)
        if target == in_size:
            continue
        lo0, lo1, frac = _gather_weights(_axis_coords(target, in_size), in_size)
        moved = np.moveaxis(out, axis, 0)
        mixed = moved[lo0] * (1 - frac).reshape(-1, *([1] * (moved.ndim - 1))) \
            + moved[lo1] * frac.reshape(-1, *([1] * (moved.ndim - 1)))
        out = np.moveaxis(mixed, 0, axis)
    return out.astype(vol.dtype, copy=False)
