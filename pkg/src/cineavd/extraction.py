"""Adaptive heart extraction.

Finds the heart as the largest image structure that moves between an early
and a late systolic frame: absolute frame difference -> Canny edges ->
diamond dilation -> largest connected component -> tight bounding box.  The
crop is resampled to 1x1 mm and center-padded/cropped to a fixed grid.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ExtractionError
from .interp import resize_bilinear_2d
from .volume import CineVolume, write_ctv


@dataclass
class ExtractionConfig:
    canny_sigma: float = 2.0
    dilation_radius_px: int = 2
    target_spacing_mm: tuple = (1.0, 1.0)
    target_hw: tuple = (224, 224)
    early_frame_fraction: float = 0.0
    late_frame_fraction: float = 0.33
    canny_high_percentile: float = 90.0
    canny_low_ratio: float = 0.5

    def __post_init__(self):
        if self.canny_sigma <= 0:
            raise ExtractionError("canny_sigma must be positive")
        if self.dilation_radius_px < 1:
            raise ExtractionError("dilation_radius_px must be >= 1")
        if not 0.0 <= self.early_frame_fraction < self.late_frame_fraction <= 1.0:
            raise ExtractionError("frame fractions must satisfy 0 <= early < late <= 1")
        if not 50.0 < self.canny_high_percentile < 100.0:
            raise ExtractionError("canny_high_percentile must lie in (50, 100)")
        if not 0.0 < self.canny_low_ratio < 1.0:
            raise ExtractionError("canny_low_ratio must lie in (0, 1)")


@dataclass
class BoundingBox:
    """Inclusive pixel bounds of a detected structure."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if not (0 <= self.row_min <= self.row_max and 0 <= self.col_min <= self.col_max):
            raise ExtractionError(f"degenerate bounding box {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    def iou(self, other: "BoundingBox") -> float:
        rmin = max(self.row_min, other.row_min)
        rmax = min(self.row_max, other.row_max)
        cmin = max(self.col_min, other.col_min)
        cmax = min(self.col_max, other.col_max)
        inter = max(0, rmax - rmin + 1) * max(0, cmax - cmin + 1)
        union = self.height * self.width + other.height * other.width - inter
        return inter / union if union else 0.0


def frame_difference(cine: CineVolume, cfg: ExtractionConfig) -> np.ndarray:
    """|late systolic frame - early systolic frame| as a 2-D image."""
    d = cine.frame_count
    if d < 2:
        raise ExtractionError("need at least 2 frames")
    i_early = int(np.rint(cfg.early_frame_fraction * (d - 1)))
    i_late = int(np.rint(cfg.late_frame_fraction * (d - 1)))
    if i_late == i_early:
        if i_early + 1 < d:
            i_late = i_early + 1
        else:
            i_early -= 1
    return np.abs(cine.frame(i_late).astype(np.float64) - cine.frame(i_early).astype(np.float64))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(4.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    k = _gaussian_kernel(sigma)
    r = len(k) // 2
    out = np.pad(image.astype(np.float64), ((r, r), (0, 0)), mode="reflect")
    out = sum(k[i] * out[i:i + image.shape[0]] for i in range(len(k)))
    out = np.pad(out, ((0, 0), (r, r)), mode="reflect")
    out = sum(k[i] * out[:, i:i + image.shape[1]] for i in range(len(k)))
    return out


def _nms(mag: np.ndarray, gr: np.ndarray, gc: np.ndarray) -> np.ndarray:
    """Suppress pixels that are not local maxima along the quantized gradient."""
    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2), dtype=mag.dtype)
    padded[1:-1, 1:-1] = mag
    angle = np.mod(np.arctan2(gr, gc), np.pi)
    bins = ((angle + np.pi / 8) // (np.pi / 4)).astype(np.int64) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dr, dc) in offsets.items():
        sel = bins == b
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= sel & (mag >= fwd) & (mag >= bwd)
    return keep & (mag > 0)


def _dilate8(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = np.zeros_like(mask)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return out


def canny_edges(image: np.ndarray, cfg: ExtractionConfig) -> np.ndarray:
    """Full Canny: Gaussian smoothing, central differences, 4-bin NMS, hysteresis.

    Thresholds are data-driven: high = P{cfg.canny_high_percentile} of the
    nonzero gradient magnitudes, low = cfg.canny_low_ratio * high.
    """
    if not np.all(np.isfinite(image)):
        raise ExtractionError("non-finite image")
    smoothed = _smooth(image, cfg.canny_sigma)
    gr, gc = np.gradient(smoothed)
    mag = np.hypot(gr, gc)
    nonzero = mag[mag > 0]
    if nonzero.size == 0:
        return np.zeros(image.shape, dtype=bool)
    high = np.percentile(nonzero, cfg.canny_high_percentile)
    low = cfg.canny_low_ratio * high
    ridge = _nms(mag, gr, gc)
    strong = ridge & (mag >= high)
    weak = ridge & (mag >= low)
    if not strong.any():
        return np.zeros(image.shape, dtype=bool)
    # grow strong seeds through 8-connected weak pixels
    result = strong.copy()
    frontier = strong
    while True:
        grown = _dilate8(frontier) & weak & ~result
        if not grown.any():
            break
        result |= grown
        frontier = grown
    return result


def dilate_diamond(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilation with an L1 ball: out(p) true iff some q with |dr|+|dc| <= radius is set."""
    if radius < 1:
        raise ExtractionError("radius must be >= 1")
    out = mask.astype(bool).copy()
    h, w = mask.shape
    for _ in range(radius):
        step = out.copy()
        step[1:, :] |= out[:-1, :]
        step[:-1, :] |= out[1:, :]
        step[:, 1:] |= out[:, :-1]
        step[:, :-1] |= out[:, 1:]
        out = step
    return out


def largest_component_bbox(mask: np.ndarray) -> BoundingBox:
    """Tight bbox of the biggest 8-connected component; lexicographic tie-break."""
    if not mask.any():
        raise ExtractionError("no moving structure found")
    h, w = mask.shape
    visited = np.zeros_like(mask, dtype=bool)
    best = None
    rows, cols = np.nonzero(mask)
    for seed_r, seed_c in zip(rows, cols):
        if visited[seed_r, seed_c]:
            continue
        size = 0
        rmin = rmax = seed_r
        cmin = cmax = seed_c
        queue = deque([(seed_r, seed_c)])
        visited[seed_r, seed_c] = True
        while queue:
            r, c = queue.popleft()
            size += 1
            rmin, rmax = min(rmin, r), max(rmax, r)
            cmin, cmax = min(cmin, c), max(cmax, c)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not visited[rr, cc]:
                        visited[rr, cc] = True
                        queue.append((rr, cc))
        key = (-size, rmin, cmin, rmax, cmax)
        if best is None or key < best[0]:
            best = (key, BoundingBox(rmin, rmax, cmin, cmax))
    return best[1]


def detect_heart_bbox(cine: CineVolume, cfg: ExtractionConfig) -> BoundingBox:
    diff = frame_difference(cine, cfg)
    edges = canny_edges(diff, cfg)
    dilated = dilate_diamond(edges, cfg.dilation_radius_px)
    return largest_component_bbox(dilated)


def _center_fit(frame: np.ndarray, target_hw) -> np.ndarray:
    """Center-crop or zero-pad a 2-D frame to the target grid."""
    th, tw = target_hw
    h, w = frame.shape
    if h > th:
        top = (h - th) // 2
        frame = frame[top:top + th]
    if w > tw:
        left = (w - tw) // 2
        frame = frame[:, left:left + tw]
    h, w = frame.shape
    if h < th or w < tw:
        out = np.zeros((th, tw), dtype=frame.dtype)
        top, left = (th - h) // 2, (tw - w) // 2
        out[top:top + h, left:left + w] = frame
        return out
    return frame


def apply_bbox_extraction(cine: CineVolume, bbox: BoundingBox,
                          cfg: ExtractionConfig) -> CineVolume:
    """Crop a known bbox, resample to target spacing, center-fit to target_hw."""
    sr, sc = cine.spacing_mm
    crop = cine.voxels[bbox.row_min:bbox.row_max + 1, bbox.col_min:bbox.col_max + 1, :]
    out_h = max(1, int(np.rint(crop.shape[0] * sr / cfg.target_spacing_mm[0])))
    out_w = max(1, int(np.rint(crop.shape[1] * sc / cfg.target_spacing_mm[1])))
    if out_h < 8 or out_w < 8:
        raise ExtractionError("implausible heart region")
    frames = []
    for t in range(cine.frame_count):
        frame = crop[:, :, t]
        if (out_h, out_w) != frame.shape:
            frame = resize_bilinear_2d(frame, (out_h, out_w))
        frames.append(_center_fit(frame, cfg.target_hw))
    return CineVolume(np.stack(frames, axis=2), cfg.target_spacing_mm, cine.subject_id)


def extract_heart(cine: CineVolume, cfg: ExtractionConfig = None, debug_dir=None) -> CineVolume:
    """Crop the moving-structure bbox, resample to 1x1 mm, fit to cfg.target_hw.

    Depth (frame count) is unchanged; output spacing is exactly (1, 1) mm.
    """
    cfg = cfg or ExtractionConfig()
    diff = frame_difference(cine, cfg)
    edges = canny_edges(diff, cfg)
    dilated = dilate_diamond(edges, cfg.dilation_radius_px)
    bbox = largest_component_bbox(dilated)
    out = apply_bbox_extraction(cine, bbox, cfg)
    if debug_dir is not None:
        _dump_debug(debug_dir, cine.subject_id, diff, edges, dilated, bbox)
    return out


def _dump_debug(debug_dir, subject_id, diff, edges, dilated, bbox) -> None:
    import os

    os.makedirs(debug_dir, exist_ok=True)
    overlay = diff / max(diff.max(), 1e-12)
    overlay[bbox.row_min:bbox.row_max + 1, (bbox.col_min, bbox.col_max)] = 1.0
    overlay[(bbox.row_min, bbox.row_max), bbox.col_min:bbox.col_max + 1] = 1.0
    stages = {
        "difference": diff,
        "edges": edges.astype(np.float32),
        "dilated": dilated.astype(np.float32),
        "bbox_overlay": overlay,
    }
    prefix = subject_id or "volume"
    for name, img in stages.items():
        # .ctv volumes need >= 2 frames; duplicate the single stage image
        vol = CineVolume(np.repeat(img.astype(np.float32)[:, :, None], 2, axis=2))
        write_ctv(vol, os.path.join(debug_dir, f"{prefix}_{name}.ctv"))
