"""Cine volume data model and the .ctv container format.

A .ctv file is one UTF-8 JSON header line (magic "CTV1", dims, spacing,
subject id, dtype "f32le") followed by H*W*D little-endian float32 values in
row-major (H, W, D) order.  Round trips are bit-exact for all finite inputs.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import VolumeError

CTV_MAGIC = "CTV1"
MAX_SPACING_MM = 10.0


@dataclass
class CineVolume:
    """One gated 2D+time acquisition: (H, W, D) voxel grid, D = frame count."""

    voxels: np.ndarray
    spacing_mm: tuple = (1.0, 1.0)
    subject_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float32)
        if v.ndim != 3:
            raise VolumeError(f"volume must be 3-D (H,W,D), got shape {v.shape}")
        if min(v.shape) < 2:
            raise VolumeError(f"all dims must be >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise VolumeError("non-finite voxel")
        sr, sc = float(self.spacing_mm[0]), float(self.spacing_mm[1])
        if not (0.0 < sr < MAX_SPACING_MM and 0.0 < sc < MAX_SPACING_MM):
            raise VolumeError(f"spacing must lie in (0, {MAX_SPACING_MM}) mm, got {self.spacing_mm}")
        self.voxels = v
        self.spacing_mm = (sr, sc)

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def frame_count(self) -> int:
        return self.voxels.shape[2]

    def frame(self, t: int) -> np.ndarray:
        return self.voxels[:, :, t]

    def with_voxels(self, voxels, spacing_mm=None) -> "CineVolume":
        return CineVolume(voxels, spacing_mm or self.spacing_mm, self.subject_id)


def write_ctv(volume: CineVolume, path) -> None:
    """Serialize a volume; rejects non-finite data before touching the file."""
    v = volume.voxels
    if not np.all(np.isfinite(v)):
        raise VolumeError("non-finite voxel")
    header = {
        "magic": CTV_MAGIC,
        "dims": list(v.shape),
        "spacing_mm": [volume.spacing_mm[0], volume.spacing_mm[1]],
        "subject_id": volume.subject_id,
        "dtype": "f32le",
    }
    payload = np.ascontiguousarray(v, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_ctv(path) -> CineVolume:
    if not os.path.exists(path):
        raise VolumeError(f"no such file: {path}")
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise VolumeError(f"bad header in {path}: {exc}") from exc
        if header.get("magic") != CTV_MAGIC:
            raise VolumeError(f"bad magic in {path}: {header.get('magic')!r}")
        if header.get("dtype") != "f32le":
            raise VolumeError(f"unsupported dtype in {path}: {header.get('dtype')!r}")
        dims = header.get("dims", [])
        if len(dims) != 3 or any(int(d) < 2 for d in dims):
            raise VolumeError(f"bad dims in {path}: {dims}")
        h, w, d = (int(x) for x in dims)
        payload = fh.read()
    expected = h * w * d * 4
    if len(payload) != expected:
        raise VolumeError(
            f"payload length mismatch in {path}: expected {expected} bytes, got {len(payload)}")
    voxels = np.frombuffer(payload, dtype="<f4").reshape(h, w, d)
    if not np.all(np.isfinite(voxels)):
        raise VolumeError(f"non-finite voxel in {path}")
    spacing = header.get("spacing_mm", [1.0, 1.0])
    return CineVolume(voxels.copy(), (float(spacing[0]), float(spacing[1])),
                      str(header.get("subject_id", "")))


def depth_resize_weights(depth_in: int, depth_out: int) -> np.ndarray:
    """(depth_out, depth_in) overlap-length weights of 1-D area interpolation.

    Output frame t covers the interval [t*D/T, (t+1)*D/T) on the continuous
    input-frame axis; each input frame contributes its overlap length,
    normalized so every row sums to exactly 1.
    """
    w = np.zeros((depth_out, depth_in), dtype=np.float64)
    ratio = depth_in / depth_out
    for t in range(depth_out):
        lo, hi = t * ratio, (t + 1) * ratio
        first, last = int(np.floor(lo)), min(int(np.ceil(hi)), depth_in)
        for j in range(first, last):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[t, j] = overlap
        w[t] /= w[t].sum()
    return w


def resize_depth_area(volume: CineVolume, target_depth: int) -> CineVolume:
    """Area (overlap-weighted) interpolation along the frame axis."""
    if target_depth < 2:
        # a 1-frame result cannot satisfy the frame_count >= 2 invariant
        raise VolumeError("target_depth must be >= 2")
    d = volume.frame_count
    if target_depth == d:
        return volume.with_voxels(volume.voxels.copy())
    w = depth_resize_weights(d, target_depth)
    out = np.tensordot(volume.voxels.astype(np.float64, copy=False), w, axes=([2], [1]))
    return volume.with_voxels(np.ascontiguousarray(out).astype(np.float32))


def zscore_normalize(volume: CineVolume) -> CineVolume:
    """Zero-mean unit-variance normalization over the whole grid (population std)."""
    v = volume.voxels.astype(np.float64, copy=False)
    mean = float(v.mean())
    std = float(v.std())
    if std == 0.0:
        raise VolumeError("degenerate volume")
    return volume.with_voxels(((v - mean) / std).astype(np.float32))


def zscore_array(arr: np.ndarray) -> np.ndarray:
    """zscore_normalize for bare arrays (training pipeline internal)."""
    v = arr.astype(np.float64, copy=False)
    std = float(v.std())
    if std == 0.0:
        raise VolumeError("degenerate volume")
    return ((v - float(v.mean())) / std).astype(np.float32)
