"""Synthetic cine phantoms with ground truth.

Each phantom is a contracting ellipse ("heart": bright blood pool inside a
myocardial ring) with a short tubular root at a fixed valve point, a static
bright rectangle that is deliberately *larger* than the heart (to falsify
largest-bright-object extraction), Gaussian noise, and a label-dependent dark
flow-void wedge:

    label 0  no void
    label 1  (regurgitant)  void inside the ventricle, diastolic frames only
    label 2  (stenotic)     void inside the root, systolic frames only
    label 3  (mixed)        both

Truth (per-frame heart bboxes, union bbox, void masks) is recorded alongside.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomError
from .extraction import BoundingBox
from .manifest import Manifest, ManifestEntry, write_manifest
from .volume import CineVolume, read_ctv, write_ctv


@dataclass
class PhantomConfig:
    grid: tuple = (192, 192, 20)
    center_range: tuple = (0.56, 0.62)          # heart center, fraction of grid
    semi_axis_row_range: tuple = (0.18, 0.24)   # fraction of H
    semi_axis_col_range: tuple = (0.16, 0.21)   # fraction of W
    contraction_amplitude: float = 0.15
    wall_fraction: float = 0.20                 # ring thickness, fraction of min semi-axis
    root_length_fraction: float = 0.45
    root_halfwidth_fraction: float = 0.22
    void_width_fraction: float = 0.35           # wedge half-width, fraction of min semi-axis
    blood_intensity: float = 0.9
    myocardium_intensity: float = 0.5
    background_intensity: float = 0.1
    void_intensity: float = 0.15
    distractor_intensity: float = 0.8
    distractor_area_factor: float = 1.08
    intensity_jitter: float = 0.05  # per-sample tissue-intensity variation (arbitrary units)
    noise_sigma: float = 0.02
    systole_end_fraction: float = 1.0 / 3.0     # systolic frames: first third
    diastole_start_fraction: float = 0.5        # diastolic frames: last half
    relax_end_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("blood_intensity", "myocardium_intensity", "background_intensity",
                     "void_intensity", "distractor_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PhantomError(f"{name} must lie in [0, 1], got {v}")
        if self.contraction_amplitude <= 0:
            raise PhantomError("contraction_amplitude must be positive")
        if len(self.grid) != 3 or min(self.grid) < 8:
            raise PhantomError(f"grid too small: {self.grid}")

    def systolic_frames(self) -> np.ndarray:
        d = self.grid[2]
        return np.arange(0, math.ceil(d * self.systole_end_fraction))

    def diastolic_frames(self) -> np.ndarray:
        d = self.grid[2]
        return np.arange(math.ceil(d * self.diastole_start_fraction), d)


@dataclass
class PhantomTruth:
    label: int
    heart_bboxes: list
    union_bbox: BoundingBox
    void_masks: np.ndarray  # (H, W, D) bool
    systolic_frames: np.ndarray = field(default=None)
    diastolic_frames: np.ndarray = field(default=None)


def _contraction(cfg: PhantomConfig, t: int) -> float:
    d = cfg.grid[2]
    u = t / (d - 1)
    f_es, f_rel = cfg.systole_end_fraction, cfg.relax_end_fraction
    if u <= f_es:
        return 0.5 * (1.0 - math.cos(math.pi * u / f_es))
    if u <= f_rel:
        return 0.5 * (1.0 + math.cos(math.pi * (u - f_es) / (f_rel - f_es)))
    return 0.0


def generate_phantom(label: int, cfg: PhantomConfig, rng) -> tuple:
    """Render one labeled phantom; returns (CineVolume, PhantomTruth)."""
    if not 0 <= label <= 3:
        raise PhantomError(f"label out of range: {label}")
    h, w, d = cfg.grid
    cy = h * rng.uniform(*cfg.center_range)
    cx = w * rng.uniform(*cfg.center_range)
    ay = h * rng.uniform(*cfg.semi_axis_row_range)
    ax = w * rng.uniform(*cfg.semi_axis_col_range)
    amin = min(ay, ax)
    wall = max(2.0, cfg.wall_fraction * amin)
    root_len = cfg.root_length_fraction * amin
    root_half = max(1.5, cfg.root_halfwidth_fraction * amin)
    void_half = max(1.5, cfg.void_width_fraction * amin)
    # valve point on the upper-right boundary, root pointing mostly sideways so
    # the band above the heart stays free for the distractor
    vp_dir = (-0.38, 0.925)

    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")

    # per-sample tissue intensities: arbitrary units vary scan to scan, which
    # also keeps global statistics uninformative about the class
    j = cfg.intensity_jitter
    blood = cfg.blood_intensity + rng.uniform(-j, j)
    myo = cfg.myocardium_intensity + rng.uniform(-j, j)
    background = cfg.background_intensity + rng.uniform(-j, j)
    void_level = cfg.void_intensity + rng.uniform(-j, j) * 0.6
    distractor_level = cfg.distractor_intensity + rng.uniform(-j, j)

    systolic = set(int(t) for t in cfg.systolic_frames())
    diastolic = set(int(t) for t in cfg.diastolic_frames())

    vol = np.empty((h, w, d), dtype=np.float64)
    voids = np.zeros((h, w, d), dtype=bool)
    bboxes = []
    heart_mask0 = None

    for t in range(d):
        g = _contraction(cfg, t)
        ay_t = ay * (1.0 - cfg.contraction_amplitude * g)
        ax_t = ax * (1.0 - cfg.contraction_amplitude * g)
        outer = ((rows - cy) / ay_t) ** 2 + ((cols - cx) / ax_t) ** 2 <= 1.0
        inner = (((rows - cy) / max(ay_t - wall, 1.0)) ** 2
                 + ((cols - cx) / max(ax_t - wall, 1.0)) ** 2) <= 1.0

        # aortic root: capsule anchored at the valve point on the upper-right boundary
        vp_r, vp_c = cy + vp_dir[0] * ay_t, cx + vp_dir[1] * ax_t
        urc = np.array([vp_r - cy, vp_c - cx])
        urc /= np.linalg.norm(urc)
        proj = (rows - vp_r) * urc[0] + (cols - vp_c) * urc[1]
        perp = np.abs(-(rows - vp_r) * urc[1] + (cols - vp_c) * urc[0])
        root = (proj >= -1.0) & (proj <= root_len) & (perp <= root_half)

        heart = outer | root
        pool = inner | root

        frame = np.full((h, w), background)
        frame[heart] = myo
        frame[pool] = blood

        # turbulent dephasing flickers: the void's extent and darkness vary
        # frame to frame within its phase, like real flow voids
        void = np.zeros((h, w), dtype=bool)
        if label in (2, 3) and t in systolic:
            # stenotic jet: the root blood pool loses signal during systole
            void |= root & (proj >= rng.uniform(-1.0, 0.15 * root_len))
        if label in (1, 3) and t in diastolic:
            # regurgitant backflow: fat sector from the valve point into the ventricle
            back_len = (0.9 - rng.uniform(0.0, 0.15)) * math.hypot(vp_r - cy, vp_c - cx)
            bproj = -((rows - vp_r) * urc[0] + (cols - vp_c) * urc[1])
            bperp = np.abs(-(rows - vp_r) * urc[1] + (cols - vp_c) * urc[0])
            wdt = void_half * rng.uniform(0.85, 1.15)
            wedge = (bproj >= 0.05 * back_len) & (bproj <= back_len) \
                & (bperp <= wdt * (0.4 + 0.9 * np.clip(bproj / back_len, 0, 1)))
            void |= wedge & inner
        if void.any():
            frame[void] = max(void_level + rng.uniform(-0.1, 0.1), 0.02)
        voids[:, :, t] = void

        hr, hc = np.nonzero(heart)
        bboxes.append(BoundingBox(int(hr.min()), int(hr.max()), int(hc.min()), int(hc.max())))
        if t == 0:
            heart_mask0 = heart
        vol[:, :, t] = frame

    union = BoundingBox(min(b.row_min for b in bboxes), max(b.row_max for b in bboxes),
                        min(b.col_min for b in bboxes), max(b.col_max for b in bboxes))

    _add_distractor(vol, cfg, heart_mask0, union, distractor_level)
    vol += rng.normal(0.0, cfg.noise_sigma, size=vol.shape)

    truth = PhantomTruth(label, bboxes, union, voids,
                         cfg.systolic_frames(), cfg.diastolic_frames())
    return CineVolume(vol.astype(np.float32), (1.0, 1.0), ""), truth


def _add_distractor(vol: np.ndarray, cfg: PhantomConfig, heart_mask0, union, level) -> None:
    """Static bright rectangle above the heart, strictly larger in area."""
    h, w, _ = cfg.grid
    target = int(math.ceil(cfg.distractor_area_factor * int(heart_mask0.sum())))
    top = 2
    avail_h = union.row_min - 4 - top
    avail_w = w - 4
    if avail_h < 2 or avail_h * avail_w < target:
        raise PhantomError("no room for the distractor above the heart")
    dh = min(avail_h, max(2, int(math.ceil(math.sqrt(target / 2.0)))))
    dw = int(math.ceil(target / dh))
    if dw > avail_w:
        dw = avail_w
        dh = int(math.ceil(target / dw))
    vol[top:top + dh, 2:2 + dw, :] = level


def dataset_class_counts(n: int, class_weights) -> list:
    """Largest-remainder apportionment of n samples over the 4 classes."""
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size != 4 or weights.min() < 0 or weights.sum() <= 0:
        raise PhantomError("class_weights must be 4 non-negative numbers")
    ideal = n * weights / weights.sum()
    counts = np.floor(ideal).astype(int)
    order = np.argsort(-(ideal - counts), kind="stable")
    for i in range(int(n - counts.sum())):
        counts[order[i % 4]] += 1
    return counts.tolist()


def generate_dataset(n: int, class_weights, cfg: PhantomConfig, seed: int, out_dir) -> Manifest:
    """Write n phantom .ctv files + truth sidecars + manifest.csv into out_dir."""
    if n < 4:
        raise PhantomError("need at least 4 samples")
    counts = dataset_class_counts(n, class_weights)
    labels = np.repeat(np.arange(4), counts)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xD5,)))
    shuffle_rng.shuffle(labels)

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for idx, label in enumerate(labels):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)))
        vol, truth = generate_phantom(int(label), cfg, rng)
        sid = f"phantom_{idx:04d}"
        vol.subject_id = sid
        path = os.path.join(out_dir, f"{sid}.ctv")
        write_ctv(vol, path)
        _write_truth(out_dir, sid, truth)
        entries.append(ManifestEntry(sid, path, int(label), "unassigned"))
    manifest = Manifest(entries)
    write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest


def _write_truth(out_dir, sid, truth: PhantomTruth) -> None:
    write_ctv(CineVolume(truth.void_masks.astype(np.float32), (1.0, 1.0), sid),
              os.path.join(out_dir, f"{sid}_truth.ctv"))
    doc = {
        "label": truth.label,
        "union_bbox": [truth.union_bbox.row_min, truth.union_bbox.row_max,
                       truth.union_bbox.col_min, truth.union_bbox.col_max],
        "heart_bboxes": [[b.row_min, b.row_max, b.col_min, b.col_max]
                         for b in truth.heart_bboxes],
        "systolic_frames": [int(t) for t in truth.systolic_frames],
        "diastolic_frames": [int(t) for t in truth.diastolic_frames],
    }
    with open(os.path.join(out_dir, f"{sid}_truth.json"), "w") as fh:
        json.dump(doc, fh)


def read_truth(out_dir, sid) -> PhantomTruth:
    with open(os.path.join(out_dir, f"{sid}_truth.json")) as fh:
        doc = json.load(fh)
    masks = read_ctv(os.path.join(out_dir, f"{sid}_truth.ctv")).voxels > 0.5
    return PhantomTruth(
        int(doc["label"]),
        [BoundingBox(*b) for b in doc["heart_bboxes"]],
        BoundingBox(*doc["union_bbox"]),
        masks,
        np.asarray(doc["systolic_frames"], dtype=int),
        np.asarray(doc["diastolic_frames"], dtype=int),
    )
