"""Focal-loss / Adam training loop with stratified splitting and checkpoints.

The per-sample pipeline is read -> heart extraction (skippable for
pre-extracted data) -> depth resize -> z-score -> augmentation (train split
only).  Preprocessed volumes are cached in memory across epochs; augmentation
randomness is keyed by (seed, epoch, sample index) so results do not depend
on the worker count.  History CSV columns:
``epoch,train_loss,val_loss,val_accuracy,steps``.
"""

import csv
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .augment import augment
from .densenet import ArchConfig, Model, build_model, save_checkpoint
from .errors import TrainError
from .extraction import ExtractionConfig
from .manifest import LabelTask, Manifest, ManifestEntry
from .nn import functional as F
from .nn.tensor import Tensor, no_grad
from .optim import Adam
from .pipeline import load_sample

CLINICAL_SPLIT = (322, 81, 173)  # train / val / test sizes of the full-scale protocol


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 500
    batch_size: int = 2
    focal_gamma: float = 2.0
    focal_alpha: object = "inverse_frequency"  # "inverse_frequency" | list | None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    augment_prob: float = 0.2
    rotation_range_deg: float = 15.0
    contrast_gamma_range: tuple = (0.7, 1.5)
    bias_field_order: int = 3
    bias_coeff_range: tuple = (-0.3, 0.3)
    target_depth: int = 30
    seed: int = 0
    task: str = "two_class"
    skip_extraction: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be positive")
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise TrainError("augment_prob must lie in [0, 1]")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")


@dataclass
class SplitSpec:
    train_n: int = CLINICAL_SPLIT[0]
    val_n: int = CLINICAL_SPLIT[1]
    test_n: int = CLINICAL_SPLIT[2]
    stratified: bool = True
    seed: int = 0

    @property
    def sizes(self):
        return (self.train_n, self.val_n, self.test_n)

    @staticmethod
    def proportional(n: int, seed: int = 0) -> "SplitSpec":
        """Scale the full-scale 322/81/173 proportions down to n samples."""
        total = sum(CLINICAL_SPLIT)
        train = int(round(n * CLINICAL_SPLIT[0] / total))
        val = int(round(n * CLINICAL_SPLIT[1] / total))
        return SplitSpec(train, val, n - train - val, True, seed)


def focal_loss(probs: Tensor, targets, gamma: float = 2.0, alpha=None) -> Tensor:
    """Mean over the batch of -alpha_y * (1 - p_y)^gamma * log(p_y), p clamped to
    [1e-7, 1 - 1e-7]."""
    targets = np.asarray(targets, dtype=np.int64)
    k = probs.shape[1]
    if targets.min() < 0 or targets.max() >= k:
        raise TrainError(f"target out of range for {k} classes")
    p = F.gather_rows(probs, targets)
    p = F.clip(p, 1e-7, 1.0 - 1e-7)
    term = F.mul(F.pow_const(F.rsub_const(1.0, p), gamma), F.log(p))
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (k,):
            raise TrainError(f"alpha must have one weight per class, got {alpha.shape}")
        term = F.mul_array(term, alpha[targets])
    return F.scale(F.mean_all(term), -1.0)


def inverse_frequency_alpha(labels, num_classes: int) -> np.ndarray:
    """Per-class 1/frequency weights normalized to mean 1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    if (counts == 0).any():
        raise TrainError("cannot derive class weights: some class has no samples")
    w = labels.size / counts
    return w / w.mean()


def resolve_alpha(cfg: TrainConfig, train_labels, num_classes: int):
    if cfg.focal_alpha is None:
        return None
    if isinstance(cfg.focal_alpha, str):
        if cfg.focal_alpha != "inverse_frequency":
            raise TrainError(f"unknown focal_alpha {cfg.focal_alpha!r}")
        return inverse_frequency_alpha(train_labels, num_classes)
    return np.asarray(cfg.focal_alpha, dtype=np.float64)


# ---------------------------------------------------------------------------
# stratified splitting

def _apportion(class_counts, sizes):
    """Transportation rounding: per-(class, split) counts with exact row/col sums
    and each cell within 1 of the proportional ideal (floor or floor + 1).

    Greedy largest-fraction filling, then augmenting-path repair on the unit-
    capacity bipartite residual graph (a consistent rounding always exists).
    """
    total = sum(class_counts)
    ncls, nsp = len(class_counts), len(sizes)
    ideal = np.outer(np.asarray(class_counts, dtype=np.float64), np.asarray(sizes)) / total
    counts = np.floor(ideal).astype(np.int64)
    inc = np.zeros((ncls, nsp), dtype=bool)
    row_left = np.asarray(class_counts) - counts.sum(axis=1)
    col_left = np.asarray(sizes) - counts.sum(axis=0)
    frac = ideal - np.floor(ideal)
    cells = sorted(((c, s) for c in range(ncls) for s in range(nsp)),
                   key=lambda cs: (-frac[cs], cs))
    for c, s in cells:
        if row_left[c] > 0 and col_left[s] > 0 and not inc[c, s]:
            inc[c, s] = True
            counts[c, s] += 1
            row_left[c] -= 1
            col_left[s] -= 1
    while row_left.sum() > 0:
        c0 = int(np.argmax(row_left > 0))
        # BFS over alternating free-cell / used-cell edges to a column with demand
        parent = {("r", c0): None}
        queue = deque([("r", c0)])
        goal = None
        while queue and goal is None:
            kind, i = queue.popleft()
            if kind == "r":
                for s in range(nsp):
                    if not inc[i, s] and ("c", s) not in parent:
                        parent[("c", s)] = ("r", i)
                        if col_left[s] > 0:
                            goal = ("c", s)
                            break
                        queue.append(("c", s))
            else:
                for c in range(ncls):
                    if inc[c, i] and ("r", c) not in parent:
                        parent[("r", c)] = ("c", i)
                        queue.append(("r", c))
        if goal is None:
            raise TrainError("stratified apportionment failed to converge")
        node = goal
        while parent[node] is not None:
            prev = parent[node]
            if node[0] == "c":  # row -> col: add an increment
                inc[prev[1], node[1]] = True
                counts[prev[1], node[1]] += 1
            else:  # col -> row: remove an increment
                inc[node[1], prev[1]] = False
                counts[node[1], prev[1]] -= 1
            node = prev
        row_left[c0] -= 1
        col_left[goal[1]] -= 1
    return counts


def stratified_split(manifest: Manifest, spec: SplitSpec) -> Manifest:
    """Assign train/val/test preserving per-class proportions within +-1 sample."""
    n = len(manifest)
    if sum(spec.sizes) != n:
        raise TrainError(f"split sizes {spec.sizes} do not sum to dataset size {n}")
    rng = np.random.default_rng(spec.seed)
    split_names = ("train", "val", "test")
    new_entries = [ManifestEntry(e.subject_id, e.path, e.label, "unassigned")
                   for e in manifest.entries]

    if not spec.stratified:
        order = rng.permutation(n)
        bounds = np.cumsum((0,) + spec.sizes)
        for s, name in enumerate(split_names):
            for i in order[bounds[s]:bounds[s + 1]]:
                new_entries[i].split = name
        return Manifest(new_entries)

    by_class = {}
    for i, e in enumerate(manifest.entries):
        by_class.setdefault(e.label, []).append(i)
    present = sorted(by_class)
    for c in present:
        if len(by_class[c]) < len(split_names):
            raise TrainError(f"class {c} has fewer samples than splits")
    counts = _apportion([len(by_class[c]) for c in present], spec.sizes)
    for row, c in enumerate(present):
        idxs = np.array(by_class[c])
        rng.shuffle(idxs)
        start = 0
        for s, name in enumerate(split_names):
            for i in idxs[start:start + counts[row, s]]:
                new_entries[i].split = name
            start += counts[row, s]
    return Manifest(new_entries)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    best_checkpoint: str
    last_checkpoint: str
    history_path: str
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0


def _aug_rng(seed: int, epoch: int, sample_index: int):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(2, epoch, sample_index)))


def _load_args(entries, cfg, arch, extraction_cfg):
    ext = None
    if not cfg.skip_extraction:
        ext = extraction_cfg or ExtractionConfig(target_hw=arch.input_shape[:2])
    return [(e, cfg.target_depth, ext) for e in entries]


def _load_one(args):
    entry, depth, ext = args
    return load_sample(entry, depth, ext)


def load_split_volumes(entries, cfg, arch, extraction_cfg):
    args = _load_args(entries, cfg, arch, extraction_cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            vols = list(pool.map(_load_one, args, chunksize=4))
    else:
        vols = [_load_one(a) for a in args]
    for e, v in zip(entries, vols):
        if v.shape != arch.input_shape:
            raise TrainError(
                f"{e.subject_id}: preprocessed shape {v.shape} does not match "
                f"model input {arch.input_shape}; check target_depth/extraction config")
    return vols


def forward_eval(model: Model, vols, batch_size: int) -> np.ndarray:
    probs = []
    with no_grad():
        for i in range(0, len(vols), batch_size):
            batch = np.stack(vols[i:i + batch_size])[:, None]
            probs.append(model.forward(Tensor(batch), training=False).probs.data)
    return np.concatenate(probs, axis=0)


def train(manifest: Manifest, arch: ArchConfig, cfg: TrainConfig, out_dir,
          extraction_cfg: ExtractionConfig = None, log=None) -> TrainResult:
    """Train on the manifest's train split, validate per epoch, checkpoint the
    best-validation-accuracy and the last model.  Deterministic given seeds."""
    task = LabelTask.from_name(cfg.task)
    if arch.num_classes != task.num_classes:
        raise TrainError(f"arch.num_classes={arch.num_classes} does not match task "
                         f"{cfg.task} ({task.num_classes} classes)")
    if cfg.target_depth != arch.input_shape[2]:
        raise TrainError(f"target_depth {cfg.target_depth} must equal model depth "
                         f"{arch.input_shape[2]}")
    train_entries = manifest.subset("train")
    val_entries = manifest.subset("val")
    if not train_entries or not val_entries:
        raise TrainError("manifest needs non-empty train and val splits (run stratified_split)")

    say = log or (lambda msg: None)
    os.makedirs(out_dir, exist_ok=True)
    say(f"loading {len(train_entries)} train / {len(val_entries)} val volumes")
    train_vols = load_split_volumes(train_entries, cfg, arch, extraction_cfg)
    val_vols = load_split_volumes(val_entries, cfg, arch, extraction_cfg)
    train_labels = np.array([task.map_label(e.label) for e in train_entries])
    val_labels = np.array([task.map_label(e.label) for e in val_entries])
    alpha = resolve_alpha(cfg, train_labels, task.num_classes)

    model = build_model(arch, cfg.seed)
    optimizer = Adam(model.parameters(), cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    history_path = os.path.join(out_dir, "history.csv")
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        result = _train_epochs(model, optimizer, train_vols, train_labels, val_vols,
                               val_labels, alpha, cfg, history_path, best_path,
                               last_path, pool, say)
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def _train_epochs(model, optimizer, train_vols, train_labels, val_vols, val_labels,
                  alpha, cfg, history_path, best_path, last_path, pool, say):
    history = []
    best_acc = -1.0
    best_epoch = 0
    n_train = len(train_vols)
    with open(history_path, "w", newline="") as hist_fh:
        writer = csv.writer(hist_fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "steps"])
        for epoch in range(1, cfg.epochs + 1):
            order_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1, epoch)))
            order = order_rng.permutation(n_train)
            epoch_loss = 0.0
            for b, start in enumerate(range(0, n_train, cfg.batch_size)):
                idxs = order[start:start + cfg.batch_size]
                if pool is not None:
                    aug = list(pool.map(_augment_job,
                                        [(train_vols[i], cfg, epoch, int(i)) for i in idxs]))
                else:
                    aug = [augment(train_vols[i], cfg, _aug_rng(cfg.seed, epoch, int(i)))
                           for i in idxs]
                batch = np.stack(aug)[:, None]
                res = model.forward(Tensor(batch), training=True)
                loss = focal_loss(res.probs, train_labels[idxs], cfg.focal_gamma, alpha)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainError(f"non-finite loss at epoch {epoch} batch {b}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss_val * len(idxs)
            train_loss = epoch_loss / n_train

            val_probs = forward_eval(model, val_vols, cfg.batch_size)
            val_loss = float(np.mean(_focal_loss_np(val_probs, val_labels,
                                                    cfg.focal_gamma, alpha)))
            val_acc = float(np.mean(np.argmax(val_probs, axis=1) == val_labels))
            steps = optimizer.state.step
            history.append((epoch, train_loss, val_loss, val_acc, steps))
            writer.writerow([epoch, f"{train_loss:.6f}", f"{val_loss:.6f}",
                             f"{val_acc:.6f}", steps])
            hist_fh.flush()
            say(f"epoch {epoch}: train_loss {train_loss:.4f} val_loss {val_loss:.4f} "
                f"val_acc {val_acc:.4f}")

            cfg_doc = _jsonable(asdict(cfg))
            cfg_doc.pop("workers", None)  # operational knob; results don't depend on it
            meta = {"epoch": epoch, "val_accuracy": val_acc, "task": cfg.task,
                    "seed": cfg.seed, "train_config": cfg_doc}
            save_checkpoint(last_path, model, optimizer.state, meta)
            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                save_checkpoint(best_path, model, optimizer.state, meta)

    return TrainResult(best_path, last_path, history_path, history, best_epoch, best_acc)


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


def _augment_job(args):
    vol, cfg, epoch, idx = args
    return augment(vol, cfg, _aug_rng(cfg.seed, epoch, idx))


def _focal_loss_np(probs: np.ndarray, targets: np.ndarray, gamma: float, alpha) -> np.ndarray:
    p = probs[np.arange(len(targets)), targets].astype(np.float64)
    p = np.clip(p, 1e-7, 1.0 - 1e-7)
    loss = -((1.0 - p) ** gamma) * np.log(p)
    if alpha is not None:
        loss = loss * np.asarray(alpha, dtype=np.float64)[targets]
    return loss
