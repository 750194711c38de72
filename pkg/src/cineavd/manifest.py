"""Label manifests and the classification task definition.

Label codes are fixed across the repo: 0 = no pathology, 1 = AR (regurgitant),
2 = AS (stenotic), 3 = MVD (mixed).  The manifest CSV has the header
``subject_id,path,label,split``; paths are resolved relative to the CSV.
"""

import csv
import os
from dataclasses import dataclass, field

from .errors import ManifestError

LABEL_NAMES = ("no pathology", "AR", "AS", "MVD")
SPLITS = ("train", "val", "test", "unassigned")
NUM_RAW_LABELS = 4


@dataclass
class LabelTask:
    """Mapping from raw 4-way labels to the trained task's classes."""

    mode: str  # "two_class" | "four_class"
    class_names: tuple

    @staticmethod
    def two_class() -> "LabelTask":
        return LabelTask("two_class", ("no pathology", "AVD"))

    @staticmethod
    def four_class() -> "LabelTask":
        return LabelTask("four_class", LABEL_NAMES)

    @staticmethod
    def from_name(name: str) -> "LabelTask":
        if name == "two_class":
            return LabelTask.two_class()
        if name == "four_class":
            return LabelTask.four_class()
        raise ManifestError(f"unknown task {name!r} (expected two_class or four_class)")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def map_label(self, raw_label: int) -> int:
        if self.mode == "two_class":
            return int(raw_label != 0)
        return int(raw_label)


@dataclass
class ManifestEntry:
    subject_id: str
    path: str
    label: int
    split: str = "unassigned"


@dataclass
class Manifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.subject_id in seen:
                raise ManifestError(f"duplicate subject_id {e.subject_id!r}")
            seen.add(e.subject_id)
            if not 0 <= e.label < NUM_RAW_LABELS:
                raise ManifestError(f"label out of range for {e.subject_id!r}: {e.label}")
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split {e.split!r} for {e.subject_id!r}")

    def __len__(self):
        return len(self.entries)

    def subset(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def class_histogram(self) -> dict:
        hist = {c: 0 for c in range(NUM_RAW_LABELS)}
        for e in self.entries:
            hist[e.label] += 1
        return hist


def read_manifest(path) -> Manifest:
    """Parse and validate a manifest CSV; every referenced file must exist."""
    if not os.path.exists(path):
        raise ManifestError(f"no such manifest: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "path", "label", "split"]:
            raise ManifestError(f"bad manifest header: {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"line {lineno}: expected 4 fields, got {len(row)}")
            subject_id, rel, label_s, split = row
            try:
                label = int(label_s)
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: non-integer label {label_s!r}") from exc
            if not 0 <= label < NUM_RAW_LABELS:
                raise ManifestError(f"line {lineno}: label out of range: {label}")
            resolved = rel if os.path.isabs(rel) else os.path.join(base, rel)
            if not os.path.exists(resolved):
                raise ManifestError(f"line {lineno}: unresolvable path {rel!r}")
            entries.append(ManifestEntry(subject_id, resolved, label, split))
    return Manifest(entries)


def write_manifest(manifest: Manifest, path) -> None:
    """Write entries with paths relative to the CSV location when possible."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "path", "label", "split"])
        for e in manifest.entries:
            rel = os.path.relpath(e.path, base) if os.path.isabs(e.path) else e.path
            writer.writerow([e.subject_id, rel, e.label, e.split])
