"""In-memory paired dataset container and its on-disk manifest round trip."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datatypes import IMUWindow, VideoClip, stack_clips, stack_windows
from .errors import InputError

SPLITS = ("train", "heldout", "ood", "prototype")


@dataclass
class PairItem:
    """One aligned sample: an IMU window, optionally its video clip and label."""

    id: str
    window: IMUWindow
    clip: Optional[VideoClip] = None
    label: Optional[int] = None
    split: str = "train"
    subject: Optional[str] = None


@dataclass
class PairedDataset:
    items: list[PairItem]
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InputError(f"duplicate item ids: {dupes[:5]}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def split(self, tag: str) -> "PairedDataset":
        return PairedDataset(
            items=[it for it in self.items if it.split == tag], classes=self.classes
        )

    def windows(self) -> np.ndarray:
        return stack_windows([it.window for it in self.items])

    def clips(self) -> np.ndarray:
        missing = [it.id for it in self.items if it.clip is None]
        if missing:
            raise InputError(f"items without clips: {missing[:5]}")
        return stack_clips([it.clip for it in self.items])

    def labels(self) -> np.ndarray:
        missing = [it.id for it in self.items if it.label is None]
        if missing:
            raise InputError(f"items without labels: {missing[:5]}")
        return np.asarray([it.label for it in self.items], dtype=np.int64)

    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    def has_clips(self) -> bool:
        return all(it.clip is not None for it in self.items)

    def pairs(self) -> list[tuple[IMUWindow, VideoClip]]:
        missing = [it.id for it in self.items if it.clip is None]
        if missing:
            raise InputError(f"items without clips: {missing[:5]}")
        return [(it.window, it.clip) for it in self.items]


def save_dataset(ds: PairedDataset, out_dir) -> Path:
    """Write window/clip payload files plus the manifest; returns the manifest path."""
    from .formats import ManifestItem, write_clip_file, write_manifest, write_window_file

    out_dir = Path(out_dir)
    (out_dir / "imu").mkdir(parents=True, exist_ok=True)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    records = []
    for it in ds.items:
        imu_rel = f"imu/{it.id}.imuw"
        write_window_file(out_dir / imu_rel, it.window)
        clip_rel = None
        if it.clip is not None:
            clip_rel = f"clips/{it.id}.clip"
            write_clip_file(out_dir / clip_rel, it.clip)
        records.append(
            ManifestItem(
                id=it.id,
                imu_path=imu_rel,
                clip_path=clip_rel,
                label=None if it.label is None else ds.classes[it.label],
                split=it.split,
                subject=it.subject,
            )
        )
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, ds.classes, records)
    return manifest_path


def load_dataset(manifest_path) -> PairedDataset:
    """Load every item referenced by a manifest into memory."""
    from .formats import read_clip_file, read_manifest, read_window_file

    manifest_path = Path(manifest_path)
    classes, records = read_manifest(manifest_path, validate_files=True)
    base = manifest_path.parent
    class_to_idx = {name: i for i, name in enumerate(classes)}
    items = []
    for rec in records:
        window = read_window_file(base / rec.imu_path)
        window.source_id = rec.id
        clip = None
        if rec.clip_path is not None:
            clip = read_clip_file(base / rec.clip_path)
            clip.source_id = rec.id
        label = None if rec.label is None else class_to_idx[rec.label]
        window.label = label
        items.append(
            PairItem(
                id=rec.id, window=window, clip=clip, label=label,
                split=rec.split, subject=rec.subject,
            )
        )
    return PairedDataset(items=items, classes=list(classes))
