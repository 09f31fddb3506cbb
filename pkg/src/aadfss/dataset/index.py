"""Manifest loading and the validated in-memory dataset index."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm
from .generate import TAGS, DatasetError

MANIFEST = "manifest.json"
RECORD_KEYS = {"image", "mask", "class", "role", "tags", "split"}
MIN_TEST_SUPPORT = 20
MIN_TEST_QUERY = 10


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    class_id: str
    role: str
    tags: tuple[str, ...] = ()
    path: str = ""

    def validate(self) -> None:
        where = self.path or self.class_id
        if self.role not in ("support", "query"):
            raise DatasetError(f"{where}: role must be support or query, got {self.role!r}")
        if self.role == "support" and self.tags:
            raise DatasetError(f"{where}: support samples must be untagged, got {list(self.tags)}")
        if self.role == "query" and not self.tags:
            raise DatasetError(f"{where}: query samples need at least one difficulty tag")
        unknown = set(self.tags) - set(TAGS)
        if unknown:
            raise DatasetError(f"{where}: unknown tags {sorted(unknown)}")
        if self.image.shape != self.mask.shape:
            raise DatasetError(f"{where}: image {self.image.shape} vs mask {self.mask.shape}")
        if self.mask.sum() < 1:
            raise DatasetError(f"{where}: mask has no foreground pixel")


@dataclass
class ClassSamples:
    support: list[Sample] = field(default_factory=list)
    query: list[Sample] = field(default_factory=list)


@dataclass
class DatasetIndex:
    root: Path
    splits: dict[str, dict[str, ClassSamples]]

    def classes(self, split: str) -> list[str]:
        return sorted(self.splits.get(split, {}))

    def get(self, split: str, class_id: str) -> ClassSamples:
        return self.splits[split][class_id]

    def samples(self, split: str | None = None):
        for sp, classes in sorted(self.splits.items()):
            if split is not None and sp != split:
                continue
            for cls in sorted(classes):
                yield from classes[cls].support
                yield from classes[cls].query

    def validate(self, min_test_support: int = MIN_TEST_SUPPORT, min_test_query: int = MIN_TEST_QUERY) -> None:
        base, novel = set(self.classes("train")), set(self.classes("test"))
        overlap = base & novel
        if overlap:
            raise DatasetError(f"classes in both train and test splits: {sorted(overlap)}")
        for cls in novel:
            cs = self.splits["test"][cls]
            if len(cs.support) < min_test_support or len(cs.query) < min_test_query:
                raise DatasetError(
                    f"test class {cls!r} has {len(cs.support)} supports / {len(cs.query)} queries; "
                    f"need >= {min_test_support} / {min_test_query}"
                )
        for s in self.samples():
            s.validate()


def load_manifest(root: str | Path, **limits) -> DatasetIndex:
    """Read ``root/manifest.json`` and every raster it references.

    Any violated invariant raises :class:`DatasetError`; nothing is skipped.
    """
    root = Path(root)
    path = root / MANIFEST
    if not path.is_file():
        raise DatasetError(f"no {MANIFEST} under {root}")
    records = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(records, list):
        raise DatasetError(f"{path}: top level must be an array")
    splits: dict[str, dict[str, ClassSamples]] = {}
    for n, rec in enumerate(records):
        if not isinstance(rec, dict) or set(rec) != RECORD_KEYS:
            raise DatasetError(f"record {n}: keys must be exactly {sorted(RECORD_KEYS)}")
        if rec["split"] not in ("train", "test"):
            raise DatasetError(f"record {n}: split must be train or test")
        for key in ("image", "mask"):
            if not (root / rec[key]).is_file():
                raise DatasetError(f"record {n}: missing file {rec[key]}")
        sample = Sample(
            image=pnm.read_image(root / rec["image"]),
            mask=pnm.read_mask(root / rec["mask"]),
            class_id=rec["class"],
            role=rec["role"],
            tags=tuple(rec["tags"]),
            path=rec["image"],
        )
        sample.validate()
        bucket = splits.setdefault(rec["split"], {}).setdefault(rec["class"], ClassSamples())
        getattr(bucket, rec["role"]).append(sample)
    index = DatasetIndex(root, splits)
    index.validate(**limits)
    return index
