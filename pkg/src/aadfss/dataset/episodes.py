"""Episodic sampling: K easy supports and one hard query of a single class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generate import DatasetError
from .index import DatasetIndex


@dataclass
class Episode:
    support: list[tuple[np.ndarray, np.ndarray]]
    query: tuple[np.ndarray, np.ndarray]
    class_id: str

    @property
    def K(self) -> int:
        return len(self.support)


def eligible_classes(index: DatasetIndex, split: str, K: int) -> list[str]:
    return [
        c for c in index.classes(split)
        if len(index.get(split, c).support) >= K and len(index.get(split, c).query) >= 1
    ]


def sample_episode(index: DatasetIndex, split: str, K: int, rng: np.random.Generator) -> Episode:
    if K < 1:
        raise ValueError("K must be >= 1")
    classes = eligible_classes(index, split, K)
    if not classes:
        raise DatasetError(f"no {split} class has {K} supports and a query")
    cls = classes[rng.integers(len(classes))]
    cs = index.get(split, cls)
    picks = rng.choice(len(cs.support), size=K, replace=False)
    q = cs.query[rng.integers(len(cs.query))]
    return Episode(
        support=[(cs.support[i].image, cs.support[i].mask) for i in picks],
        query=(q.image, q.mask),
        class_id=cls,
    )
