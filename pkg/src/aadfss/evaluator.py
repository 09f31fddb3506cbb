"""IoU metrics, K-shot inference strategies and the multi-run evaluation protocol."""

from __future__ import annotations

import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import tensor as T
from .correlation import SupportEncoding, average_supports
from .dataset import DatasetIndex, sample_episode
from .decoder import foreground_prob

STRATEGIES = ("vote", "average")


class Segmenter(Protocol):
    uses_support: bool
    forward_count: int

    def encode_support(self, image: np.ndarray, mask: np.ndarray) -> SupportEncoding: ...

    def segment(self, support: SupportEncoding | None, query_image: np.ndarray, q_seed: int = 0): ...


def iou_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    p, g = pred.astype(bool), gt.astype(bool)
    return int((p & g).sum()), int((p & ~g).sum()), int((~p & g).sum())


def ratio(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    return ratio(*iou_counts(pred, gt))


def threshold(prob: np.ndarray) -> np.ndarray:
    """Foreground where the probability is strictly above one half; ties are background."""
    return (prob > 0.5).astype(np.uint8)


def infer_vote(model: Segmenter, supports, query_image, q_seed: int = 0) -> np.ndarray:
    """One forward per support; foreground probabilities averaged, then thresholded."""
    if not supports:
        raise ValueError("need at least one support")
    probs = []
    for img, mask in supports:
        enc = model.encode_support(img, mask) if model.uses_support else None
        probs.append(foreground_prob(model.segment(enc, query_image, q_seed)))
    return threshold(np.mean(probs, axis=0))


def infer_average(model: Segmenter, supports, query_image, q_seed: int = 0) -> np.ndarray:
    """Supports averaged at the feature/mask level, then a single forward."""
    if not supports:
        raise ValueError("need at least one support")
    enc = None
    if model.uses_support:
        enc = average_supports([model.encode_support(img, m) for img, m in supports])
    return threshold(foreground_prob(model.segment(enc, query_image, q_seed)))


INFER = {"vote": infer_vote, "average": infer_average}


@dataclass
class MetricsReport:
    K: int
    strategy: str
    tasks: int
    run_seeds: list[int]
    per_class: list[dict[str, float]]
    per_run_miou: list[float]
    forward_passes: int
    wall_time_s: float
    per_task_mean: bool = False
    per_task_miou: list[float] = field(default_factory=list)

    @property
    def miou(self) -> float:
        return float(np.mean(self.per_run_miou))

    @property
    def forwards_per_task(self) -> float:
        return self.forward_passes / (self.tasks * len(self.run_seeds))

    def to_csv(self) -> str:
        lines = ["class,run,K,strategy,iou"]
        for r, classes in enumerate(self.per_class):
            for cls in sorted(classes):
                lines.append(f"{cls},{r},{self.K},{self.strategy},{classes[cls]!r}")
        lines.append(f"ALL,mean,{self.K},{self.strategy},{self.miou!r}")
        return "\n".join(lines) + "\n"

    def sidecar(self) -> dict:
        return {
            "K": self.K,
            "strategy": self.strategy,
            "tasks_per_run": self.tasks,
            "run_seeds": self.run_seeds,
            "per_run_miou": self.per_run_miou,
            "per_task_miou": self.per_task_miou,
            "aggregation": "per_task" if self.per_task_mean else "per_class_counts",
            "miou": self.miou,
            "forward_passes": self.forward_passes,
            "forwards_per_task": self.forwards_per_task,
            "wall_time_s": self.wall_time_s,
        }

    def write(self, out_dir: str | Path, stem: str = "metrics") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / f"{stem}.json").write_text(json.dumps(self.sidecar(), indent=2) + "\n", encoding="utf-8")


def evaluate_episodes(model: Segmenter, episodes, strategy: str):
    """Per-class (tp, fp, fn) totals and per-task IoUs over ``(episode, q_seed)`` pairs."""
    infer = INFER[strategy]
    counts: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(3, dtype=np.int64))
    task_ious = []
    with T.no_grad():
        for ep, q_seed in episodes:
            pred = infer(model, ep.support, ep.query[0], q_seed)
            c = iou_counts(pred, ep.query[1])
            counts[ep.class_id] += c
            task_ious.append(ratio(*c))
    return dict(counts), task_ious


def sample_tasks(index: DatasetIndex, split: str, K: int, tasks: int, seed: int):
    rng = np.random.default_rng(seed)
    return [(sample_episode(index, split, K, rng), int(rng.integers(2**31))) for _ in range(tasks)]


def run_protocol(model: Segmenter, index: DatasetIndex, K: int, strategy: str = "average",
                 tasks: int = 1000, runs: int = 2, base_seed: int = 0, split: str = "test",
                 per_task_mean: bool = False) -> MetricsReport:
    """Run ``runs`` independent evaluations of ``tasks`` sampled episodes each.

    Run r samples with seed ``base_seed + r``. mIoU per run is the mean over
    classes of IoU from per-class accumulated pixel counts, unless
    ``per_task_mean`` asks for the mean of per-task IoUs instead.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    seeds = [base_seed + r for r in range(runs)]
    per_class, per_run, per_task = [], [], []
    start_forwards = model.forward_count
    t0 = time.perf_counter()
    for seed in seeds:
        episodes = sample_tasks(index, split, K, tasks, seed)
        counts, task_ious = evaluate_episodes(model, episodes, strategy)
        classes = {c: ratio(*map(int, v)) for c, v in counts.items()}
        per_class.append(classes)
        per_task.append(float(np.mean(task_ious)))
        per_run.append(per_task[-1] if per_task_mean else float(np.mean(list(classes.values()))))
    return MetricsReport(
        K=K,
        strategy=strategy,
        tasks=tasks,
        run_seeds=seeds,
        per_class=per_class,
        per_run_miou=per_run,
        forward_passes=model.forward_count - start_forwards,
        wall_time_s=time.perf_counter() - t0,
        per_task_mean=per_task_mean,
        per_task_miou=per_task,
    )
