"""Ablation, shot and query-count sweeps shared by the scripts and the acceptance suite."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import DatasetIndex, GenConfig, generate_dataset, load_manifest
from .evaluator import run_protocol
from .model import FewShotSegmenter, build_model
from .tensor import count_flops
from .trainer import train

log = logging.getLogger(__name__)

# arm name -> config overrides
ARMS = {
    "baseline": dict(enable_cl=False, enable_aad=False),
    "cl": dict(enable_cl=True, enable_aad=False),
    "aad": dict(enable_cl=True, enable_aad=True, fusion="aad"),
    "maskadd": dict(enable_cl=True, enable_aad=True, fusion="maskadd"),
    "concat": dict(enable_cl=True, enable_aad=True, fusion="concat"),
}


def ensure_dataset(root: str | Path, seed: int = 1, gen: GenConfig | None = None,
                   **limits) -> DatasetIndex:
    """Load the manifest under ``root``, generating the benchmark first if it is missing."""
    root = Path(root)
    if not (root / "manifest.json").is_file():
        log.info("generating dataset under %s", root)
        generate_dataset(gen or GenConfig(), seed, root)
    return load_manifest(root, **limits)


def train_arm(config: RunConfig, arm: str, index: DatasetIndex) -> FewShotSegmenter:
    cfg = config.replace(**ARMS[arm])
    log.info("training %s for %d episodes", arm, cfg.episodes_total)
    return train(cfg, index).model


def ablation(config: RunConfig, index: DatasetIndex, arms=("baseline", "cl", "aad"), ks=(1, 5),
             tasks: int = 200, runs: int = 2) -> dict[str, dict[int, float]]:
    """mIoU per arm and shot count, every arm on the same budget and evaluation seeds."""
    table = {}
    for arm in arms:
        model = train_arm(config, arm, index)
        table[arm] = {K: run_protocol(model, index, K, "average", tasks=tasks, runs=runs,
                                      base_seed=config.seed).miou for K in ks}
    return table


def shot_sweep(model, index: DatasetIndex, ks=(1, 5, 20), strategy: str = "average",
               tasks: int = 200, runs: int = 2, base_seed: int = 1):
    return {K: run_protocol(model, index, K, strategy, tasks=tasks, runs=runs, base_seed=base_seed) for K in ks}


def forward_macs(config: RunConfig, seed: int = 0) -> int:
    """Multiply-accumulates of one one-shot forward (support and query encoding included)."""
    model = build_model(config)
    rng = np.random.default_rng(seed)
    s = config.image_size
    mask = np.zeros((s, s), dtype=np.uint8)
    mask[s // 4: s // 2, s // 4: s // 2] = 1
    with count_flops() as counter:
        model.forward(rng.uniform(size=(s, s)), mask, rng.uniform(size=(s, s)))
    return counter.macs


def query_count_sweep(config: RunConfig, index: DatasetIndex, counts=(5, 15, 30), K: int = 1,
                      tasks: int = 200, runs: int = 2, models: dict | None = None):
    """``{N: (miou, macs)}``; ``models`` may supply already trained models keyed by N."""
    out = {}
    for N in counts:
        cfg = config.replace(N=N, **ARMS["aad"])
        model = (models or {}).get(N) or train(cfg, index).model
        miou = run_protocol(model, index, K, "average", tasks=tasks, runs=runs, base_seed=config.seed).miou
        out[N] = (miou, forward_macs(cfg))
    return out
