"""Episodic training on base classes with AdamW, CSV loss logs and checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .config import RunConfig
from .dataset import DatasetIndex, load_manifest, sample_episode
from .decoder import bce_loss
from .model import FewShotSegmenter, build_model
from .optim import AdamW

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: FewShotSegmenter
    optimizer: AdamW
    episode: int
    losses: list[float] = field(default_factory=list)
    val_losses: list[tuple[int, float]] = field(default_factory=list)


def episode_loss(model: FewShotSegmenter, episode, q_seed: int) -> T.Tensor:
    (s_img, s_mask), = episode.support
    logits = model.forward(s_img, s_mask, episode.query[0], q_seed)
    return bce_loss(logits, episode.query[1])


def validation_episodes(index: DatasetIndex, seed: int, count: int):
    rng = np.random.default_rng([seed, 3])
    return [(sample_episode(index, "train", 1, rng), int(rng.integers(2**31))) for _ in range(count)]


def validation_loss(model: FewShotSegmenter, episodes) -> float:
    with T.no_grad():
        return float(np.mean([episode_loss(model, ep, s).item() for ep, s in episodes]))


def scheduled_lr(config: RunConfig, episode: int) -> float:
    """Learning rate in force for the batch that starts at ``episode``."""
    if config.lr_schedule == "constant" or config.episodes_total == 0:
        return config.lr
    return float(0.5 * config.lr * (1.0 + np.cos(np.pi * episode / config.episodes_total)))


def train(config: RunConfig, index: DatasetIndex | None = None, log_path: str | Path | None = None,
          checkpoint_path: str | Path | None = None) -> TrainResult:
    """Run ``config.episodes_total`` one-shot episodes, one AdamW step per batch."""
    config.validate()
    if index is None:
        index = load_manifest(config.data_root, **config.data_limits)
    if not index.classes("train"):
        raise TrainingError("training split is empty")
    model = build_model(config)
    opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])
    val_set = validation_episodes(index, config.seed, config.val_episodes) if config.val_interval else []
    result = TrainResult(model, opt, 0)
    rows = ["episode,loss,lr"]
    pending = 0
    for ep in range(config.episodes_total):
        episode = sample_episode(index, "train", 1, rng)
        q_seed = int(rng.integers(2**31))
        in_batch = min(config.batch_size, config.episodes_total - (ep - pending))
        if pending == 0:
            opt.state.lr = scheduled_lr(config, ep)
        try:
            loss = episode_loss(model, episode, q_seed)
            T.backward(loss * (1.0 / in_batch))
        except T.NonFiniteError as exc:
            raise TrainingError(f"non-finite value at episode {ep} (class {episode.class_id}): {exc}") from exc
        value = loss.item()
        result.losses.append(value)
        rows.append(f"{ep},{value!r},{opt.state.lr!r}")
        pending += 1
        if pending == in_batch:
            opt.step()
            opt.zero_grad()
            pending = 0
        result.episode = ep + 1
        if config.val_interval and (ep + 1) % config.val_interval == 0:
            v = validation_loss(model, val_set)
            result.val_losses.append((ep + 1, v))
            log.info("episode %d  train %.4f  val %.4f", ep + 1, float(np.mean(result.losses[-config.val_interval:])), v)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, result, config)
    if log_path is not None:
        Path(log_path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result, config)
    return result


# --- checkpoints --------------------------------------------------------------


def checkpoint_entries(model: FewShotSegmenter, opt: AdamW | None, episode: int, config: RunConfig) -> dict:
    entries = {f"param/{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        names = [k for k, _ in model.named_parameters()]
        s = opt.state
        entries["optim/t"] = np.array(float(s.t))
        entries["optim/hyper"] = np.array([s.lr, s.weight_decay, s.beta1, s.beta2, s.eps])
        for name, m, v in zip(names, s.m, s.v):
            entries[f"optim/m/{name}"] = m
            entries[f"optim/v/{name}"] = v
    entries["meta/episode"] = np.array(float(episode))
    entries["meta/fingerprint"] = np.array(float(config.fingerprint()))
    return entries


def save_checkpoint(path: str | Path, result: TrainResult, config: RunConfig) -> None:
    ckpt.save(path, checkpoint_entries(result.model, result.optimizer, result.episode, config))


def load_checkpoint(path: str | Path, config: RunConfig) -> TrainResult:
    entries = ckpt.load(path)
    fp = entries.get("meta/fingerprint")
    if fp is None or int(fp) != config.fingerprint():
        raise ckpt.CheckpointError("checkpoint was written for a different model configuration")
    model = build_model(config)
    model.load_state_dict({k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")})
    opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    if "optim/t" in entries:
        lr, wd, b1, b2, eps = entries["optim/hyper"]
        s = opt.state
        s.lr, s.weight_decay, s.beta1, s.beta2, s.eps = float(lr), float(wd), float(b1), float(b2), float(eps)
        s.t = int(entries["optim/t"])
        names = [k for k, _ in model.named_parameters()]
        s.m = [entries[f"optim/m/{n}"].copy() for n in names]
        s.v = [entries[f"optim/v/{n}"].copy() for n in names]
    return TrainResult(model, opt, int(entries["meta/episode"]))
