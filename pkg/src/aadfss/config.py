"""Run configuration shared by training, evaluation and the CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .aad import VARIANTS, ConfigurationError

# fields that change the learned function; the checkpoint fingerprint covers these
MODEL_KEYS = ("input_scale", "in_channels", "stem_width", "widths", "l", "N", "fusion", "enable_cl", "enable_aad", "image_size")


@dataclass
class RunConfig:
    seed: int = 1
    data_root: str = "data"
    # dataset minimums per test class; lower them only for smoke-sized data
    min_test_support: int = 20
    min_test_query: int = 10
    image_size: int = 64
    in_channels: int = 1
    input_scale: float = 5.0
    stem_width: int = 16
    widths: tuple[int, int, int] = (32, 64, 128)
    l: int = 64
    N: int = 15
    fusion: str = "aad"
    enable_cl: bool = True
    enable_aad: bool = True
    lr: float = 1e-3
    # "constant", or "cosine" decay to zero over episodes_total
    lr_schedule: str = "cosine"
    weight_decay: float = 0.05
    episodes_total: int = 2000
    batch_size: int = 1
    val_interval: int = 500
    val_episodes: int = 32
    checkpoint: str = "model.ckpt"
    # evaluation
    k: int = 1
    strategy: str = "average"
    tasks: int = 1000
    runs: int = 2
    per_task_mean: bool = False
    out: str = "runs/default"
    extra: dict = field(default_factory=dict)

    def validate(self) -> RunConfig:
        if self.enable_aad and not self.enable_cl:
            raise ConfigurationError("enable_aad requires enable_cl (AAD consumes the coarse masks)")
        if self.enable_aad and self.N < 1:
            raise ConfigurationError("N must be >= 1 when AAD is enabled")
        if self.fusion not in VARIANTS:
            raise ConfigurationError(f"fusion must be one of {VARIANTS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError("lr_schedule must be constant or cosine")
        if self.strategy not in ("vote", "average"):
            raise ConfigurationError("strategy must be vote or average")
        if self.image_size % 32:
            raise ConfigurationError("image_size must be divisible by 32")
        if self.l % 4 or self.l < 4:
            raise ConfigurationError("l must be a positive multiple of 4")
        if self.batch_size < 1 or self.episodes_total < 0:
            raise ConfigurationError("batch_size must be >= 1 and episodes_total >= 0")
        return self

    @property
    def arm(self) -> str:
        if not self.enable_cl:
            return "baseline"
        if not self.enable_aad:
            return "cl"
        return "aad" if self.fusion == "aad" else self.fusion

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    @property
    def data_limits(self) -> dict:
        return {"min_test_support": self.min_test_support, "min_test_query": self.min_test_query}

    def fingerprint(self) -> int:
        """48-bit hash of the model-defining fields (exact as a float64)."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in MODEL_KEYS}, sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:6], "big")

    def snapshot(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
