from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..model.config import ModelConfig
from ..numcore import OptimConfig
from .data import TASKS

INIT_SCOPES = ("fast", "slow", "fast+slow")


class ConfigError(ValueError):
    pass


@dataclass
class InitSpec:
    path: str
    scope: str

    def __post_init__(self):
        if self.scope not in INIT_SCOPES:
            raise ConfigError(f"init scope must be one of {INIT_SCOPES}, got {self.scope!r}")


@dataclass
class RunConfig:
    """Everything one training/evaluation run needs.

    ``model`` holds overrides on top of the task's desk-scale default.
    ``eval_every`` and ``dev_size`` control the periodic dev-loss probe.
    """

    task: str
    data_dir: str
    out: str = "run/model.ckpt"
    steps: int = 1000
    batch_size: int = 16
    seed: int = 0
    lr: float = 3e-3
    lr_final: float | None = None  # linear decay from lr to this by the last step
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    clip_norm: float = 5.0
    lambda_asr: float | None = None
    model: dict = field(default_factory=dict)
    init: list[InitSpec] = field(default_factory=list)
    eval_every: int = 100
    dev_size: int = 64
    beam_size: int = 4
    max_symbols: int = 6
    log: str | None = None
    time_limit_s: float | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.init = [i if isinstance(i, InitSpec) else InitSpec(**i) for i in self.init]
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final < 0):
            raise ConfigError("learning rates must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``."""
        if self.lr_final is None or self.steps == 1:
            return self.lr
        frac = (step - 1) / (self.steps - 1)
        return self.lr + frac * (self.lr_final - self.lr)

    @property
    def optim(self) -> OptimConfig:
        return OptimConfig(self.lr, self.betas, self.eps, self.clip_norm)

    def model_config(self, meta: dict) -> ModelConfig:
        n_words = meta["n_words"]
        vocab_size = len(meta["vocab"])
        if self.task == "toy_mt_reorder":
            base = ModelConfig.desk_mt(len(meta["chars"]), vocab_size)
        else:
            base = ModelConfig.desk(2 * n_words, vocab_size)
        overrides = dict(self.model)
        if self.lambda_asr is not None:
            overrides["lambda_asr"] = self.lambda_asr
        return base.replace(**overrides) if overrides else base

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown run config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
