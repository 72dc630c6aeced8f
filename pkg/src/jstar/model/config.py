from __future__ import annotations

import dataclasses
from dataclasses import dataclass

VARIANTS = ("jstar", "mt_char")


@dataclass
class ModelConfig:
    """Architecture and loss weighting.

    The bare constructor gives the full-size recognition + translation model;
    :meth:`desk` and :meth:`desk_mt` give the small models the toy tasks use.
    ``frame_ms`` is the encoder frame rate, i.e. after time reduction.
    """

    variant: str = "jstar"
    input_dim: int = 221  # per raw frame; 6 stacked frames give 1326
    time_reduction: int = 6
    char_vocab_size: int = 0
    fast_layers: int = 20
    slow_layers: int = 10
    hidden_dim: int = 320
    ffn_dim: int = 2048
    heads: int = 4
    chunk_fast: int = 5
    chunk_slow: int = 10
    right_context: int = 1
    left_context: int = 10
    frame_ms: float = 60.0
    vocab_size: int = 9001
    predictor_dim: int = 256
    joiner_dim: int = 768
    lambda_asr: float = 0.5
    dropout: float = 0.1
    asr_position: str = "fast"
    max_rel_pos: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.chunk_fast < 1 or self.chunk_slow < 1:
            raise ValueError("chunk sizes must be >= 1")
        if self.right_context < 0 or self.left_context < 0:
            raise ValueError("context sizes must be >= 0")
        if self.lambda_asr < 0:
            raise ValueError("lambda_asr must be >= 0")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include blank and one label")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.time_reduction < 1:
            raise ValueError("time_reduction must be >= 1")
        if self.asr_position not in ("fast", "slow"):
            raise ValueError("asr_position must be 'fast' or 'slow'")
        if self.variant == "mt_char" and self.char_vocab_size < 1:
            raise ValueError("mt_char needs char_vocab_size")

    @classmethod
    def mt(cls, **overrides) -> "ModelConfig":
        """Character-input translation transducer at full size."""
        base = dict(variant="mt_char", fast_layers=10, slow_layers=10, time_reduction=1,
                    input_dim=0, vocab_size=9001, lambda_asr=0.1, char_vocab_size=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, input_dim: int, vocab_size: int, **overrides) -> "ModelConfig":
        base = dict(input_dim=input_dim, vocab_size=vocab_size, time_reduction=3,
                    fast_layers=2, slow_layers=2, hidden_dim=64, ffn_dim=256, heads=2,
                    chunk_fast=4, chunk_slow=8, right_context=1, left_context=8,
                    frame_ms=60.0, predictor_dim=64, joiner_dim=64, lambda_asr=0.5)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk_mt(cls, char_vocab_size: int, vocab_size: int, **overrides) -> "ModelConfig":
        base = dict(variant="mt_char", input_dim=0, char_vocab_size=char_vocab_size,
                    vocab_size=vocab_size, time_reduction=1, fast_layers=2, slow_layers=2,
                    hidden_dim=64, ffn_dim=256, heads=2, chunk_fast=5, chunk_slow=10,
                    right_context=1, left_context=8, frame_ms=60.0, predictor_dim=64,
                    joiner_dim=64, lambda_asr=0.1)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def chunk_fast_ms(self) -> float:
        return self.chunk_fast * self.frame_ms

    @property
    def chunk_slow_ms(self) -> float:
        return self.chunk_slow * self.frame_ms

    @property
    def right_context_ms(self) -> float:
        return self.right_context * self.frame_ms
