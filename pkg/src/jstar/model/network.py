"""Fast/slow cascaded transducer for joint recognition and translation, and
its character-input translation variant."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..rnnt import rnnt_loss_batch
from .config import ModelConfig
from .encoder import (Encoder, FeatureSequence, compose, dependency_set,
                      reduction_interval, time_reduce)
from .layers import Joiner, Linear, Module, Predictor, _param

SCOPES = {
    "fast": ("front.", "fast.", "asr_pred.", "asr_join."),
    "slow": ("slow.", "st_pred.", "st_join."),
}
SCOPES["fast+slow"] = SCOPES["fast"] + SCOPES["slow"]


@dataclass
class Losses:
    loss: nc.Tensor
    loss_asr: nc.Tensor
    loss_st: nc.Tensor

    def values(self) -> tuple[float, float, float]:
        return self.loss.item(), self.loss_asr.item(), self.loss_st.item()


class Front(Module):
    """Time reduction plus projection for features, or a character table."""

    def __init__(self, rng, config: ModelConfig):
        self.variant = config.variant
        self.factor = config.time_reduction
        if config.variant == "jstar":
            self.proj = Linear(rng, config.input_dim * config.time_reduction, config.hidden_dim)
        else:
            self.embed = _param(rng.uniform(-1, 1, size=(config.char_vocab_size, config.hidden_dim)),
                                "embed")

    def prepare(self, inputs: Sequence) -> tuple[np.ndarray, list[int]]:
        """Pad a batch of raw inputs; returns the padded array and frame counts."""
        if self.variant == "jstar":
            reduced = [time_reduce(FeatureSequence(np.asarray(f, dtype=nc.DTYPE), 1.0), self.factor).frames
                       for f in inputs]
            lengths = [r.shape[0] for r in reduced]
            T = max(lengths, default=0)
            D = reduced[0].shape[1] if reduced else 0
            out = np.zeros((len(reduced), T, D), dtype=nc.DTYPE)
            for i, r in enumerate(reduced):
                out[i, :len(r)] = r
            return out, lengths
        lengths = [len(s) for s in inputs]
        ids = np.zeros((len(inputs), max(lengths, default=0)), dtype=np.int64)
        for i, s in enumerate(inputs):
            ids[i, :len(s)] = s
        return ids, lengths

    def __call__(self, prepared: np.ndarray) -> nc.Tensor:
        if self.variant == "jstar":
            x = nc.Tensor(prepared, dtype=self.proj.weight.dtype)
            return self.proj(x)
        return nc.take(self.embed, prepared)


class JstarModel(Module):
    """Front -> fast encoder -> slow encoder, with one predictor/joiner pair
    reading the fast encoder (recognition) and a separate pair reading the
    slow encoder (translation)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.front = Front(rng, c)
        self.fast = Encoder(rng, c.fast_layers, c.hidden_dim, c.ffn_dim, c.heads, c.chunk_fast,
                            c.left_context, c.right_context, c.max_rel_pos)
        self.asr_pred = Predictor(rng, c.vocab_size, c.predictor_dim, c.joiner_dim, c.dropout)
        self.asr_join = Joiner(rng, c.hidden_dim, c.joiner_dim, c.vocab_size)
        self.slow = Encoder(rng, c.slow_layers, c.hidden_dim, c.ffn_dim, c.heads, c.chunk_slow,
                            c.left_context, c.right_context, c.max_rel_pos)
        self.st_pred = Predictor(rng, c.vocab_size, c.predictor_dim, c.joiner_dim, c.dropout)
        self.st_join = Joiner(rng, c.hidden_dim, c.joiner_dim, c.vocab_size)

    # ---------------------------------------------------------------- forward
    def encode(self, inputs: Sequence) -> tuple[nc.Tensor, nc.Tensor, list[int]]:
        prepared, lengths = self.front.prepare(inputs)
        x = self.front(prepared)
        fast = self.fast(x, lengths)
        slow = self.slow(fast, lengths)
        return fast, slow, lengths

    def losses(self, inputs: Sequence, asr_targets: Sequence[Sequence[int]],
               st_targets: Sequence[Sequence[int]], lambda_asr: float | None = None) -> Losses:
        """Batch-mean transducer losses and their weighted sum."""
        lam = self.config.lambda_asr if lambda_asr is None else lambda_asr
        fast, slow, lengths = self.encode(inputs)
        asr_enc = fast if self.config.asr_position == "fast" else slow
        asr_logits = self.asr_join(asr_enc, self.asr_pred(asr_targets))
        st_logits = self.st_join(slow, self.st_pred(st_targets))
        n = len(lengths)
        loss_asr = nc.sum_all(rnnt_loss_batch(asr_logits, asr_targets, lengths)) * (1.0 / n)
        loss_st = nc.sum_all(rnnt_loss_batch(st_logits, st_targets, lengths)) * (1.0 / n)
        return Losses(loss_st + loss_asr * lam, loss_asr, loss_st)

    def asr_loss(self, inputs: Sequence, asr_targets: Sequence[Sequence[int]]) -> nc.Tensor:
        """Batch-mean recognition loss alone; skips the slow stack when the
        recognition head reads the fast encoder."""
        prepared, lengths = self.front.prepare(inputs)
        enc = self.fast(self.front(prepared), lengths)
        if self.config.asr_position == "slow":
            enc = self.slow(enc, lengths)
        logits = self.asr_join(enc, self.asr_pred(asr_targets))
        return nc.sum_all(rnnt_loss_batch(logits, asr_targets, lengths)) * (1.0 / len(lengths))

    # ----------------------------------------------------------- bookkeeping
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def to_dtype(self, dtype) -> "JstarModel":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    # ----------------------------------------------------------- dependencies
    def input_frames(self, T_raw: int) -> int:
        if self.config.variant == "jstar":
            return -(-T_raw // self.config.time_reduction)
        return T_raw

    def dependency_sets(self, T_raw: int) -> dict[str, list[tuple[int, int]]]:
        """Raw-input dependency interval of every encoder output frame, for the
        fast and the slow stack."""
        c = self.config
        T = self.input_frames(T_raw)
        fast = dependency_set(T, c.chunk_fast, c.left_context, c.right_context, c.fast_layers)
        slow = compose(dependency_set(T, c.chunk_slow, c.left_context, c.right_context,
                                      c.slow_layers), fast)
        if c.variant == "jstar":
            red = reduction_interval(T_raw, c.time_reduction)
            fast, slow = compose(fast, red), compose(slow, red)
        return {"fast": fast, "slow": slow}


def jstar_forward(model: JstarModel, features: Sequence, asr_targets, st_targets,
                  lambda_asr: float | None = None) -> Losses:
    """Multi-objective loss ``loss_st + lambda * loss_asr`` for feature inputs."""
    if model.config.variant != "jstar":
        raise ValueError("jstar_forward needs a jstar-variant model")
    return model.losses(features, asr_targets, st_targets, lambda_asr)


def mt_forward(model: JstarModel, source_chars: Sequence[Sequence[int]],
               source_pieces, target_pieces) -> Losses:
    """Translation loss plus the weighted source-side loss of the fast head.

    In the returned :class:`Losses`, ``loss_asr`` is the source-language
    term and ``loss_st`` the target-language term.
    """
    if model.config.variant != "mt_char":
        raise ValueError("mt_forward needs an mt_char-variant model")
    return model.losses(source_chars, source_pieces, target_pieces)


def init_from_checkpoint(model: JstarModel, checkpoint: dict[str, np.ndarray],
                         scope: str) -> JstarModel:
    """Copy the parameters of one scope from ``checkpoint`` into ``model``.

    ``fast`` covers the front end, fast encoder and recognition head;
    ``slow`` covers the slow encoder and translation head.
    """
    try:
        prefixes = SCOPES[scope]
    except KeyError:
        raise ValueError(f"scope must be one of {sorted(SCOPES)}") from None
    selected = [(n, p) for n, p in model.named_parameters() if n.startswith(prefixes)]
    for name, p in selected:
        if name not in checkpoint:
            raise KeyError(f"checkpoint lacks required parameter {name}")
        if checkpoint[name].shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint "
                             f"{checkpoint[name].shape} vs model {p.shape}")
    for name, p in selected:
        p.data[...] = checkpoint[name]
    return model
