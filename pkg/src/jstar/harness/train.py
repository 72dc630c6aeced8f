"""Mini-batch training on the synthetic tasks."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..model import JstarModel, load_checkpoint, save_model
from ..model.network import SCOPES, init_from_checkpoint
from ..vocab import Vocabulary
from .config import RunConfig
from .data import DatasetRecord, read_meta, read_records

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Example:
    inputs: object  # raw frames [T, D] or source character ids
    asr: list[int]
    st: list[int]


def make_examples(records: Sequence[DatasetRecord], meta: dict) -> list[Example]:
    vocab = Vocabulary.from_list(meta["vocab"])
    out = []
    if meta["task"] == "toy_mt_reorder":
        chars = {c: i for i, c in enumerate(meta["chars"])}
        for r in records:
            out.append(Example([chars[c] for c in r.source],
                               vocab.encode(w.text for w in r.words),
                               vocab.encode(w.text for w in r.translation_words)))
    else:
        for r in records:
            out.append(Example(r.frames, vocab.encode(r.asr_text()), vocab.encode(r.st_text())))
    return out


def objective(model: JstarModel, task: str, batch: Sequence[Example]):
    """(loss tensor, (loss, loss_asr, loss_st)) for one batch."""
    inputs = [e.inputs for e in batch]
    asr = [e.asr for e in batch]
    if task == "toy_asr":
        loss = model.asr_loss(inputs, asr)
        v = loss.item()
        return loss, (v, v, 0.0)
    losses = model.losses(inputs, asr, [e.st for e in batch])
    return losses.loss, losses.values()


def dev_losses(model: JstarModel, task: str, examples: Sequence[Example],
               batch_size: int = 16) -> dict[str, float]:
    """Example-weighted mean losses with dropout off."""
    was_training = model.training
    model.eval()
    totals = np.zeros(3)
    with nc.no_grad():
        for i in range(0, len(examples), batch_size):
            batch = examples[i:i + batch_size]
            _, values = objective(model, task, batch)
            totals += np.array(values) * len(batch)
    model.train(was_training)
    n = max(len(examples), 1)
    return dict(zip(("dev_loss", "dev_loss_asr", "dev_loss_st"), (totals / n).tolist()))


def build_model(config: RunConfig, meta: dict) -> JstarModel:
    model = JstarModel(config.model_config(meta), seed=config.seed)
    for spec in config.init:
        init_from_checkpoint(model, load_checkpoint(spec.path), spec.scope)
    return model


@dataclass
class TrainResult:
    checkpoint: str
    log: list[dict]
    model: JstarModel

    def dev_curve(self, key: str = "dev_loss") -> list[tuple[int, float]]:
        return [(r["step"], r[key]) for r in self.log if key in r]


def train(config: RunConfig, model: JstarModel | None = None) -> TrainResult:
    """Run ``config.steps`` Adam steps and write the checkpoint.

    The run is a pure function of the config: model init, batch order and
    dropout all derive from ``config.seed``.
    """
    meta = read_meta(config.data_dir)
    if meta["task"] != config.task:
        raise ValueError(f"dataset holds {meta['task']!r} but the run asks for {config.task!r}")
    train_ex = make_examples(read_records(Path(config.data_dir) / "train.jsonl"), meta)
    dev_ex = make_examples(read_records(Path(config.data_dir) / "dev.jsonl"), meta)[:config.dev_size]
    if not train_ex:
        raise ValueError("training split is empty")
    model = model or build_model(config, meta)
    if config.task == "toy_asr":
        params = [p for n, p in model.named_parameters() if n.startswith(SCOPES["fast"])]
    else:
        params = model.parameters()
    opt = nc.Adam(params, config.optim)
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    records: list[dict] = []
    log_file = open(config.log, "w") if config.log else None

    def emit(rec: dict) -> None:
        records.append(rec)
        if log_file:
            log_file.write(json.dumps(rec) + "\n")
            log_file.flush()

    def probe(step: int) -> None:
        if dev_ex:
            emit({"step": step, **dev_losses(model, config.task, dev_ex, config.batch_size)})

    t0 = time.monotonic()
    model.train()
    model.zero_grad()
    perm, pos = order_rng.permutation(len(train_ex)), 0
    step = 0
    try:
        probe(0)
        for step in range(1, config.steps + 1):
            if pos + config.batch_size > len(perm):
                perm, pos = order_rng.permutation(len(train_ex)), 0
            batch = [train_ex[i] for i in perm[pos:pos + config.batch_size]]
            pos += config.batch_size
            with nc.Graph():
                loss, values = objective(model, config.task, batch)
                if not all(math.isfinite(v) for v in values):
                    raise nc.NonFiniteError(f"loss values {values}")
                nc.backward(loss)
            opt.lr = config.lr_at(step)
            norm = opt.step()
            emit({"step": step, "loss": values[0], "loss_asr": values[1], "loss_st": values[2],
                  "grad_norm": norm})
            if step % config.eval_every == 0 or step == config.steps:
                probe(step)
            if config.time_limit_s is not None and time.monotonic() - t0 > config.time_limit_s:
                log.warning("time limit reached after %d steps", step)
                if step % config.eval_every and step != config.steps:
                    probe(step)
                break
    except nc.NonFiniteError as exc:
        raise TrainingDiverged(f"training diverged at step {step}: {exc}") from exc
    finally:
        if log_file:
            log_file.close()
    model.eval()
    Path(config.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(config.out, model, meta["vocab"], {"task": config.task, "chars": meta.get("chars")})
    return TrainResult(config.out, records, model)


def steps_to_reach(curve: Sequence[tuple[int, float]], threshold: float) -> int | None:
    """First logged step whose value is at or below ``threshold``."""
    for step, value in curve:
        if value <= threshold:
            return step
    return None
