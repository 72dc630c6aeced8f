"""Test-set evaluation: decoding, error rates, BLEU, latency and alignments."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import numcore as nc
from ..decode import ModelHead, TransducerHead, beam_decode, latency_stats
from ..metrics import bleu, sa_wer_counts, wer
from ..model import JstarModel, load_model
from ..rnnt import viterbi_align
from ..sot import OTHER, SELF, TAG_TO_SPEAKER, SotSequence, alignment_from_viterbi
from ..vocab import Vocabulary
from .config import RunConfig
from .data import DatasetRecord, read_meta, read_records
from .train import make_examples

REPORT_KEYS = ("wer_self", "wer_other", "sa_wer", "bleu_fwd", "bleu_rev", "p50_first_ms",
               "p50_last_ms")


class EvalError(ValueError):
    pass


HeadsFor = Callable[[DatasetRecord], tuple[TransducerHead, TransducerHead, object]]


def evaluate_conversation(records: Sequence[DatasetRecord], heads_for: HeadsFor,
                          vocab: Vocabulary, beam_size: int = 4,
                          max_symbols: int = 6) -> dict:
    """Report over conversation records.

    ``heads_for(record)`` returns the recognition head, the translation head
    and the decoder input for that record.
    """
    if not records:
        raise EvalError("no records to evaluate")
    errors = {SELF: 0, OTHER: 0, None: 0}
    ref_words = {SELF: 0, OTHER: 0}
    refs = {SELF: [], OTHER: []}
    hyps = {SELF: [], OTHER: []}
    segments = []
    for r in records:
        asr_head, st_head, inputs = heads_for(r)
        nbest, _ = beam_decode(asr_head, inputs, beam_size, max_symbols)
        err, cnt = sa_wer_counts(SotSequence(tuple(r.asr_text())),
                                 SotSequence(tuple(vocab.decode(nbest[0].tokens))), strict=False)
        for k, v in err.items():
            errors[k] += v
        for k, v in cnt.items():
            ref_words[k] += v

        nbest, events = beam_decode(st_head, inputs, beam_size, max_symbols)
        hyp = SotSequence(tuple(vocab.decode(nbest[0].tokens))).by_speaker(strict=False)
        ref = SotSequence(tuple(r.st_text())).by_speaker()
        for spk in (SELF, OTHER):
            refs[spk].append(" ".join(ref[spk]))
            hyps[spk].append(" ".join(hyp[spk]))
        word_events = [e for e in events if vocab.tokens[e.token] not in TAG_TO_SPEAKER]
        segments.append((word_events, min(w.start_ms for w in r.words),
                         max(w.end_ms for w in r.words)))
    lat = latency_stats(segments)
    total = sum(ref_words.values())
    return {
        "wer_self": errors[SELF] / ref_words[SELF] if ref_words[SELF] else None,
        "wer_other": errors[OTHER] / ref_words[OTHER] if ref_words[OTHER] else None,
        "sa_wer": sum(errors.values()) / total,
        "bleu_fwd": bleu(refs[SELF], hyps[SELF]),
        "bleu_rev": bleu(refs[OTHER], hyps[OTHER]),
        "p50_first_ms": lat.first_token_p50,
        "p50_last_ms": lat.last_token_p50,
    }


def word_boundaries(source: str) -> list[tuple[int, int]]:
    """Half-open character spans; each word owns its trailing space."""
    starts = [i for i, c in enumerate(source) if c != " " and (i == 0 or source[i - 1] == " ")]
    ends = starts[1:] + [len(source)]
    if starts and starts[0] != 0:
        starts[0] = 0
    return list(zip(starts, ends))


def forced_logits(model: JstarModel, inputs, target: Sequence[int], head: str = "st") -> np.ndarray:
    """Joiner logits ``[T, U+1, V]`` of one head for a given target."""
    model.eval()
    with nc.no_grad():
        fast, slow, _ = model.encode([inputs])
        if head == "asr":
            enc = fast if model.config.asr_position == "fast" else slow
            out = model.asr_join(enc, model.asr_pred([list(target)]))
        else:
            out = model.st_join(slow, model.st_pred([list(target)]))
    return out.data[0].astype(np.float64)


def viterbi_word_alignment(model: JstarModel, record: DatasetRecord, example) -> list[tuple[int, int]]:
    path = viterbi_align(forced_logits(model, example.inputs, example.st), example.st)
    # single-letter target words: piece u belongs to word u
    align = alignment_from_viterbi(path, word_boundaries(record.source), list(range(len(example.st))))
    return list(align.pairs)


def evaluate_mt(model: JstarModel, records: Sequence[DatasetRecord], meta: dict,
                beam_size: int = 4, max_symbols: int = 6) -> dict:
    """BLEU, exact-sequence accuracy, source WER and Viterbi alignment
    accuracy against the gold word alignment."""
    if not records:
        raise EvalError("no records to evaluate")
    vocab = Vocabulary.from_list(meta["vocab"])
    examples = make_examples(records, meta)
    st, asr = ModelHead(model, "st"), ModelHead(model, "asr")
    refs, hyps = [], []
    exact = src_err = src_words = aligned = gold_words = 0
    for r, ex in zip(records, examples):
        nbest, _ = beam_decode(st, ex.inputs, beam_size, max_symbols)
        ref, hyp = vocab.decode(ex.st), vocab.decode(nbest[0].tokens)
        refs.append(" ".join(ref))
        hyps.append(" ".join(hyp))
        exact += ref == hyp
        src_hyp, _ = beam_decode(asr, ex.inputs, beam_size, max_symbols)
        src_err += round(wer(ex.asr, list(src_hyp[0].tokens)) * len(ex.asr))
        src_words += len(ex.asr)
        got = set(viterbi_word_alignment(model, r, ex))
        gold = r.alignment[SELF]
        aligned += sum(1 for p in gold if tuple(p) in got)
        gold_words += len(gold)
    return {"bleu": bleu(refs, hyps), "exact_match": exact / len(records),
            "wer_source": src_err / src_words, "align_acc": aligned / gold_words}


def evaluate_asr(model: JstarModel, records: Sequence[DatasetRecord], meta: dict,
                 beam_size: int = 4, max_symbols: int = 6) -> dict:
    examples = make_examples(records, meta)
    head = ModelHead(model, "asr")
    errors = words = 0
    for ex in examples:
        nbest, _ = beam_decode(head, ex.inputs, beam_size, max_symbols)
        errors += round(wer(ex.asr, list(nbest[0].tokens)) * len(ex.asr))
        words += len(ex.asr)
    return {"wer": errors / words}


def model_heads(model: JstarModel) -> HeadsFor:
    asr, st = ModelHead(model, "asr"), ModelHead(model, "st")
    return lambda r: (asr, st, r.frames)


def evaluate(config: RunConfig, checkpoint, report_path=None, split: str = "test",
             limit: int | None = None) -> dict:
    model, ckpt_meta = load_model(checkpoint)
    meta = read_meta(config.data_dir)
    if ckpt_meta.get("vocab") != meta["vocab"]:
        raise EvalError("vocabulary mismatch between checkpoint and dataset")
    if config.task == "toy_mt_reorder" and ckpt_meta.get("chars") != meta.get("chars"):
        raise EvalError("character inventory mismatch between checkpoint and dataset")
    records = read_records(Path(config.data_dir) / f"{split}.jsonl")[:limit]
    if config.task == "toy_conversation":
        report = evaluate_conversation(records, model_heads(model), Vocabulary.from_list(meta["vocab"]),
                                       config.beam_size, config.max_symbols)
    elif config.task == "toy_mt_reorder":
        report = evaluate_mt(model, records, meta, config.beam_size, config.max_symbols)
    else:
        report = evaluate_asr(model, records, meta, config.beam_size, config.max_symbols)
    if report_path:
        Path(report_path).write_text(json.dumps(report, indent=2))
    return report
