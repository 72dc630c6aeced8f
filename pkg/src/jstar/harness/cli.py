"""``jstar`` command line: data generation, training, evaluation, decoding."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..decode import ModelHead, beam_decode, theoretical_latency
from ..model import load_model
from ..model.checkpoint import CheckpointError
from ..sot import SotSequence
from ..vocab import Vocabulary
from .config import InitSpec, RunConfig
from .data import TASKS, generate, read_records, write_dataset
from .evaluate import evaluate, viterbi_word_alignment
from .train import make_examples, train


def _meta_from_checkpoint(meta: dict) -> dict:
    return {"task": meta.get("task"), "vocab": meta["vocab"], "chars": meta.get("chars")}


def cmd_gen_data(args) -> int:
    splits = generate(args.task, args.n, args.seed, n_words=args.vocab, n_dev=args.n_dev,
                      n_test=args.n_test, overlap_prob=args.overlap, mode=args.mode)
    write_dataset(args.out, args.task, splits, args.vocab, seed=args.seed,
                  overlap_prob=args.overlap, mode=args.mode)
    print(json.dumps({k: len(v) for k, v in splits.items()}))
    return 0


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    if len(args.init_from) != len(args.init_scope):
        raise ValueError("give one --init-scope per --init-from")
    config.init += [InitSpec(p, s) for p, s in zip(args.init_from, args.init_scope)]
    if args.steps is not None:
        config.steps = args.steps
    if args.out is not None:
        config.out = args.out
    config.validate()
    result = train(config)
    last = result.log[-1]
    print(json.dumps({"checkpoint": result.checkpoint, **last}))
    return 0


def cmd_eval(args) -> int:
    config = RunConfig.load(args.config)
    report = evaluate(config, args.ckpt, args.report, split=args.split, limit=args.limit)
    print(json.dumps(report, indent=2))
    return 0


def cmd_decode(args) -> int:
    model, meta = load_model(args.ckpt)
    vocab = Vocabulary.from_list(meta["vocab"])
    records = read_records(args.input)
    examples = make_examples(records, _meta_from_checkpoint(meta))
    heads = ["asr", "st"] if args.head == "both" else [args.head]
    for r, ex in zip(records, examples):
        for name in heads:
            nbest, events = beam_decode(ModelHead(model, name), ex.inputs, args.beam, args.max_symbols)
            words = SotSequence(tuple(vocab.decode(nbest[0].tokens))).by_speaker(strict=False)
            print(json.dumps({
                "id": r.id, "head": name, "tokens": list(nbest[0].tokens),
                "emit_ms": [e.emit_time_ms for e in events],
                "finalize_ms": [e.finalize_time_ms for e in events],
                "text": {str(k): " ".join(v) for k, v in words.items()},
            }))
    return 0


def cmd_latency(args) -> int:
    print(theoretical_latency(args.chunk_ms, args.rc_ms))
    return 0


def cmd_align(args) -> int:
    model, meta = load_model(args.ckpt)
    if model.config.variant != "mt_char":
        raise ValueError("align needs a character-input translation checkpoint")
    records = read_records(args.input)
    examples = make_examples(records, {**_meta_from_checkpoint(meta), "task": "toy_mt_reorder"})
    for r, ex in zip(records, examples):
        pairs = viterbi_word_alignment(model, r, ex)
        print(json.dumps({"id": r.id, "alignment": pairs,
                          "gold": [list(p) for p in r.alignment.get("SELF", [])]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jstar", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--task", required=True, choices=TASKS)
    g.add_argument("--n", type=int, required=True, help="training records")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--n-dev", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--vocab", type=int, default=10, help="words per language")
    g.add_argument("--overlap", type=float, default=0.2)
    g.add_argument("--mode", default="swap_pairs", choices=("swap_pairs", "copy"))
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--init-from", action="append", default=[])
    t.add_argument("--init-scope", action="append", default=[],
                   choices=("fast", "slow", "fast+slow"))
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--config", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report")
    e.add_argument("--split", default="test", choices=("train", "dev", "test"))
    e.add_argument("--limit", type=int)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="beam-decode records, one JSON line per head")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--beam", type=int, default=4)
    d.add_argument("--max-symbols", type=int, default=6)
    d.add_argument("--head", default="both", choices=("asr", "st", "both"))
    d.set_defaults(func=cmd_decode)

    lat = sub.add_parser("latency", help="theoretical latency of a chunked encoder")
    lat.add_argument("--chunk-ms", type=float, required=True)
    lat.add_argument("--rc-ms", type=float, required=True)
    lat.set_defaults(func=cmd_latency)

    a = sub.add_parser("align", help="Viterbi word alignments from a translation checkpoint")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--input", required=True)
    a.set_defaults(func=cmd_align)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError, CheckpointError) as exc:
        print(f"jstar: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
