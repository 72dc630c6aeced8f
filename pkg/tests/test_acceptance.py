"""Acceptance criteria 1-11.

Each test records its outcome through the ``criterion`` fixture; the
terminal summary prints one pass/fail line per criterion.  The training
criteria (7-9) run full desk-scale trainings and take most of the time.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from jstar import numcore as nc
from jstar.decode import (ModelHead, StreamingDecoder, beam_decode, greedy_decode, stream_decode,
                          theoretical_latency)
from jstar.harness.config import InitSpec, RunConfig
from jstar.harness.data import generate, write_dataset
from jstar.harness.evaluate import evaluate
from jstar.harness.train import steps_to_reach, train
from jstar.model import JstarModel, ModelConfig, jstar_forward
from jstar.model.encoder import Encoder
from jstar.rnnt import rnnt_brute_force, rnnt_loss
from jstar.sot import OTHER, SELF, TimedWord, WordAlignment, serialize, translate_sot
from conftest import random_batch, tiny_config
from oracles import brute_loss, central_difference, relative_error

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]


# ------------------------------------------------------------ 1: loss oracle

def test_criterion_1_loss_matches_enumeration(criterion):
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(500):
        T, U, V = int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(2, 5))
        logits = rng.normal(size=(T, U + 1, V)) * 2
        target = rng.integers(1, V, size=U).tolist()
        loss = rnnt_loss(logits, target)[0]
        worst = max(worst, abs(loss - rnnt_brute_force(logits, target)),
                    abs(loss - brute_loss(logits, target)))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-6 and elapsed < 10
    criterion(1, ok, f"500 lattices, max |loss - enumeration| = {worst:.2e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------- 2: gradients

def test_criterion_2_gradients_match_finite_differences(criterion):
    rng = np.random.default_rng(102)
    worst_rnnt = 0.0
    for _ in range(50):
        T, U, V = int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(2, 5))
        logits = rng.normal(size=(T, U + 1, V)) * 2
        target = rng.integers(1, V, size=U).tolist()
        grad = rnnt_loss(logits, target)[1]
        numeric = central_difference(lambda a: rnnt_loss(a[0], target)[0], [logits.copy()], 0, 1e-5)
        worst_rnnt = max(worst_rnnt, relative_error(grad, numeric, 1e-3))

    worst_model = 0.0
    for instance in range(50):
        r = np.random.default_rng(1000 + instance)
        model = JstarModel(tiny_config(), seed=instance).eval().to_dtype(np.float64)
        feats, asr, st = random_batch(r, n=2)
        params = dict(model.named_parameters())
        with nc.Graph():
            nc.backward(jstar_forward(model, feats, asr, st).loss)
        names = sorted(params)
        for _ in range(6):
            p = params[names[int(r.integers(len(names)))]]
            idx = tuple(int(r.integers(s)) for s in p.shape)
            old = p.data[idx]
            values = []
            for x in (old + 1e-6, old - 1e-6):
                p.data[idx] = x
                with nc.no_grad():
                    values.append(jstar_forward(model, feats, asr, st).loss.item())
            p.data[idx] = old
            numeric = (values[0] - values[1]) / 2e-6
            worst_model = max(worst_model, relative_error(p.grad[idx], numeric, 1e-4))
    ok = worst_rnnt < 1e-3 and worst_model < 1e-3
    criterion(2, ok, f"worst relative error: transducer loss {worst_rnnt:.1e} (50 lattices), "
                     f"tiny JSTAR {worst_model:.1e} (50 models)")
    assert ok


# ------------------------------------------------------------- 3: latency

def test_criterion_3_latency_arithmetic(criterion):
    fast, slow = theoretical_latency(300, 60), theoretical_latency(600, 60)
    ok = fast == 210 and slow == 360
    criterion(3, ok, f"fast {fast} ms, slow {slow} ms")
    assert ok


# ---------------------------------------------------------- 4: chunk masks

ENCODER_CONFIGS = [  # (layers, chunk, left, right)
    (2, 4, 8, 1),
    (2, 8, 8, 1),
    (3, 5, 10, 1),
    (1, 1, 0, 0),
    (2, 3, 2, 2),
]


def test_criterion_4_chunk_mask_contract(criterion):
    rng = np.random.default_rng(104)
    details, ok = [], True
    for layers, chunk, left, right in ENCODER_CONFIGS:
        enc = Encoder(rng, layers, 16, 32, 2, chunk, left, right, 16)
        for p in enc.parameters():
            p.data = p.data.astype(np.float64)
        leaks = inside = moved = 0
        for _ in range(1000):
            T = int(rng.integers(1, 25))
            x = rng.normal(size=(1, T, 16))
            j = int(rng.integers(T))
            y = x.copy()
            y[0, j] += rng.normal(size=16)
            with nc.no_grad():
                a = enc(nc.Tensor(x, dtype=np.float64), [T]).data[0]
                b = enc(nc.Tensor(y, dtype=np.float64), [T]).data[0]
            delta = np.abs(a - b).max(-1)
            for t, (lo, hi) in enumerate(enc.dependency_set(T)):
                if lo <= j + 1 <= hi:
                    inside += 1
                    moved += delta[t] > 1e-6
                else:
                    leaks += delta[t] != 0.0
        frac = moved / inside
        ok &= leaks == 0 and frac >= 0.99
        details.append(f"{layers}x(C{chunk},L{left},R{right}): {leaks} leaks, {frac:.4f} in-set moved")
    criterion(4, ok, "1000 trials each; " + ", ".join(details))
    assert ok


# ------------------------------------------------------- 5: loss decomposition

def test_criterion_5_loss_decomposition(criterion):
    rng = np.random.default_rng(105)
    model = JstarModel(tiny_config(), seed=5).eval()
    feats, asr, st = random_batch(rng, n=4)
    worst = 0.0
    for lam in (0.0, 0.1, 0.5, 1.0):
        loss, loss_asr, loss_st = jstar_forward(model, feats, asr, st, lambda_asr=lam).values()
        worst = max(worst, abs(loss - (loss_st + lam * loss_asr)))
    before = jstar_forward(model, feats, asr, st).values()
    for name, p in model.named_parameters():
        if name.startswith(("asr_pred.", "asr_join.")):
            p.data += rng.normal(size=p.shape).astype(p.dtype)
    after = jstar_forward(model, feats, asr, st).values()
    ok = worst < 1e-6 and after[2] == before[2] and after[1] != before[1]
    criterion(5, ok, f"max |loss - (st + lambda asr)| = {worst:.1e}; "
                     f"ASR-head mutation changes loss_st by {abs(after[2] - before[2])}")
    assert ok


# ------------------------------------------------------------ 6: SOT golden

def test_criterion_6_sot_golden(criterion):
    def timed(speaker, pairs, start=0):
        out, prev = [], start
        for text, end in pairs:
            out.append(TimedWord(text, speaker, prev, end))
            prev = end
        return out

    words = timed(SELF, [("Yesterday,", 400), ("I", 500), ("was", 650), ("talking", 900),
                         ("to", 1000), ("your", 1150), ("sister", 1500), ("Elizabeth.", 2100)]) \
        + timed(OTHER, [("Genial,", 1900), ("¿qué", 2400), ("dijo", 2600), ("ella?", 2900)],
                start=1550)
    translations = {SELF: "Ayer estaba hablando con tu hermana Elizabeth.".split(),
                    OTHER: "Great, what did she say?".split()}
    alignment = {
        SELF: WordAlignment.of([(0, 0), (1, 1), (2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (7, 6)]),
        OTHER: WordAlignment.of([(0, 0), (1, 1), (2, 2), (3, 3), (2, 4), (3, 4)]),
    }
    y = str(serialize(words))
    z = str(translate_sot(words, translations, alignment))
    ok = (y == "<SELF> Yesterday, I was talking to your sister <OTHER> Genial, <SELF> Elizabeth. "
               "<OTHER> ¿qué dijo ella?"
          and z == "<SELF> Ayer estaba hablando con tu hermana <OTHER> Great, <SELF> Elizabeth. "
                   "<OTHER> what did she say?")
    criterion(6, ok, f"Y = {y!r}; Z = {z!r}")
    assert ok


# ------------------------------------------------ shared training fixtures

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def dataset(workdir, task, seed, n=5000, n_dev=200, n_test=500, **params):
    out = workdir / task
    if not (out / "meta.json").exists():
        splits = generate(task, n, seed, n_words=10, n_dev=n_dev, n_test=n_test, **params)
        write_dataset(out, task, splits, 10, seed=seed, **params)
    return str(out)


def timed_train(config):
    t0 = time.monotonic()
    result = train(config)
    return result, time.monotonic() - t0


@pytest.fixture(scope="module")
def mt_run(workdir):
    data = dataset(workdir, "toy_mt_reorder", 7, mode="swap_pairs")
    config = RunConfig(task="toy_mt_reorder", data_dir=data, out=str(workdir / "mt.ckpt"),
                       steps=4000, lr_final=1e-4, eval_every=500, dev_size=200, seed=0,
                       time_limit_s=900)
    result, seconds = timed_train(config)
    return config, result, seconds


@pytest.fixture(scope="module")
def asr_run(workdir):
    data = dataset(workdir, "toy_asr", 3)
    config = RunConfig(task="toy_asr", data_dir=data, out=str(workdir / "asr.ckpt"),
                       steps=1500, lr_final=1e-4, eval_every=500, dev_size=200, seed=0)
    result, _ = timed_train(config)
    return config, result


def conversation_config(workdir, name, **kw):
    # 5k conversations overfit well before 12k steps; 20k do not
    data = dataset(workdir, "toy_conversation", 11, n=20000, overlap_prob=0.2)
    params = dict(task="toy_conversation", data_dir=data, out=str(workdir / f"{name}.ckpt"),
                  dev_size=200, seed=0, lambda_asr=0.5)
    params.update(kw)
    return RunConfig(**params)


# ---------------------------------------------------------- 7: reordering MT

def test_criterion_7_transducer_mt_learns_reordering(criterion, mt_run):
    config, result, seconds = mt_run
    report = evaluate(config, result.checkpoint, split="test")
    ok = report["bleu"] >= 90 and report["exact_match"] >= 0.8 and seconds <= 900
    criterion(7, ok, f"translation: BLEU {report['bleu']:.1f}, exact {report['exact_match']:.3f}, "
                     f"source WER {report['wer_source']:.3f}, {seconds:.0f} s training "
                     f"({config.steps} steps)")
    # Viterbi word alignment from emission positions; see the ledger for why a
    # monotone emitter cannot exceed 50% on pair swaps
    align_ok = report["align_acc"] >= 0.9
    criterion(7, align_ok, f"Viterbi alignment accuracy {report['align_acc']:.3f} (needs 0.90)")
    assert ok and align_ok


# ----------------------------------------------------- 8: joint conversation

def test_criterion_8_joint_conversation(criterion, workdir):
    config = conversation_config(workdir, "conv", steps=12000, lr_final=1e-4, eval_every=1000,
                                 time_limit_s=1800)
    result, seconds = timed_train(config)
    report = evaluate(config, result.checkpoint, split="test")
    ok = (report["sa_wer"] <= 0.05 and report["bleu_fwd"] >= 90 and report["bleu_rev"] >= 90
          and seconds <= 1800)
    criterion(8, ok, f"SA-WER {report['sa_wer']:.3f} (SELF {report['wer_self']:.3f}, OTHER "
                     f"{report['wer_other']:.3f}), BLEU fwd {report['bleu_fwd']:.1f} rev "
                     f"{report['bleu_rev']:.1f}, P50 first/last {report['p50_first_ms']}/"
                     f"{report['p50_last_ms']} ms, {seconds:.0f} s training")
    assert ok


EARLY_STEPS = 1500


@pytest.fixture(scope="module")
def scratch_run(workdir):
    config = conversation_config(workdir, "scratch", steps=EARLY_STEPS, lr_final=1e-4,
                                 eval_every=100)
    return timed_train(config)[0]


def test_criterion_8_asr_loss_helps_early_translation(criterion, workdir, scratch_run):
    config = conversation_config(workdir, "no_asr", steps=EARLY_STEPS, lr_final=1e-4,
                                 eval_every=100, lambda_asr=0.0)
    no_asr = timed_train(config)[0]
    with_asr = dict(scratch_run.dev_curve("dev_loss_st"))
    without = dict(no_asr.dev_curve("dev_loss_st"))
    steps = [s for s in sorted(with_asr) if 0 < s <= EARLY_STEPS]
    a = float(np.mean([with_asr[s] for s in steps]))
    b = float(np.mean([without[s] for s in steps]))
    ok = a < b
    criterion(8, ok, f"mean ST dev loss over steps 100..{EARLY_STEPS}: lambda 0.5 {a:.3f} vs "
                     f"lambda 0 {b:.3f}")
    assert ok


# ------------------------------------------------- 9: initialization benefit

def test_criterion_9_pretrained_init_reaches_threshold_sooner(criterion, workdir, scratch_run,
                                                               asr_run, mt_run):
    curve = scratch_run.dev_curve()
    N = EARLY_STEPS
    threshold = dict(curve)[N]
    config = conversation_config(workdir, "init", steps=EARLY_STEPS, lr_final=1e-4,
                                 eval_every=100,
                                 init=[InitSpec(asr_run[1].checkpoint, "fast"),
                                       InitSpec(mt_run[1].checkpoint, "slow")])
    inited = timed_train(config)[0]
    reached = steps_to_reach(inited.dev_curve(), threshold)
    ok = reached is not None and reached <= 0.8 * N
    criterion(9, ok, f"scratch dev loss at N={N}: {threshold:.3f}; fast+slow init reaches it at "
                     f"step {reached} (limit {0.8 * N:.0f})")
    assert ok


# ------------------------------------------------------ 10: decoding properties

def random_small_model(rng, seed):
    cfg = ModelConfig.desk(
        input_dim=4, vocab_size=int(rng.integers(3, 8)), time_reduction=int(rng.integers(1, 4)),
        fast_layers=int(rng.integers(1, 3)), slow_layers=int(rng.integers(1, 3)), hidden_dim=16,
        ffn_dim=32, predictor_dim=16, joiner_dim=16, chunk_fast=int(rng.integers(1, 5)),
        chunk_slow=int(rng.integers(2, 9)), left_context=int(rng.integers(0, 9)),
        right_context=int(rng.integers(0, 3)), dropout=0.0)
    model = JstarModel(cfg, seed=seed).eval()
    # sharpen the joiners so that decoding emits labels at all
    for name, p in model.named_parameters():
        if name.startswith(("asr_join.", "st_join.")):
            p.data *= 4
    return model


def test_criterion_10_decoding_properties(criterion):
    rng = np.random.default_rng(110)
    mismatch_greedy = mutated = mismatch_stream = emitted = 0
    for seed in range(100):
        model = random_small_model(rng, seed)
        x = rng.normal(size=(int(rng.integers(3, 40)), 4)).astype(np.float32)
        for which in ("asr", "st"):
            head = ModelHead(model, which)
            g = greedy_decode(head, x, 4)
            mismatch_greedy += g.tokens != beam_decode(head, x, 1, 4)[0][0].tokens
            emitted += len(g.tokens)
            dec = StreamingDecoder(head, 4, 4)
            dec.push(head.encode(x))
            nbest, events = dec.finish()
            top = nbest[0].tokens
            history = dec.history
            mutated += any(b[:len(a)] != a for a, b in zip(history, history[1:]))
            mutated += any(top[:len(h)] != h for h in history)
            streamed = stream_decode(head, x, int(rng.integers(1, 8)), 4, 4)
            mismatch_stream += ([h.tokens for h in streamed[0]] != [h.tokens for h in nbest]
                                or streamed[1] != events)
    ok = mismatch_greedy == 0 and mutated == 0 and mismatch_stream == 0 and emitted > 0
    criterion(10, ok, f"100 random models x 2 heads: beam-1 vs greedy mismatches {mismatch_greedy}, "
                      f"finalized-prefix changes {mutated}, streaming vs full mismatches "
                      f"{mismatch_stream} ({emitted} greedy tokens)")
    assert ok


# --------------------------------------------------- 11: documentation only

def test_criterion_11_paper_scale_results_documented(criterion):
    readme = (ROOT / "README.md").read_text() if (ROOT / "README.md").exists() else ""
    ok = "not reproducible at desk scale" in readme.lower()
    criterion(11, ok, "documentation only: paper-scale absolute numbers (BLEU, WER, seconds of "
                      "latency) need real corpora and are stated as not reproduced in README.md")
    assert ok
