"""Synthetic datasets and their line-delimited JSON storage.

Feature layout shared by the speech tasks: every word owns one channel, the
first ``n_words`` channels for the SELF language (lowercase words) and the
next ``n_words`` for the OTHER language (uppercase).  The two channel groups
play the part of the two beamformer look directions.  A word lasts three raw
frames of 20 ms, i.e. exactly one encoder frame after a time reduction of 3.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..sot import OTHER, SELF, TimedWord, WordAlignment, serialize, translate_words
from ..vocab import Vocabulary, char_inventory, toy_vocabulary

TASKS = ("toy_asr", "toy_mt_reorder", "toy_conversation")
SPLITS = ("train", "dev", "test")
RAW_FRAME_MS = 20.0
FRAMES_PER_WORD = 3
WORD_MS = RAW_FRAME_MS * FRAMES_PER_WORD
CHAR_MS = 60.0  # nominal duration of one source character for the MT task
NOISE_STD = 0.1


class DataError(ValueError):
    pass


@dataclass
class DatasetRecord:
    id: str
    split: str
    words: list[TimedWord]
    translation_words: list[TimedWord] = field(default_factory=list)
    frames: np.ndarray | None = None
    source: str | None = None
    alignment: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def duration_ms(self) -> float:
        if self.frames is not None:
            return len(self.frames) * RAW_FRAME_MS
        return len(self.source or "") * CHAR_MS

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise DataError(f"{self.id}: unknown split {self.split!r}")
        for w in self.words + self.translation_words:
            if w.end_ms > self.duration_ms:
                raise DataError(f"{self.id}: word {w.text!r} ends after the record")

    def to_json(self) -> str:
        d = {"id": self.id, "split": self.split,
             "words": [w.to_dict() for w in self.words],
             "translation_words": [w.to_dict() for w in self.translation_words],
             "alignment": {k: [list(p) for p in v] for k, v in self.alignment.items()}}
        if self.frames is not None:
            d["frames"] = self.frames.tolist()
        if self.source is not None:
            d["source"] = self.source
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        d = json.loads(line)
        frames = d.get("frames")
        return cls(
            id=d["id"], split=d["split"],
            words=[TimedWord.from_dict(w) for w in d["words"]],
            translation_words=[TimedWord.from_dict(w) for w in d.get("translation_words", [])],
            frames=None if frames is None else np.asarray(frames, dtype=np.float64).reshape(len(frames), -1),
            source=d.get("source"),
            alignment={k: [tuple(p) for p in v] for k, v in d.get("alignment", {}).items()},
        )

    # targets
    def asr_text(self) -> list[str]:
        return list(serialize(self.words).items)

    def st_text(self) -> list[str]:
        return list(serialize(self.translation_words).items)


def write_records(path, records: Iterable[DatasetRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_records(path) -> list[DatasetRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path) as f:
        return [DatasetRecord.from_json(line) for line in f if line.strip()]


# ------------------------------------------------------------------ helpers

def word_channel(text: str, n_words: int) -> int:
    i = string.ascii_lowercase.index(text.lower())
    return i if text.islower() else n_words + i


def case_flip(text: str) -> str:
    return text.swapcase()


def pair_swap_order(n: int, strict: bool = True) -> list[int]:
    """Source index for each target position when adjacent pairs swap.

    With ``strict=False`` an odd trailing word stays in place.
    """
    if n % 2 and strict:
        raise DataError(f"pair swapping needs an even length, got {n}")
    order = []
    for i in range(0, n - 1, 2):
        order += [i + 1, i]
    if n % 2:
        order.append(n - 1)
    return order


def _features(rng, slots: list[tuple[int, int]], n_slots: int, n_words: int) -> np.ndarray:
    """Raw frames for ``(slot, channel)`` word placements plus noise."""
    frames = np.zeros((n_slots * FRAMES_PER_WORD, 2 * n_words))
    for slot, ch in slots:
        frames[slot * FRAMES_PER_WORD:(slot + 1) * FRAMES_PER_WORD, ch] += 1.0
    frames += rng.normal(0.0, NOISE_STD, size=frames.shape)
    return np.round(frames, 3)


def _letters(rng, n: int, n_words: int) -> list[str]:
    return [string.ascii_lowercase[i] for i in rng.integers(0, n_words, size=n)]


# --------------------------------------------------------------- generators

def gen_toy_asr(n: int, n_words: int, seed: int, split: str = "train",
                max_len: int = 8) -> list[DatasetRecord]:
    """Non-overlapping word sequences: every word is drawn from the whole
    two-speaker vocabulary and is a three-frame one-hot block.

    The recognition target is the SOT sequence, so speaker tags appear at
    every speaker change just as in conversations.
    """
    if n_words < 2:
        raise DataError("toy ASR needs a vocabulary of at least 2 words")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        ids = rng.integers(0, 2 * n_words, size=int(rng.integers(1, max_len + 1)))
        texts = [string.ascii_lowercase[k] if k < n_words else string.ascii_uppercase[k - n_words]
                 for k in ids]
        words = [TimedWord(t, SELF if t.islower() else OTHER, j * WORD_MS, (j + 1) * WORD_MS)
                 for j, t in enumerate(texts)]
        slots = [(j, word_channel(t, n_words)) for j, t in enumerate(texts)]
        frames = _features(rng, slots, len(texts) + 1, n_words)
        out.append(DatasetRecord(f"{split}-{i:06d}", split, words, frames=frames))
    return out


def gen_toy_reorder_mt(n: int, n_words: int, seed: int, mode: str = "swap_pairs",
                       split: str = "train", max_len: int = 8) -> list[DatasetRecord]:
    """Character-level source sentences; the target maps every word to its
    uppercase twin and, in ``swap_pairs`` mode, swaps adjacent words."""
    if mode not in ("swap_pairs", "copy"):
        raise DataError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if mode == "swap_pairs":
            length = 2 * int(rng.integers(1, max_len // 2 + 1))
        else:
            length = int(rng.integers(1, max_len + 1))
        src = _letters(rng, length, n_words)
        record = mt_record(f"{split}-{i:06d}", split, src, mode)
        out.append(record)
    return out


def mt_record(rid: str, split: str, src: Sequence[str], mode: str) -> DatasetRecord:
    order = pair_swap_order(len(src)) if mode == "swap_pairs" else list(range(len(src)))
    source = " ".join(src)
    # word k starts at character 2k (single-letter words)
    words = [TimedWord(w, SELF, 2 * k * CHAR_MS, (2 * k + 1) * CHAR_MS) for k, w in enumerate(src)]
    targets = [case_flip(src[j]) for j in order]
    pairs = [(j, t) for t, j in enumerate(order)]
    trans = translate_words(words, {SELF: targets}, {SELF: WordAlignment.of(pairs)})
    return DatasetRecord(rid, split, words, trans, source=source, alignment={SELF: pairs})


def gen_conversation(n: int, seed: int, overlap_prob: float, n_words: int = 10,
                     split: str = "train", max_turns: int = 4,
                     max_turn_len: int = 4) -> list[DatasetRecord]:
    """Alternating SELF/OTHER turns; a turn overlaps the one before it with
    probability ``overlap_prob``.  Translations flip case and swap adjacent
    words within each turn."""
    if not 0.0 <= overlap_prob <= 1.0:
        raise DataError("overlap_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return [_conversation(rng, f"{split}-{i:06d}", split, overlap_prob, n_words, max_turns,
                          max_turn_len) for i in range(n)]


def _conversation(rng, rid, split, overlap_prob, n_words, max_turns, max_turn_len):
    n_turns = int(rng.integers(2, max_turns + 1))
    spk = SELF if rng.random() < 0.5 else OTHER
    turns = []  # (speaker, start slot, letters)
    for k in range(n_turns):
        if k == 0:
            start = 0
            length = int(rng.integers(1, max_turn_len + 1))
        else:
            _, p_start, p_letters = turns[-1]
            p_end = p_start + len(p_letters)
            same_end = turns[-2][1] + len(turns[-2][2]) if k >= 2 else 0
            if rng.random() < overlap_prob:
                # start inside the previous turn, after this speaker's own last word,
                # and run past the previous turn's end
                start = int(rng.integers(max(p_start, same_end), p_end))
                length = p_end - start + int(rng.integers(1, max_turn_len))
            else:
                start = p_end + int(rng.integers(0, 2))
                length = int(rng.integers(1, max_turn_len + 1))
        turns.append((spk, start, _letters(rng, length, n_words)))
        spk = OTHER if spk == SELF else SELF

    words, slots = [], []
    translations: dict[str, list[str]] = {SELF: [], OTHER: []}
    pairs: dict[str, list[tuple[int, int]]] = {SELF: [], OTHER: []}
    for spk, start, letters in turns:
        texts = letters if spk == SELF else [w.upper() for w in letters]
        base = sum(1 for w in words if w.speaker == spk)
        for j, t in enumerate(texts):
            words.append(TimedWord(t, spk, (start + j) * WORD_MS, (start + j + 1) * WORD_MS))
            slots.append((start + j, word_channel(t, n_words)))
        order = pair_swap_order(len(texts), strict=False)
        tbase = len(translations[spk])
        translations[spk] += [case_flip(texts[j]) for j in order]
        pairs[spk] += [(base + j, tbase + t) for t, j in enumerate(order)]
    n_slots = max(s for s, _ in slots) + 2
    frames = _features(rng, slots, n_slots, n_words)
    align = {k: WordAlignment.of(v) for k, v in pairs.items()}
    trans = translate_words(words, translations, align)
    return DatasetRecord(rid, split, words, trans, frames=frames,
                         alignment={k: list(v) for k, v in pairs.items()})


def turn_overlaps(record: DatasetRecord) -> tuple[int, int]:
    """(turns that start before the previous turn ends, turns after the first)."""
    # words are stored turn by turn and turns alternate speakers
    turns: list[list[TimedWord]] = []
    for w in record.words:
        if turns and turns[-1][0].speaker == w.speaker:
            turns[-1].append(w)
        else:
            turns.append([w])
    overlapped = sum(1 for a, b in zip(turns, turns[1:]) if b[0].start_ms < a[-1].end_ms)
    return overlapped, len(turns) - 1


# ------------------------------------------------------------ dataset dirs

def task_vocabulary(n_words: int) -> Vocabulary:
    return toy_vocabulary(n_words)


def generate(task: str, n: int, seed: int, n_words: int = 10, n_dev: int | None = None,
             n_test: int | None = None, overlap_prob: float = 0.2,
             mode: str = "swap_pairs") -> dict[str, list[DatasetRecord]]:
    """Train/dev/test splits; each split has its own seed stream."""
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    sizes = {"train": n, "dev": n // 10 if n_dev is None else n_dev,
             "test": n // 10 if n_test is None else n_test}
    seeds = np.random.SeedSequence(seed).spawn(len(SPLITS))
    out = {}
    for split, ss in zip(SPLITS, seeds):
        s = int(ss.generate_state(1)[0])
        if task == "toy_asr":
            out[split] = gen_toy_asr(sizes[split], n_words, s, split)
        elif task == "toy_mt_reorder":
            out[split] = gen_toy_reorder_mt(sizes[split], n_words, s, mode, split)
        else:
            out[split] = gen_conversation(sizes[split], s, overlap_prob, n_words, split)
    return out


def write_dataset(out_dir, task: str, splits: dict[str, list[DatasetRecord]], n_words: int,
                  **params) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, records in splits.items():
        write_records(out / f"{split}.jsonl", records)
    meta = {"task": task, "n_words": n_words, "vocab": task_vocabulary(n_words).to_list(),
            "feature_dim": 2 * n_words, **params}
    if task == "toy_mt_reorder":
        meta["chars"] = char_inventory(n_words)
    (out / "meta.json").write_text(json.dumps(meta, indent=2))


def read_meta(data_dir) -> dict:
    path = Path(data_dir) / "meta.json"
    if not path.exists():
        raise DataError(f"dataset metadata not found: {path}")
    return json.loads(path.read_text())
