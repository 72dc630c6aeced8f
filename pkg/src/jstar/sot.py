"""Serialized output training (SOT) labels for two-speaker conversations.

Words from both speakers are merged into one stream ordered by word end
time, with a speaker tag in front of every speaker segment.  Translations
inherit times from the source words they are aligned to, which places each
translated segment correctly relative to the other speaker.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .rnnt import AlignmentPath
from .vocab import OTHER_TAG, SELF_TAG

SELF, OTHER = "SELF", "OTHER"
SPEAKERS = (SELF, OTHER)
TAGS = {SELF: SELF_TAG, OTHER: OTHER_TAG}
TAG_TO_SPEAKER = {v: k for k, v in TAGS.items()}


class SotError(ValueError):
    pass


@dataclass(frozen=True)
class TimedWord:
    text: str
    speaker: str
    start_ms: float
    end_ms: float

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise SotError(f"unknown speaker {self.speaker!r}")
        if not 0 <= self.start_ms <= self.end_ms:
            raise SotError(f"bad word times for {self.text!r}: {self.start_ms}..{self.end_ms}")

    def to_dict(self) -> dict:
        return {"text": self.text, "speaker": self.speaker,
                "start_ms": self.start_ms, "end_ms": self.end_ms}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TimedWord":
        return cls(d["text"], d["speaker"], d["start_ms"], d["end_ms"])


@dataclass(frozen=True)
class SotSequence:
    items: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join(self.items)

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def parse(cls, text: str) -> "SotSequence":
        return cls(tuple(text.split()))

    def tag_count(self) -> int:
        return sum(1 for x in self.items if x in TAG_TO_SPEAKER)

    def words(self) -> list[str]:
        return [x for x in self.items if x not in TAG_TO_SPEAKER]

    def by_speaker(self, strict: bool = True) -> dict[str, list[str]]:
        """Each speaker's words in stream order.

        Words before the first tag raise in strict mode; otherwise they are
        collected under the ``None`` key.
        """
        out: dict = {SELF: [], OTHER: []}
        current = None
        for item in self.items:
            if item in TAG_TO_SPEAKER:
                current = TAG_TO_SPEAKER[item]
            elif current is None:
                if strict:
                    raise SotError(f"word {item!r} appears before any speaker tag")
                out.setdefault(None, []).append(item)
            else:
                out[current].append(item)
        return out

    def validate(self) -> None:
        if not self.items:
            return
        if self.items[0] not in TAG_TO_SPEAKER:
            raise SotError("sequence must start with a speaker tag")
        prev_tag = None
        for a, b in zip(self.items, self.items[1:]):
            if a in TAG_TO_SPEAKER and b in TAG_TO_SPEAKER:
                raise SotError("consecutive speaker tags")
        for item in self.items:
            if item in TAG_TO_SPEAKER:
                if item == prev_tag:
                    raise SotError("repeated tag without a speaker change")
                prev_tag = item


@dataclass(frozen=True)
class WordAlignment:
    """Links (source word index, target word index); many-to-many allowed."""

    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def of(cls, pairs) -> "WordAlignment":
        return cls(tuple((int(s), int(t)) for s, t in pairs))

    @classmethod
    def identity(cls, n: int) -> "WordAlignment":
        return cls(tuple((i, i) for i in range(n)))

    def check(self, n_source: int, n_target: int) -> None:
        for s, t in self.pairs:
            if not (0 <= s < n_source and 0 <= t < n_target):
                raise SotError(f"alignment link ({s}, {t}) out of range "
                               f"for {n_source} source / {n_target} target words")

    def sources_of(self, target_index: int) -> list[int]:
        return sorted(s for s, t in self.pairs if t == target_index)


def _sort_key(indexed: tuple[int, TimedWord]):
    i, w = indexed
    return (w.end_ms, SPEAKERS.index(w.speaker), w.start_ms, i)


def serialize(words: Sequence[TimedWord]) -> SotSequence:
    """Order words by end time and tag every speaker segment.

    Ties on end time put SELF first, then fall back to start time and input
    order.
    """
    items: list[str] = []
    current = None
    for _, w in sorted(enumerate(words), key=_sort_key):
        if w.speaker != current:
            items.append(TAGS[w.speaker])
            current = w.speaker
        items.append(w.text)
    return SotSequence(tuple(items))


def translation_times(source: Sequence[TimedWord], targets: Sequence[str],
                      alignment: WordAlignment, speaker: str) -> list[TimedWord]:
    """Timed target words for one speaker.

    A target word takes the latest end time among its linked source words,
    never earlier than the target word before it, so the speaker's target
    word order survives serialization.  Unlinked words reuse the previous
    word's time, or the segment start.
    """
    alignment.check(len(source), len(targets))
    t_prev = source[0].start_ms if source else 0.0
    out = []
    for j, text in enumerate(targets):
        linked = alignment.sources_of(j)
        t = max(source[i].end_ms for i in linked) if linked else t_prev
        t = max(t, t_prev)
        out.append(TimedWord(text, speaker, t, t))
        t_prev = t
    return out


def translate_sot(source: Sequence[TimedWord], translations: Mapping[str, Sequence[str]],
                  alignment: Mapping[str, WordAlignment]) -> SotSequence:
    """SOT sequence of the translation, interleaved by the source timing.

    ``alignment[speaker]`` indexes that speaker's source words in stream
    order and its translation words.
    """
    return serialize(translate_words(source, translations, alignment))


def translate_words(source, translations, alignment) -> list[TimedWord]:
    timed: list[TimedWord] = []
    for spk in SPEAKERS:
        src = [w for w in source if w.speaker == spk]
        tgt = list(translations.get(spk, ()))
        if not tgt:
            continue
        if spk not in alignment:
            raise SotError(f"no alignment for speaker {spk}")
        timed.extend(translation_times(src, tgt, alignment[spk], spk))
    return timed


def alignment_from_viterbi(path: AlignmentPath,
                           source_word_boundaries: Sequence[tuple[int, int]],
                           target_piece_to_word: Sequence[int]) -> WordAlignment:
    """Word alignment read off a transducer best path.

    Each target word links to the source word whose character span holds
    the frame where the word's first piece was emitted.  Boundaries are
    half-open ``[start, end)`` character ranges that must tile the input.
    """
    pos = 0
    for start, end in source_word_boundaries:
        if start != pos or end <= start:
            raise SotError(f"source word boundaries leave a gap or overlap at {pos}")
        pos = end
    frames = path.label_frames()
    if len(frames) != len(target_piece_to_word):
        raise SotError("piece-to-word map does not match the number of emitted labels")
    first_frame: dict[int, int] = {}
    for piece, word in enumerate(target_piece_to_word):
        first_frame.setdefault(word, frames[piece])
    pairs = []
    for word in sorted(first_frame):
        char = first_frame[word] - 1
        for i, (start, end) in enumerate(source_word_boundaries):
            if start <= char < end:
                pairs.append((i, word))
                break
        else:
            raise SotError(f"emission frame {char + 1} lies outside the source text")
    return WordAlignment(tuple(pairs))
