"""Word error rates and corpus BLEU."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .sot import OTHER, SELF, SotSequence


class MetricError(ValueError):
    pass


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Levenshtein distance with unit substitution, deletion and insertion."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    if not ref:
        raise MetricError("WER needs a non-empty reference")
    return edit_distance(ref, hyp) / len(ref)


@dataclass
class SaWer:
    overall: float
    per_speaker: dict[str, float | None]
    errors: dict[str, int] = field(default_factory=dict)
    ref_words: dict[str, int] = field(default_factory=dict)


def sa_wer_counts(ref: SotSequence, hyp: SotSequence, strict: bool = True):
    """(errors, reference words) per speaker after splitting on tags.

    With ``strict=False`` hypothesis words before the first tag are counted
    as insertions under the ``None`` key instead of raising.
    """
    r = ref.by_speaker()
    h = hyp.by_speaker(strict=strict)
    errors = {spk: edit_distance(r[spk], h[spk]) for spk in (SELF, OTHER)}
    if None in h:
        errors[None] = len(h[None])
    return errors, {spk: len(r[spk]) for spk in (SELF, OTHER)}


def sa_wer(ref: SotSequence, hyp: SotSequence) -> SaWer:
    """Speaker-attributed WER: each speaker's words are scored against the
    same speaker's reference words; tags are never permuted."""
    errors, counts = sa_wer_counts(ref, hyp)
    total = sum(counts.values())
    if total == 0:
        raise MetricError("reference holds no words")
    per = {spk: (errors[spk] / counts[spk] if counts[spk] else None) for spk in (SELF, OTHER)}
    return SaWer(sum(errors.values()) / total, per, errors, counts)


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    hyp_len: int
    ref_len: int

    @property
    def score(self) -> float:
        if self.hyp_len == 0 or self.matches[0] == 0:
            return 0.0
        log_p = math.log(self.matches[0] / self.totals[0])
        for m, t in zip(self.matches[1:], self.totals[1:]):
            log_p += math.log((m + 1) / (t + 1))
        bp = min(0.0, 1.0 - self.ref_len / self.hyp_len)
        return 100.0 * math.exp(log_p / len(self.matches) + bp)


def bleu_stats(refs: Sequence[str], hyps: Sequence[str], max_n: int = 4) -> BleuStats:
    if len(refs) != len(hyps):
        raise MetricError(f"{len(refs)} references but {len(hyps)} hypotheses")
    if not refs:
        raise MetricError("empty corpus")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for ref, hyp in zip(refs, hyps):
        r, h = ref.split(), hyp.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(matches, totals, hyp_len, ref_len)


def bleu(refs: Sequence[str], hyps: Sequence[str]) -> float:
    """Corpus BLEU-4 on whitespace tokens, add-one smoothing for n >= 2."""
    return bleu_stats(refs, hyps).score
