"""Streaming joint speech recognition and translation with cascaded
fast/slow transducer encoders, built on a small numpy autodiff core."""
from .decode import beam_decode, greedy_decode, latency_stats, theoretical_latency
from .metrics import bleu, sa_wer, wer
from .rnnt import rnnt_brute_force, rnnt_loss, viterbi_align
from .sot import (SotSequence, TimedWord, WordAlignment, alignment_from_viterbi, serialize,
                  translate_sot)
from .vocab import Vocabulary, toy_vocabulary

__version__ = "0.1.0"

__all__ = [
    "SotSequence", "TimedWord", "Vocabulary", "WordAlignment", "alignment_from_viterbi",
    "beam_decode", "bleu", "greedy_decode", "latency_stats", "rnnt_brute_force", "rnnt_loss",
    "sa_wer", "serialize", "theoretical_latency", "toy_vocabulary", "translate_sot",
    "viterbi_align", "wer",
]
