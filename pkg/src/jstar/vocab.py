"""Token inventory shared by every head: blank, the two speaker tags, then words."""
from __future__ import annotations

import string
from typing import Iterable, Sequence

BLANK, SELF_ID, OTHER_ID = 0, 1, 2
BLANK_TOKEN = "<blank>"
SELF_TAG = "<SELF>"
OTHER_TAG = "<OTHER>"
RESERVED = (BLANK_TOKEN, SELF_TAG, OTHER_TAG)


class Vocabulary:
    def __init__(self, words: Sequence[str]):
        tokens = list(RESERVED) + [w for w in words if w not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, words: Iterable[str]) -> list[int]:
        try:
            return [self.index[w] for w in words]
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.tokens)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError("vocabulary must start with <blank>, <SELF>, <OTHER>")
        return cls(tokens[3:])


def toy_vocabulary(n_words: int) -> Vocabulary:
    """Lowercase words ``a..`` for one language, uppercase for the other."""
    if not 1 <= n_words <= 26:
        raise ValueError("toy vocabularies hold 1..26 words per language")
    lower = list(string.ascii_lowercase[:n_words])
    return Vocabulary(lower + [w.upper() for w in lower])


def char_inventory(n_words: int) -> list[str]:
    """Source characters for the character-input MT model (space first)."""
    return [" "] + list(string.ascii_lowercase[:n_words])
