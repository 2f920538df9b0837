"""Deterministic mock tokenizer used for constrained decoding."""

from __future__ import annotations

import re
import string
from typing import Iterable, Mapping

from .query_language import OperationRegistry

_PIECE_RE = re.compile(r"\s+|\w+|[^\w\s]", re.UNICODE)

# multi-character and sub-word pieces that make masks non-trivial
_EXTRA_PIECES = (
    " and ", " or ", " and", " or", "and ", "pre", "dict", "filter id", "topk ",
    "id ", " topk", "10", "68", "100", "12", "xyz", "banana", "positive", "negative",
    "explain", "please", "the", "of",
)


class MockTokenizer:
    """Splits on whitespace and punctuation; every registry terminal is one token.

    The vocabulary also holds every printable ASCII character, so any ASCII
    string can be encoded (greedy longest match inside each piece).
    """

    def __init__(self, words: Iterable[str] = ()):
        pieces: list[str] = []
        seen: set[str] = set()
        for piece in list(string.printable[:95]) + list(_EXTRA_PIECES) + list(words):
            if piece and piece not in seen:
                seen.add(piece)
                pieces.append(piece)
        self.vocabulary: dict[int, str] = dict(enumerate(pieces))
        self._ids: dict[str, int] = {v: k for k, v in self.vocabulary.items()}
        self._max_len = max(len(p) for p in pieces)

    @classmethod
    def for_registry(cls, *registries: OperationRegistry, extra: Iterable[str] = ()) -> "MockTokenizer":
        words: list[str] = []
        for registry in registries:
            for op in registry:
                words.append(op.name)
                for slot in op.slots:
                    words.append(slot.name)
                    words.extend(sorted(slot.allowed_values))
        return cls(words + list(extra))

    def __len__(self) -> int:
        return len(self.vocabulary)

    def token_id(self, text: str) -> int:
        return self._ids[text]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in _PIECE_RE.findall(text):
            if piece in self._ids:
                ids.append(self._ids[piece])
                continue
            i = 0
            while i < len(piece):
                for n in range(min(self._max_len, len(piece) - i), 0, -1):
                    tid = self._ids.get(piece[i : i + n])
                    if tid is not None:
                        ids.append(tid)
                        i += n
                        break
                else:
                    raise ValueError(f"cannot encode character {piece[i]!r}")
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.vocabulary[i] for i in ids)


def count_tokens(text: str) -> int:
    """Tokenizer-independent piece count used for length budgets on raw text."""
    return len(_PIECE_RE.findall(text))


def as_vocabulary(tokenizer) -> Mapping[int, str]:
    return getattr(tokenizer, "vocabulary", tokenizer)
