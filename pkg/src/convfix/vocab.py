"""Token vocabularies: building, index encoding and OOV measurement."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .tokenizer import CAMEL, NUMBER, STRING, TokenSequence

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

PAD, START, END, UNK = "<PAD>", "<START>", "<END>", "<UNK>"
RESERVED = (PAD, START, END, UNK, CAMEL, STRING, NUMBER)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

DEFAULT_MIN_COUNT = 2
DEFAULT_MAX_SIZE = 70_000


def _tokens_of(seq: TokenSequence | Sequence[str]) -> Sequence[str]:
    return seq.tokens if isinstance(seq, TokenSequence) else seq


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("reserved tokens must occupy the first indices")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def encode(self, seq: TokenSequence | Sequence[str]) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in _tokens_of(seq)]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in indices]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")
        meta = {"format_version": FORMAT_VERSION, "size": len(self), "fingerprint": self.fingerprint}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        tokens = tuple(path.read_text(encoding="utf-8").splitlines())
        vocab = cls(tokens)
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            if meta.get("fingerprint") != vocab.fingerprint:
                raise ValueError(f"vocabulary {path} does not match its recorded fingerprint")
        return vocab


def build(
    corpus: Iterable[TokenSequence | Sequence[str]],
    min_count: int = DEFAULT_MIN_COUNT,
    max_size: int = DEFAULT_MAX_SIZE,
) -> Vocabulary:
    """Reserved tokens first, then by descending count, ties lexicographic."""
    if min_count < 1 or max_size < 1:
        raise ValueError("min_count and max_size must be positive")
    counts: Counter[str] = Counter()
    seen = False
    for seq in corpus:
        seen = True
        counts.update(_tokens_of(seq))
    if not seen:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    if not kept:
        logger.warning("min_count=%d filtered every token; vocabulary holds reserved tokens only", min_count)
    room = max(0, max_size - len(RESERVED))
    return Vocabulary(RESERVED + tuple(kept[:room]))


def oov_rate(corpus: Iterable[TokenSequence | Sequence[str]], vocab: Vocabulary) -> float:
    unknown = total = 0
    for seq in corpus:
        for tok in _tokens_of(seq):
            total += 1
            if tok not in vocab or tok == UNK:
                unknown += 1
    if total == 0:
        raise ValueError("OOV rate of an empty corpus is undefined")
    return float(Fraction(unknown, total))
