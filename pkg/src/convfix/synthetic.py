"""Small synthetic bug-fix benchmarks built from fixed edit patterns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tokenizer import get_profile, tokenize
from .vocab import RESERVED, Vocabulary

JAVA = get_profile("java")

# plain lowercase words so real source lines tokenize to exactly these tokens
NAMES = ("alpha", "beta", "count", "delta", "end", "first", "gamma", "head", "index", "key", "last", "limit",
         "max", "min", "node", "offset", "pos", "rest", "size", "start", "tail", "total", "value", "width")
CALLS = ("get", "put", "add", "run", "set", "load")


def _off_by_one(rng):
    a, b = rng.choice(NAMES, 2, replace=False)
    return f"if ({a} < {b}) {{", f"if ({a} <= {b}) {{"


def _null_guard(rng):
    a, c = rng.choice(NAMES, 2, replace=False)
    f = rng.choice(CALLS)
    return f"{a}.{f}({c});", f"if ({a} != null) {a}.{f}({c});"


def _swap_args(rng):
    a, c, d = rng.choice(NAMES, 3, replace=False)
    f = rng.choice(CALLS)
    return f"{a} = {f}({c}, {d});", f"{a} = {f}({d}, {c});"


PATTERNS: dict[str, Callable] = {
    "off_by_one": _off_by_one,
    "null_guard": _null_guard,
    "swap_args": _swap_args,
}


@dataclass
class SyntheticSet:
    pairs: list[tuple[list[str], list[str]]]
    pattern: list[str]
    vocab: Vocabulary

    def encoded(self) -> list[tuple[list[int], list[int]]]:
        return [(self.vocab.encode(a), self.vocab.encode(b)) for a, b in self.pairs]


def shared_vocab() -> Vocabulary:
    """One vocabulary covering every token any pattern can produce."""
    words = set(NAMES) | set(CALLS) | {"if", "null"} | set("(){}<=.;!,")
    return Vocabulary(RESERVED + tuple(sorted(words)))


def generate(n: int, patterns: Sequence[str], seed: int = 0) -> SyntheticSet:
    """``n`` distinct pairs cycling through ``patterns``."""
    rng = np.random.default_rng(seed)
    pairs, kinds, seen = [], [], set()
    i = 0
    attempts = 0
    while len(pairs) < n:
        attempts += 1
        if attempts > 100 * n:
            raise ValueError("pattern space too small for the requested size")
        kind = patterns[i % len(patterns)]
        buggy, fixed = PATTERNS[kind](rng)
        src, trg = list(tokenize(buggy, JAVA).tokens), list(tokenize(fixed, JAVA).tokens)
        key = tuple(src)
        if key in seen:
            continue
        seen.add(key)
        pairs.append((src, trg))
        kinds.append(kind)
        i += 1
    return SyntheticSet(pairs, kinds, shared_vocab())
