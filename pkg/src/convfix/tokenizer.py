"""Reversible word-level tokenization of single source lines.

Identifiers are split at case changes, letter/digit boundaries and internal
underscores.  Case and digit splits are marked with ``<CAMEL>`` so that
:func:`detokenize` can glue the pieces back together; underscore runs are
emitted as their own tokens and glue to both neighbours.  String literals
and numbers other than ``0`` and ``1`` can optionally be abstracted to
``<STRING>`` / ``<NUMBER>`` with the original literals kept in order.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

CAMEL = "<CAMEL>"
STRING = "<STRING>"
NUMBER = "<NUMBER>"
PLACEHOLDERS = {STRING: "STRING", NUMBER: "NUMBER"}

MAX_RECONSTRUCTIONS = 64

# whitespace inside string-literal tokens (abstract=False only)
_WS_ESCAPES = {" ": "▁", "\t": "␉"}
_WS_UNESCAPES = {v: k for k, v in _WS_ESCAPES.items()}


@dataclass(frozen=True)
class LanguageProfile:
    language: str
    extensions: tuple[str, ...]
    line_comment_markers: tuple[str, ...]
    # (open, close, escape)
    string_delimiters: tuple[tuple[str, str, str], ...]
    block_comment: tuple[str, str] | None = None
    triple_quotes: bool = False
    string_prefixes: frozenset[str] = frozenset()
    extra_identifier_chars: str = ""
    digit_separator: str = ""

    @property
    def openers(self) -> dict[str, tuple[str, str, str]]:
        return {d[0]: d for d in self.string_delimiters}

    def number_pattern(self) -> re.Pattern[str]:
        return _number_pattern(self.digit_separator)


@lru_cache(maxsize=None)
def _number_pattern(digit_separator: str) -> re.Pattern[str]:
    sep = re.escape(digit_separator) if digit_separator else ""
    d = rf"[\d_{sep}]"
    h = rf"[0-9a-fA-F_{sep}]"
    return re.compile(
        rf"(?:0[xX]{h}*(?:\.{h}*)?(?:[pP][+-]?\d+)?"
        rf"|0[bB][01_{sep}]+"
        rf"|(?:\d{d}*(?:\.\d{d}*)?|\.\d{d}*)(?:[eE][+-]?\d[\d_]*)?)"
        # type suffixes and user-defined literal suffixes stay glued to the number
        rf"[a-zA-Z0-9_]*"
    )


_C_STRINGS = (('"', '"', "\\"), ("'", "'", "\\"))

PROFILES: dict[str, LanguageProfile] = {
    "java": LanguageProfile(
        language="java",
        extensions=(".java",),
        line_comment_markers=("//",),
        string_delimiters=_C_STRINGS,
        block_comment=("/*", "*/"),
        extra_identifier_chars="$",
    ),
    "python": LanguageProfile(
        language="python",
        extensions=(".py",),
        line_comment_markers=("#",),
        string_delimiters=_C_STRINGS,
        triple_quotes=True,
        string_prefixes=frozenset(
            "".join(chars)
            for base in ("r", "b", "f", "u", "rb", "br", "fr", "rf")
            for chars in itertools.product(*[(c, c.upper()) for c in base])
        ),
    ),
    "cpp": LanguageProfile(
        language="cpp",
        extensions=(".cpp", ".cc", ".cxx", ".hpp", ".hh", ".hxx", ".h", ".c"),
        line_comment_markers=("//",),
        string_delimiters=_C_STRINGS,
        block_comment=("/*", "*/"),
        string_prefixes=frozenset({"L", "u8", "u", "U", "R", "LR", "u8R", "uR", "UR"}),
        digit_separator="'",
    ),
    "javascript": LanguageProfile(
        language="javascript",
        extensions=(".js", ".mjs", ".cjs", ".jsx"),
        line_comment_markers=("//",),
        string_delimiters=_C_STRINGS + (("`", "`", "\\"),),
        block_comment=("/*", "*/"),
        extra_identifier_chars="$",
    ),
}


def get_profile(language: str) -> LanguageProfile:
    try:
        return PROFILES[language]
    except KeyError:
        raise ValueError(f"unknown language {language!r}; expected one of {sorted(PROFILES)}") from None


def profile_for_path(path: str) -> LanguageProfile | None:
    lower = path.lower()
    for profile in PROFILES.values():
        if lower.endswith(profile.extensions):
            return profile
    return None


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    abstraction_table: tuple[tuple[str, str], ...] = ()
    unterminated: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _is_ident_char(ch: str, profile: LanguageProfile) -> bool:
    return ch.isalnum() or ch == "_" or ch in profile.extra_identifier_chars


def _is_ident_start(ch: str, profile: LanguageProfile) -> bool:
    return (ch.isalpha() or ch == "_" or ch in profile.extra_identifier_chars) and not ch.isdigit()


def _scan_string(line: str, start: int, delim_at: int, profile: LanguageProfile) -> tuple[int, bool]:
    """Return (end index, terminated) of the literal whose delimiter sits at ``delim_at``."""
    opener, closer, escape = profile.openers[line[delim_at]]
    if profile.triple_quotes and line.startswith(opener * 3, delim_at):
        opener, closer = opener * 3, closer * 3
    k = delim_at + len(opener)
    n = len(line)
    while k < n:
        if line[k] == escape:
            k += 2
            continue
        if line.startswith(closer, k):
            return k + len(closer), True
        k += 1
    return n, False


def _string_start(line: str, i: int, profile: LanguageProfile) -> int | None:
    """If a string literal (optionally prefixed) starts at ``i``, return its delimiter index."""
    if line[i] in profile.openers:
        return i
    if profile.string_prefixes and line[i].isalpha():
        j = i
        while j < len(line) and line[j].isalnum():
            j += 1
        if j < len(line) and line[j] in profile.openers and line[i:j] in profile.string_prefixes:
            return j
    return None


def split_identifier(word: str) -> list[str]:
    """Split one identifier into subword tokens.

    >>> split_identifier("utf8Decode")
    ['utf', '<CAMEL>', '8', '<CAMEL>', 'Decode']
    >>> split_identifier("get_Number")
    ['get', '_', 'Number']
    """
    core = word.strip("_")
    if not core:
        # a bare underscore identifier must not glue to its neighbours
        return [f"<{word}>"]
    lead = word[: len(word) - len(word.lstrip("_"))]
    trail = word[len(word.rstrip("_")):]
    out: list[str] = []
    for piece in re.split(r"(_+)", core):
        if not piece:
            continue
        if piece.startswith("_"):
            out.append(piece)
            continue
        for j, sub in enumerate(_camel_split(piece)):
            if j:
                out.append(CAMEL)
            out.append(sub)
    out[0] = lead + out[0]
    out[-1] = out[-1] + trail
    return out


def _camel_split(s: str) -> list[str]:
    parts: list[str] = []
    begin = 0
    for i in range(1, len(s)):
        prev, cur = s[i - 1], s[i]
        boundary = (
            (prev.islower() and cur.isupper())
            or (prev.isdigit() and cur.isalpha())
            or (prev.isalpha() and cur.isdigit())
            or (prev.isupper() and cur.isupper() and i + 1 < len(s) and s[i + 1].islower())
        )
        if boundary:
            parts.append(s[begin:i])
            begin = i
    parts.append(s[begin:])
    return parts


def _escape_ws(literal: str) -> str:
    return "".join(_WS_ESCAPES.get(c, "▁") if c.isspace() else c for c in literal)


def tokenize(line: str, profile: LanguageProfile, abstract: bool = False) -> TokenSequence:
    """Tokenize one comment-free source line."""
    tokens: list[str] = []
    table: list[tuple[str, str]] = []
    unterminated = False
    number_re = profile.number_pattern()
    n = len(line)
    i = 0
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        delim = _string_start(line, i, profile)
        if delim is not None:
            end, ok = _scan_string(line, i, delim, profile)
            if not ok:
                unterminated = True
                logger.debug("unterminated string literal in %r", line)
            literal = line[i:end]
            if abstract:
                tokens.append(STRING)
                table.append(("STRING", literal))
            else:
                tokens.append(_escape_ws(literal))
            i = end
            continue
        if ch in "0123456789" or (ch == "." and i + 1 < n and line[i + 1] in "0123456789"):
            m = number_re.match(line, i)
            literal = m.group(0)
            if abstract and literal not in ("0", "1"):
                tokens.append(NUMBER)
                table.append(("NUMBER", literal))
            else:
                tokens.append(literal)
            i = m.end()
            continue
        if _is_ident_start(ch, profile):
            j = i + 1
            while j < n and _is_ident_char(line[j], profile):
                j += 1
            tokens.extend(split_identifier(line[i:j]))
            i = j
            continue
        tokens.append(ch)
        i += 1
    return TokenSequence(tuple(tokens), tuple(table), unterminated)


def _is_separator(tok: str) -> bool:
    return bool(tok) and set(tok) == {"_"}


def _is_punct(tok: str) -> bool:
    return len(tok) == 1 and not tok.isalnum() and tok != "_"


def _render(tok: str) -> str:
    if len(tok) > 2 and tok[0] == "<" and tok[-1] == ">" and _is_separator(tok[1:-1]):
        return tok[1:-1]
    if any(c in _WS_UNESCAPES for c in tok):
        return "".join(_WS_UNESCAPES.get(c, c) for c in tok)
    return tok


def check_camel_positions(tokens: Sequence[str]) -> None:
    for i, tok in enumerate(tokens):
        if tok != CAMEL:
            continue
        if i == 0 or i == len(tokens) - 1:
            raise ValueError(f"{CAMEL} at boundary index {i}")
        if tokens[i - 1] == CAMEL:
            raise ValueError(f"adjacent {CAMEL} markers at index {i}")


def detokenize(seq: TokenSequence | Sequence[str]) -> str:
    """Join tokens back into a single-spaced source statement.

    Markers and underscore runs glue their neighbours; runs of punctuation
    are written without spaces so that multi-character operators survive.
    """
    tokens = list(seq.tokens if isinstance(seq, TokenSequence) else seq)
    check_camel_positions(tokens)
    for i, tok in enumerate(tokens):
        if tok in PLACEHOLDERS:
            raise ValueError(f"unresolved placeholder {tok} at index {i}; use reconstruct()")
    parts: list[str] = []
    prev: str | None = None
    glue_next = False
    for tok in tokens:
        if tok == CAMEL:
            glue_next = True
            continue
        text = _render(tok)
        if prev is not None:
            glue = (
                glue_next
                or _is_separator(prev)
                or _is_separator(tok)
                or (_is_punct(prev) and _is_punct(tok))
            )
            if not glue:
                parts.append(" ")
        parts.append(text)
        prev = tok
        glue_next = False
    return "".join(parts)


def reconstruct(
    seq: TokenSequence | Sequence[str],
    buggy_line: str,
    profile: LanguageProfile,
    max_combinations: int = MAX_RECONSTRUCTIONS,
) -> list[str]:
    """Turn a model output into concrete statements.

    Each placeholder is filled with every literal of the same kind found in
    ``buggy_line`` (distinct, in textual order).  Returns ``[]`` when a
    placeholder has no candidate or when the combinations exceed the cap.
    """
    tokens = list(seq.tokens if isinstance(seq, TokenSequence) else seq)
    slots = [i for i, t in enumerate(tokens) if t in PLACEHOLDERS]
    if not slots:
        return [detokenize(tokens)]
    literals: dict[str, list[str]] = {"STRING": [], "NUMBER": []}
    for kind, lit in tokenize(buggy_line, profile, abstract=True).abstraction_table:
        if lit not in literals[kind]:
            literals[kind].append(lit)
    choices = [literals[PLACEHOLDERS[tokens[i]]] for i in slots]
    total = 1
    for c in choices:
        total *= len(c)
    if total == 0:
        return []
    if total > max_combinations:
        logger.warning("discarding patch: %d reconstructions exceed cap %d", total, max_combinations)
        return []
    out = []
    for combo in itertools.product(*choices):
        filled = list(tokens)
        for i, lit in zip(slots, combo):
            filled[i] = _escape_ws(lit)
        out.append(detokenize(filled))
    return out


def strip_comments(line: str, profile: LanguageProfile) -> str | None:
    """Remove comments from one line.

    Returns ``None`` when the line cannot be cleaned with single-line context
    (an unclosed block comment, or a continuation line of one).
    """
    if profile.block_comment:
        opener, closer = profile.block_comment
        head = line.lstrip()
        if head.startswith(closer) or (head.startswith("*") and (len(head) == 1 or head[1].isspace())):
            return None
    out: list[str] = []
    i, n = 0, len(line)
    while i < n:
        delim = _string_start(line, i, profile)
        if delim is not None:
            end, _ = _scan_string(line, i, delim, profile)
            out.append(line[i:end])
            i = end
            continue
        if any(line.startswith(m, i) for m in profile.line_comment_markers):
            break
        if profile.block_comment:
            opener, closer = profile.block_comment
            if line.startswith(opener, i):
                end = line.find(closer, i + len(opener))
                if end < 0:
                    return None
                out.append(" ")
                i = end + len(closer)
                continue
            if line.startswith(closer, i):
                return None
        out.append(line[i])
        i += 1
    return "".join(out).rstrip()


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def token_count(line: str, profile: LanguageProfile) -> int:
    return len(tokenize(line, profile, abstract=True).tokens)


def tokenize_lines(lines: Iterable[str], profile: LanguageProfile, abstract: bool = False) -> list[TokenSequence]:
    return [tokenize(line, profile, abstract) for line in lines]
