"""Mining single-line bug-fix pairs from git histories."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import statistics
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .tokenizer import PROFILES, get_profile, normalize_whitespace, profile_for_path, strip_comments, token_count, tokenize

logger = logging.getLogger(__name__)

FIX_KEYWORDS = ("fix", "bug", "patch")
ANTI_PATTERNS = ("rename", "clean up", "refactor", "merge", "misspelling", "compiler warning")

PAIR_FIELDS = ("id", "repo_id", "commit_hash", "file_path", "line_no", "buggy", "fixed", "language")

_HEX = re.compile(r"^[0-9a-fA-F]{4,64}$")
_HUNK = re.compile(rb"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


@dataclass
class FileDiff:
    """Unified diff of one file, kept as raw bytes until pairs are extracted."""

    path: str
    diff: bytes


@dataclass
class CommitRecord:
    repo_id: str
    commit_hash: str
    message: str
    file_diffs: list[FileDiff] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not _HEX.match(self.commit_hash):
            raise ValueError(f"commit hash {self.commit_hash!r} is not hex-shaped")


@dataclass(frozen=True)
class BugFixPair:
    id: str
    repo_id: str
    commit_hash: str
    file_path: str
    line_no: int
    buggy: str
    fixed: str
    language: str

    @classmethod
    def create(cls, repo_id: str, commit_hash: str, file_path: str, line_no: int,
               buggy: str, fixed: str, language: str) -> "BugFixPair":
        key = f"{repo_id}\0{commit_hash}\0{file_path}\0{line_no}".encode("utf-8")
        return cls(hashlib.sha1(key).hexdigest()[:16], repo_id, commit_hash, file_path,
                   line_no, buggy, fixed, language)

    def to_json(self) -> str:
        record = asdict(self)
        return json.dumps({k: record[k] for k in PAIR_FIELDS}, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "BugFixPair":
        record = json.loads(line)
        if set(record) != set(PAIR_FIELDS):
            raise ValueError(f"unexpected pair fields: {sorted(record)}")
        return cls(**record)


def filter_commit_message(message: str) -> bool:
    """Keep bug-fix commits: a fix keyword and none of the anti-patterns."""
    text = message.lower()
    return any(k in text for k in FIX_KEYWORDS) and not any(a in text for a in ANTI_PATTERNS)


def _change_blocks(diff: bytes) -> Iterator[tuple[int, list[bytes], list[bytes]]]:
    """Yield (first old line number, removed lines, added lines) per contiguous change."""
    old_no = None
    removed: list[bytes] = []
    added: list[bytes] = []
    block_start = 0

    def flush():
        if removed or added:
            yield block_start, list(removed), list(added)
        removed.clear()
        added.clear()

    for raw in diff.split(b"\n"):
        if raw.startswith(b"@@"):
            yield from flush()
            m = _HUNK.match(raw)
            if m is None:
                raise ValueError(f"malformed hunk header {raw[:60]!r}")
            old_no = int(m.group(1))
            # a zero-length old range points at the line before the insertion
            if m.group(2) == b"0":
                old_no += 1
            continue
        # file headers precede the first hunk; "\ No newline" markers carry no content
        if old_no is None or raw.startswith(b"\\"):
            continue
        if raw.startswith(b"-"):
            if not removed and not added:
                block_start = old_no
            removed.append(raw[1:])
            old_no += 1
        elif raw.startswith(b"+"):
            if not removed and not added:
                block_start = old_no
            added.append(raw[1:])
        else:
            yield from flush()
            old_no += 1
    yield from flush()


def _clean(line: bytes, profile) -> str | None:
    try:
        text = line.rstrip(b"\r").decode("utf-8")
    except UnicodeDecodeError:
        return None
    code = strip_comments(text, profile)
    if code is None or not code.strip():
        return None
    return code.strip()


def extract_pairs(commit: CommitRecord, language: str | None = None) -> list[BugFixPair]:
    """One pair per change block that swaps exactly one line for one line."""
    pairs = []
    for fd in commit.file_diffs:
        profile = profile_for_path(fd.path)
        if profile is None or (language and profile.language != language):
            continue
        try:
            blocks = list(_change_blocks(fd.diff))
        except ValueError as exc:
            logger.warning("skipping %s@%s:%s: %s", commit.repo_id, commit.commit_hash[:10], fd.path, exc)
            continue
        for line_no, removed, added in blocks:
            if len(removed) != 1 or len(added) != 1:
                continue
            buggy, fixed = _clean(removed[0], profile), _clean(added[0], profile)
            if buggy is None or fixed is None:
                continue
            # cosmetic: identical token streams differ only in spacing
            if tokenize(buggy, profile).tokens == tokenize(fixed, profile).tokens:
                continue
            pairs.append(BugFixPair.create(commit.repo_id, commit.commit_hash, fd.path,
                                           line_no, buggy, fixed, profile.language))
    return pairs


def length_threshold(pairs: list[BugFixPair]) -> float | None:
    """mean + 2*std of token counts over both sides; None when undefined."""
    if len(pairs) < 2:
        return None
    counts = []
    for p in pairs:
        profile = get_profile(p.language)
        counts.append(token_count(p.buggy, profile))
        counts.append(token_count(p.fixed, profile))
    return statistics.fmean(counts) + 2 * statistics.pstdev(counts)


def length_filter(pairs: list[BugFixPair], threshold: float | None = None) -> list[BugFixPair]:
    if threshold is None:
        threshold = length_threshold(pairs)
        if threshold is None:
            return list(pairs)
    kept = []
    for p in pairs:
        profile = get_profile(p.language)
        if token_count(p.buggy, profile) <= threshold and token_count(p.fixed, profile) <= threshold:
            kept.append(p)
    return kept


def dedup_against_benchmark(pairs: Iterable[BugFixPair], benchmark_fixes: set) -> list[BugFixPair]:
    """Drop pairs matching a benchmark change.

    ``benchmark_fixes`` holds whitespace-normalized fixed lines, or
    ``(buggy, fixed)`` tuples when the buggy side is known too.
    """
    if not benchmark_fixes:
        return list(pairs)
    out = []
    for p in pairs:
        buggy, fixed = normalize_whitespace(p.buggy), normalize_whitespace(p.fixed)
        if fixed in benchmark_fixes or (buggy, fixed) in benchmark_fixes:
            continue
        out.append(p)
    return out


def load_benchmark_fixes(path: str | Path) -> set:
    """Read fixes to exclude: JSONL with buggy/fixed keys, or one fixed line per row."""
    fixes: set = set()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError:
            record = None
        if isinstance(record, dict) and "fixed" in record:
            fixed = normalize_whitespace(record["fixed"])
            if "buggy" in record:
                fixes.add((normalize_whitespace(record["buggy"]), fixed))
            else:
                fixes.add(fixed)
        else:
            fixes.add(normalize_whitespace(raw))
    return fixes


def write_jsonl(pairs: Iterable[BugFixPair], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[BugFixPair]:
    with open(path, encoding="utf-8") as fh:
        return [BugFixPair.from_json(line) for line in fh if line.strip()]


# -- git plumbing -----------------------------------------------------------

def _git(repo: Path, *args: str) -> bytes:
    return subprocess.run(["git", "-C", str(repo), *args], check=True, capture_output=True).stdout


def iter_commits(repo: Path, repo_id: str | None = None) -> Iterator[CommitRecord]:
    """Walk the first-parent-agnostic history of ``repo`` (merges excluded)."""
    repo_id = repo_id or repo.name
    log = _git(repo, "log", "--all", "--no-merges", "--format=%H%x00%B%x1e")
    for entry in log.split(b"\x1e"):
        entry = entry.strip(b"\n")
        if not entry:
            continue
        sha, _, message = entry.partition(b"\x00")
        yield CommitRecord(repo_id, sha.decode(), message.decode("utf-8", "replace"))


def load_diffs(repo: Path, commit: CommitRecord) -> CommitRecord:
    raw = _git(repo, "show", "--format=", "-U0", "--no-color", "--no-renames", "--no-ext-diff", commit.commit_hash)
    diffs = []
    for chunk in re.split(rb"(?m)^diff --git ", raw):
        if not chunk.strip():
            continue
        header = chunk.split(b"\n", 1)[0]
        m = re.search(rb" b/(.+)$", header)
        if m is None:
            continue
        diffs.append(FileDiff(m.group(1).decode("utf-8", "replace"), chunk))
    commit.file_diffs = diffs
    return commit


def mine_repository(repo: str | Path, language: str) -> list[BugFixPair]:
    repo = Path(repo)
    pairs = []
    for commit in iter_commits(repo):
        if not filter_commit_message(commit.message):
            continue
        pairs.extend(extract_pairs(load_diffs(repo, commit), language))
    return pairs


def find_repositories(root: str | Path) -> list[Path]:
    root = Path(root)
    if (root / ".git").exists():
        return [root]
    return sorted(p for p in root.iterdir() if (p / ".git").exists())


def mine(repos_root: str | Path, language: str, benchmark_fixes: set | None = None,
         workers: int = 1) -> list[BugFixPair]:
    """Full mining pipeline over every repository below ``repos_root``."""
    get_profile(language)
    repos = find_repositories(repos_root)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_repo = list(pool.map(lambda r: mine_repository(r, language), repos))
    pairs = [p for chunk in per_repo for p in chunk]
    pairs = length_filter(pairs)
    return dedup_against_benchmark(pairs, benchmark_fixes or set())


__all__ = [
    "ANTI_PATTERNS", "BugFixPair", "CommitRecord", "FIX_KEYWORDS", "FileDiff", "PROFILES",
    "dedup_against_benchmark", "extract_pairs", "filter_commit_message", "length_filter",
    "length_threshold", "load_benchmark_fixes", "mine", "mine_repository", "read_jsonl", "write_jsonl",
]
