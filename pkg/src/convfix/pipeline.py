"""Candidate generation, patch application and test-based validation for one bug."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .beam import END_ID, beam_decode
from .ensemble import merge_rank
from .nmt.checkpoint import ModelCheckpoint
from .nmt.model import Network
from .tokenizer import (
    LanguageProfile,
    detokenize,
    get_profile,
    normalize_whitespace,
    profile_for_path,
    reconstruct,
    tokenize,
)
from .vocab import END, PAD, START, UNK, Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_BEAM_WIDTH = 1000
DEFAULT_MAX_LEN = 100
TEST_PLACEHOLDER = "{test}"


class Verdict(str, enum.Enum):
    UNTESTED = "untested"
    COMPILE_FAIL = "compile_fail"
    TEST_FAIL = "test_fail"
    PLAUSIBLE = "plausible"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _split_lines(data: bytes) -> list[bytes]:
    return data.splitlines(keepends=True)


@dataclass(frozen=True)
class BugInstance:
    """A localized bug: one line of one file inside a project."""

    project_root: Path
    file_path: Path
    line_no: int
    language: str
    buggy_line: str
    file_digest: str

    @classmethod
    def load(cls, project_root: str | Path, file_path: str | Path, line_no: int,
             language: str | None = None) -> "BugInstance":
        root = Path(project_root).resolve()
        rel = Path(file_path)
        if rel.is_absolute():
            rel = rel.resolve().relative_to(root)
        data = (root / rel).read_bytes()
        lines = _split_lines(data)
        if not 1 <= line_no <= len(lines):
            raise ValueError(f"line {line_no} outside {rel} ({len(lines)} lines)")
        if language is None:
            profile = profile_for_path(str(rel))
            if profile is None:
                raise ValueError(f"cannot infer language of {rel}")
            language = profile.language
        text = lines[line_no - 1].decode("utf-8", errors="surrogateescape").rstrip("\r\n")
        return cls(root, rel, line_no, language, text, _sha256(data))

    @property
    def profile(self) -> LanguageProfile:
        return get_profile(self.language)

    @property
    def path(self) -> Path:
        return self.project_root / self.file_path


@dataclass
class CandidatePatch:
    statement: str
    score: float
    model_ids: tuple = ()
    tokens: tuple = ()
    verdict: Verdict = Verdict.UNTESTED
    timed_out: bool = False
    seconds: float = 0.0

    def set_verdict(self, verdict: Verdict) -> None:
        """Verdicts only move forward: untested to exactly one final state."""
        verdict = Verdict(verdict)
        if self.verdict is not Verdict.UNTESTED or verdict is Verdict.UNTESTED:
            raise ValueError(f"illegal verdict transition {self.verdict.value} -> {verdict.value}")
        self.verdict = verdict

    def to_dict(self) -> dict:
        return {
            "statement": self.statement,
            "score": self.score,
            "model_ids": [str(m) for m in self.model_ids],
            "tokens": list(self.tokens),
            "verdict": self.verdict.value,
            "timed_out": self.timed_out,
            "seconds": round(self.seconds, 6),
        }


@dataclass
class TestOracle:
    """Build and test commands plus the expected test outcomes for one bug.

    When ``test`` contains ``{test}`` it is run once per test name with the
    name substituted; otherwise it runs the whole suite and only its exit
    status is observed.
    """

    __test__ = False  # not a pytest class

    build: list[str]
    test: list[str]
    failing_tests: list[str] = field(default_factory=list)
    dev_fix_failing_tests: list[str] = field(default_factory=list)
    tests: list[str] = field(default_factory=list)
    timeout_build_s: float = 300.0
    timeout_test_s: float = 600.0
    baseline: frozenset | None = None

    _KEYS = ("build", "test", "failing_tests", "dev_fix_failing_tests", "tests", "timeout_build_s", "timeout_test_s")

    @classmethod
    def from_dict(cls, d: dict) -> "TestOracle":
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ValueError(f"unknown oracle keys: {sorted(unknown)}")
        if "build" not in d or "test" not in d:
            raise ValueError("oracle needs 'build' and 'test' argv lists")
        return cls(**{k: d[k] for k in cls._KEYS if k in d})

    @classmethod
    def load(cls, path: str | Path) -> "TestOracle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def per_test(self) -> bool:
        return any(TEST_PLACEHOLDER in a for a in self.test)

    def all_tests(self) -> list[str]:
        names = list(self.tests)
        for t in (*self.failing_tests, *self.dev_fix_failing_tests):
            if t not in names:
                names.append(t)
        return names


@dataclass
class AppliedPatch:
    """Handle returned by :func:`apply_patch`; ``revert`` restores the original bytes."""

    path: Path
    original: bytes

    def revert(self) -> None:
        self.path.write_bytes(self.original)


def apply_patch(bug: BugInstance, patch: CandidatePatch | str, root: str | Path | None = None) -> AppliedPatch:
    """Replace the buggy line under ``root`` (default: the project itself).

    The new statement inherits the original line's indentation and line
    terminator.  Fails if the file no longer matches the bug's snapshot.
    """
    statement = patch.statement if isinstance(patch, CandidatePatch) else patch
    path = Path(root or bug.project_root) / bug.file_path
    data = path.read_bytes()
    if _sha256(data) != bug.file_digest:
        raise RuntimeError(f"{bug.file_path} changed since the bug was loaded")
    lines = _split_lines(data)
    if not 1 <= bug.line_no <= len(lines):
        raise ValueError(f"line {bug.line_no} beyond end of file")
    old = lines[bug.line_no - 1]
    body = old.rstrip(b"\r\n")
    ending = old[len(body):]
    indent = body[: len(body) - len(body.lstrip(b" \t"))]
    lines[bug.line_no - 1] = indent + statement.strip().encode("utf-8", errors="surrogateescape") + ending
    path.write_bytes(b"".join(lines))
    return AppliedPatch(path, data)


# -- running commands ---------------------------------------------------------

@dataclass
class _Run:
    ok: bool
    timed_out: bool = False


def _run(argv: Sequence[str], cwd: Path, timeout: float) -> _Run:
    try:
        proc = subprocess.run(list(argv), cwd=cwd, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                              timeout=timeout, check=False)
    except subprocess.TimeoutExpired:
        return _Run(False, True)
    except OSError as exc:
        logger.warning("cannot run %s: %s", argv[0] if argv else "<empty>", exc)
        return _Run(False)
    return _Run(proc.returncode == 0)


def _test_argv(oracle: TestOracle, name: str) -> list[str]:
    return [a.replace(TEST_PLACEHOLDER, name) for a in oracle.test]


def _run_tests(oracle: TestOracle, cwd: Path, names: Sequence[str]) -> tuple[dict[str, bool], bool]:
    results = {}
    timed_out = False
    for name in names:
        r = _run(_test_argv(oracle, name), cwd, oracle.timeout_test_s)
        results[name] = r.ok
        timed_out |= r.timed_out
    return results, timed_out


class _Scratch:
    """A throw-away copy of the project."""

    def __init__(self, root: Path):
        self._tmp = tempfile.TemporaryDirectory(prefix="convfix-")
        self.path = Path(self._tmp.name) / root.name
        shutil.copytree(root, self.path, symlinks=True)

    def __enter__(self) -> Path:
        return self.path

    def __exit__(self, *exc) -> None:
        self._tmp.cleanup()


def compute_baseline(bug: BugInstance, oracle: TestOracle) -> frozenset:
    """Names of tests that pass on the unpatched project (cached on the oracle)."""
    if oracle.baseline is None:
        if not oracle.per_test:
            oracle.baseline = frozenset()
        else:
            with _Scratch(bug.project_root) as scratch:
                if not _run(oracle.build, scratch, oracle.timeout_build_s).ok:
                    raise RuntimeError("the unpatched project does not build")
                results, _ = _run_tests(oracle, scratch, oracle.all_tests())
            oracle.baseline = frozenset(n for n, ok in results.items() if ok)
    return oracle.baseline


def validate(bug: BugInstance, patch: CandidatePatch, oracle: TestOracle) -> Verdict:
    """Build and test ``patch`` in a scratch copy and record the verdict.

    A patch is plausible when every fault-revealing test passes and every
    test that passed before still passes.  Tests that also fail on the
    developer fix are ignored.
    """
    baseline = compute_baseline(bug, oracle)
    start = time.perf_counter()
    with _Scratch(bug.project_root) as scratch:
        apply_patch(bug, patch, scratch)
        build = _run(oracle.build, scratch, oracle.timeout_build_s)
        if build.timed_out:
            verdict, patch.timed_out = Verdict.TEST_FAIL, True
        elif not build.ok:
            verdict = Verdict.COMPILE_FAIL
        elif oracle.per_test:
            ignored = set(oracle.dev_fix_failing_tests)
            required = (set(oracle.failing_tests) | set(baseline)) - ignored
            results, timed_out = _run_tests(oracle, scratch, sorted(required))
            patch.timed_out = timed_out
            verdict = Verdict.PLAUSIBLE if all(results.values()) else Verdict.TEST_FAIL
        else:
            suite = _run(oracle.test, scratch, oracle.timeout_test_s)
            patch.timed_out = suite.timed_out
            verdict = Verdict.PLAUSIBLE if suite.ok else Verdict.TEST_FAIL
    patch.seconds = time.perf_counter() - start
    if patch.verdict is Verdict.UNTESTED:
        patch.set_verdict(verdict)
    return verdict


# -- models and generation ----------------------------------------------------

@dataclass
class RepairModel:
    model_id: str
    network: Network
    src_vocab: Vocabulary
    trg_vocab: Vocabulary

    @classmethod
    def from_checkpoint(cls, model_id: str, ckpt: ModelCheckpoint, src_vocab: Vocabulary,
                        trg_vocab: Vocabulary) -> "RepairModel":
        if ckpt.src_fingerprint and ckpt.src_fingerprint != src_vocab.fingerprint:
            raise ValueError(f"model {model_id}: source vocabulary fingerprint mismatch")
        if ckpt.trg_fingerprint and ckpt.trg_fingerprint != trg_vocab.fingerprint:
            raise ValueError(f"model {model_id}: target vocabulary fingerprint mismatch")
        return cls(model_id, ckpt.to_network(), src_vocab, trg_vocab)


def load_models(directory: str | Path) -> list[RepairModel]:
    """Load ``*.ckpt`` files (sorted by name) with ``src.vocab`` / ``trg.vocab`` from ``directory``."""
    directory = Path(directory)
    src = Vocabulary.load(directory / "src.vocab")
    trg = Vocabulary.load(directory / "trg.vocab")
    paths = sorted(directory.glob("*.ckpt"))
    if not paths:
        raise FileNotFoundError(f"no *.ckpt files in {directory}")
    return [RepairModel.from_checkpoint(p.stem, ModelCheckpoint.load(p), src, trg) for p in paths]


_SPECIAL = {PAD, START, END, UNK}


def generate_candidates(bug: BugInstance, models: Sequence[RepairModel], beam_width: int = DEFAULT_BEAM_WIDTH,
                        max_len: int = DEFAULT_MAX_LEN) -> list[CandidatePatch]:
    """Decode the buggy line with every model and turn the merged list into statements."""
    if not models:
        raise ValueError("at least one model is required")
    fps = {(m.src_vocab.fingerprint, m.trg_vocab.fingerprint) for m in models}
    if len(fps) > 1:
        raise ValueError("models do not share vocabularies")
    profile = bug.profile
    seq = tokenize(bug.buggy_line, profile, abstract=True)
    if not seq.tokens:
        return []
    outputs = []
    for m in models:
        src = m.src_vocab.encode(seq)
        if len(src) > m.network.max_positions:
            logger.warning("model %s: input of %d tokens exceeds %d positions", m.model_id, len(src), m.network.max_positions)
            outputs.append([])
            continue
        beams = beam_decode(m.network, src, beam_width, max_len)
        outputs.append([(tuple(m.trg_vocab.decode(r.tokens)), r.nll) for r in beams if not r.forced])
    merged = merge_rank(outputs, [m.model_id for m in models])

    # compare token streams so spacing between tokens never makes two statements differ
    def key_of(text: str) -> tuple:
        return tokenize(text, profile).tokens

    buggy = key_of(bug.buggy_line)
    seen: dict[tuple, CandidatePatch] = {}
    out = []
    for entry in merged:
        if _SPECIAL.intersection(entry.tokens):
            continue
        try:
            statements = reconstruct(entry.tokens, bug.buggy_line, profile)
        except ValueError:
            continue
        for stmt in statements:
            key = key_of(stmt)
            if key == buggy or key in seen:
                continue
            cand = CandidatePatch(stmt, entry.score, entry.contributors, entry.tokens)
            seen[key] = cand
            out.append(cand)
    return out


@dataclass
class RepairReport:
    bug: BugInstance
    candidates: list[CandidatePatch]
    plausible: list[CandidatePatch]
    reference_fix: str | None = None

    def exact_match(self, patch: CandidatePatch) -> bool | None:
        if self.reference_fix is None:
            return None
        return normalize_whitespace(detokenize(tokenize(patch.statement, self.bug.profile))) == \
            normalize_whitespace(detokenize(tokenize(self.reference_fix, self.bug.profile)))

    def to_dict(self) -> dict:
        def entry(c):
            d = c.to_dict()
            match = self.exact_match(c)
            if match is not None:
                d["exact_match"] = match
            return d

        return {
            "bug": {
                "project_root": str(self.bug.project_root),
                "file": str(self.bug.file_path),
                "line": self.bug.line_no,
                "language": self.bug.language,
                "buggy_line": self.bug.buggy_line,
            },
            "n_candidates": len(self.candidates),
            "empty": not self.plausible,
            "plausible": [entry(c) for c in self.plausible],
            "audit": [entry(c) for c in self.candidates],
        }


def repair(bug: BugInstance, models: Sequence[RepairModel] | None, oracle: TestOracle,
           beam_width: int = DEFAULT_BEAM_WIDTH, stop_after: int | None = None, workers: int = 1,
           candidates: Sequence[CandidatePatch] | None = None, reference_fix: str | None = None,
           max_len: int = DEFAULT_MAX_LEN) -> RepairReport:
    """Validate candidates in score order until ``stop_after`` plausible ones are found.

    Candidates may be supplied directly; otherwise they are generated from
    ``models``.  Every validated candidate ends up in the audit list.
    """
    if candidates is None:
        candidates = generate_candidates(bug, models or [], beam_width, max_len)
    candidates = list(candidates)
    compute_baseline(bug, oracle)
    audited: list[CandidatePatch] = []
    plausible: list[CandidatePatch] = []
    step = max(1, workers)
    with ThreadPoolExecutor(max_workers=step) as pool:
        for lo in range(0, len(candidates), step):
            chunk = candidates[lo : lo + step]
            list(pool.map(lambda c: validate(bug, c, oracle), chunk))
            audited.extend(chunk)
            plausible.extend(c for c in chunk if c.verdict is Verdict.PLAUSIBLE)
            if stop_after is not None and len(plausible) >= stop_after:
                break
    if stop_after is not None:
        plausible = plausible[:stop_after]
    return RepairReport(bug, audited, plausible, reference_fix)


# -- attention export ---------------------------------------------------------

def attention_grid(net: Network, src_ids: Sequence[int], out_ids: Sequence[int]) -> list[np.ndarray]:
    """Per decoder layer, an (input length x output length) attention matrix.

    Column ``j`` is the distribution over input positions used while
    generating output token ``j``.
    """
    out_ids = [t for t in out_ids if t != END_ID]
    enc = net.encode_sequence(src_ids)
    prefix = [1] + list(out_ids)
    _, maps = net.decode_step(prefix, enc)
    return [m[:, : len(out_ids)].astype(np.float64) for m in maps]


def write_attention_csv(path: str | Path, src_tokens: Sequence[str], out_tokens: Sequence[str],
                        grid: np.ndarray) -> None:
    """Rows are input tokens and columns output tokens; the first row and column hold the tokens."""
    if grid.shape != (len(src_tokens), len(out_tokens)):
        raise ValueError(f"grid {grid.shape} does not match {len(src_tokens)}x{len(out_tokens)} tokens")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(out_tokens))
        for tok, row in zip(src_tokens, grid):
            w.writerow([tok] + [repr(float(v)) for v in row])


def read_attention_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    out_tokens = rows[0][1:]
    src_tokens = [r[0] for r in rows[1:]]
    grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(src_tokens), len(out_tokens))
    return src_tokens, out_tokens, grid


def explain(model: RepairModel, line: str, language: str, out_tokens: Sequence[str] | None,
            out_dir: str | Path, beam_width: int = 1, max_len: int = DEFAULT_MAX_LEN) -> list[Path]:
    """Export one attention CSV per decoder layer for ``line`` and a patch.

    When ``out_tokens`` is None the model's top beam result is explained.
    """
    profile = get_profile(language)
    src_tokens = list(tokenize(line, profile, abstract=True).tokens)
    src_ids = model.src_vocab.encode(src_tokens)
    if out_tokens is None:
        best = beam_decode(model.network, src_ids, beam_width, max_len)[0]
        out_ids = list(best.tokens)
    else:
        out_ids = model.trg_vocab.encode(list(out_tokens))
    out_names = model.trg_vocab.decode(out_ids)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, grid in enumerate(attention_grid(model.network, src_ids, out_ids)):
        p = out_dir / f"attention.layer{i}.csv"
        write_attention_csv(p, src_tokens, out_names, grid)
        paths.append(p)
    return paths


__all__ = [
    "AppliedPatch", "BugInstance", "CandidatePatch", "RepairModel", "RepairReport", "TestOracle", "Verdict",
    "apply_patch", "attention_grid", "compute_baseline", "explain", "generate_candidates", "load_models",
    "read_attention_csv", "repair", "validate", "write_attention_csv",
]
