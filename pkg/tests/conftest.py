from __future__ import annotations

import re
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"
LANGUAGES = ("java", "python", "cpp", "javascript")


def canonical(text: str) -> str:
    """Whitespace-insensitive text form: collapse runs, drop spaces next to non-word chars."""
    text = re.sub(r"\s+", " ", text.strip())
    return re.sub(r"(?<!\w) | (?!\w)", "", text)


def desk_lines(language: str) -> list[str]:
    return (DATA / f"desk_{language}.txt").read_text(encoding="utf-8").splitlines()


# -- toy project with a real bug ------------------------------------------------

CALC = textwrap.dedent(
    """\
    def clamp(x, lo, hi):
        if x < lo:
            return lo
        if x > hi:
            return lo
        return x


    def double(x):
        return x * 2
    """
)

TESTS = textwrap.dedent(
    """\
    import unittest

    from calc import clamp


    class TriggerTest(unittest.TestCase):
        def test_above_range(self):
            self.assertEqual(clamp(10, 0, 5), 5)


    class RegressionTest(unittest.TestCase):
        def test_inside_range(self):
            self.assertEqual(clamp(3, 0, 5), 3)

        def test_degenerate_range(self):
            self.assertEqual(clamp(7, 4, 4), 4)
    """
)

BUG_LINE = 5
DEV_FIX = "return hi"
TRAP_FIX = "return 5"
BROKEN_FIX = "return hi ("


@pytest.fixture
def toy_project(tmp_path):
    root = tmp_path / "toy"
    root.mkdir()
    (root / "calc.py").write_text(CALC, encoding="utf-8")
    (root / "test_calc.py").write_text(TESTS, encoding="utf-8")
    oracle = {
        "build": [sys.executable, "-m", "py_compile", "calc.py"],
        "test": [sys.executable, "-m", "unittest", "-q", "{test}"],
        "failing_tests": ["test_calc.TriggerTest.test_above_range"],
        "dev_fix_failing_tests": [],
        "tests": ["test_calc.RegressionTest.test_inside_range", "test_calc.RegressionTest.test_degenerate_range"],
        "timeout_build_s": 60,
        "timeout_test_s": 60,
    }
    return root, oracle


def snapshot(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


JAVA_V1_FOR_CLI = """class Foo {
    int sum(int[] a, int n) {
        int s = 0;
        for (int i = 0; i <= n; i++) {
            s += a[i];
        }
        return s;
    }
}
"""


# -- git fixture ----------------------------------------------------------------

def git(repo: Path, *args: str) -> str:
    env = {"GIT_AUTHOR_NAME": "t", "GIT_AUTHOR_EMAIL": "t@example.com", "GIT_COMMITTER_NAME": "t",
           "GIT_COMMITTER_EMAIL": "t@example.com", "GIT_AUTHOR_DATE": "2020-01-01T00:00:00",
           "GIT_COMMITTER_DATE": "2020-01-01T00:00:00", "PATH": "/usr/bin:/bin", "HOME": str(repo)}
    return subprocess.run(["git", "-C", str(repo), *args], check=True, capture_output=True, text=True, env=env).stdout


def commit_file(repo: Path, name: str, text: str, message: str) -> str:
    (repo / name).write_text(text, encoding="utf-8")
    git(repo, "add", name)
    git(repo, "commit", "-q", "-m", message)
    return git(repo, "rev-parse", "HEAD").strip()


# -- tiny trained model ---------------------------------------------------------

@pytest.fixture(scope="session")
def memorized():
    """A default-size network trained to memorize a two-pattern synthetic set."""
    from convfix.nmt import HyperParams, Network, TrainConfig, Trainer
    from convfix.synthetic import generate

    ds = generate(32, ["off_by_one", "null_guard"], seed=3)
    net = Network(HyperParams(seed=3), len(ds.vocab), len(ds.vocab), max_positions=32)
    trainer = Trainer(net, TrainConfig(batch_size=16))
    for _ in range(120):
        trainer.train_epoch(ds.encoded())
    return ds, net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- synthetic corpus as mined pairs --------------------------------------------

SMALL_SPACE = {
    "embed_dim": [8, 24], "out_embed_dim": [8, 24], "channels": [16, 32], "kernel_width": [1, 3],
    "layers": [1, 2], "dropout": [0.0, 0.2], "clip_norm": [0.1, 1.0], "learning_rate": [0.05, 0.5],
    "momentum": [0.5, 0.99],
}


def synthetic_pairs(n: int, patterns, seed: int = 0):
    """Synthetic edits dressed up as mined Java pairs, one fake commit each."""
    import hashlib

    from convfix.miner import BugFixPair
    from convfix.synthetic import generate
    from convfix.tokenizer import detokenize

    ds = generate(n, patterns, seed)
    out = []
    for i, (buggy, fixed) in enumerate(ds.pairs):
        commit = hashlib.sha1(f"{seed}:{i}".encode()).hexdigest()
        out.append(BugFixPair.create("synthetic", commit, "Foo.java", i + 1, detokenize(buggy), detokenize(fixed), "java"))
    return out
