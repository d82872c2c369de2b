from __future__ import annotations

import json
import logging
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convfix.miner import (
    PAIR_FIELDS,
    BugFixPair,
    CommitRecord,
    FileDiff,
    dedup_against_benchmark,
    extract_pairs,
    filter_commit_message,
    length_filter,
    length_threshold,
    load_benchmark_fixes,
    mine,
    read_jsonl,
    write_jsonl,
)
from convfix.tokenizer import normalize_whitespace

from conftest import commit_file, git

HASH = "a" * 40


def diff(*hunks: str) -> bytes:
    return ("--- a/Foo.java\n+++ b/Foo.java\n" + "".join(hunks)).encode()


def commit(*hunks: str, path: str = "Foo.java") -> CommitRecord:
    return CommitRecord("repo", HASH, "fix", [FileDiff(path, diff(*hunks))])


def pair(buggy: str, fixed: str, line_no: int = 1) -> BugFixPair:
    return BugFixPair.create("r", HASH, "A.java", line_no, buggy, fixed, "java")


class TestFilterCommitMessage:
    @pytest.mark.parametrize("message,expected", [
        ("Fix NPE in parser", True),
        ("Merge branch 'fix-123'", False),
        ("Update README", False),
        ("bugfix: refactor loop", False),
        ("PATCH for overflow", True),
        ("Fix compiler warning", False),
        ("clean up after bug", False),
    ])
    def test_examples(self, message, expected):
        assert filter_commit_message(message) is expected

    @settings(max_examples=200)
    @given(st.text(), st.integers(0, 50))
    def test_refactor_always_rejects(self, message, pos):
        pos = min(pos, len(message))
        assert not filter_commit_message(message[:pos] + "refactor" + message[pos:])


class TestExtractPairs:
    def test_one_for_one(self):
        pairs = extract_pairs(commit("@@ -3 +3 @@\n-int x = a;\n+int x = b;\n"))
        assert [(p.line_no, p.buggy, p.fixed) for p in pairs] == [(3, "int x = a;", "int x = b;")]

    def test_delete_one_add_two(self):
        assert extract_pairs(commit("@@ -3 +3,2 @@\n-int x = a;\n+int x = b;\n+int y = c;\n")) == []

    def test_indentation_only(self):
        assert extract_pairs(commit("@@ -3 +3 @@\n-  int x = a;\n+\tint x = a;\n")) == []

    def test_spacing_only(self):
        assert extract_pairs(commit("@@ -3 +3 @@\n-int x=a;\n+int x = a;\n")) == []

    def test_comment_only(self):
        assert extract_pairs(commit("@@ -3 +3 @@\n-x = a; // old\n+x = a; // new\n")) == []

    def test_additions_and_deletions_only(self):
        assert extract_pairs(commit("@@ -3,0 +4 @@\n+int y;\n", "@@ -9 +9,0 @@\n-int z;\n")) == []

    def test_two_blocks_in_one_hunk(self):
        hunk = "@@ -3,3 +3,3 @@\n-a = 1;\n+a = 2;\n ctx();\n-b = 3;\n+b = 4;\n"
        pairs = extract_pairs(CommitRecord("repo", HASH, "fix", [FileDiff("Foo.java", diff(hunk))]))
        assert [(p.line_no, p.fixed) for p in pairs] == [(3, "a = 2;"), (5, "b = 4;")]

    def test_removed_line_resembling_header(self):
        pairs = extract_pairs(commit("@@ -3 +3 @@\n--- i;\n+++ i;\n"))
        assert [(p.buggy, p.fixed) for p in pairs] == [("-- i;", "++ i;")]

    def test_non_utf8_dropped(self):
        raw = b"--- a/Foo.java\n+++ b/Foo.java\n@@ -3 +3 @@\n-s = \"\xff\";\n+s = \"x\";\n"
        assert extract_pairs(CommitRecord("repo", HASH, "fix", [FileDiff("Foo.java", raw)])) == []

    def test_block_comment_continuation_dropped(self):
        assert extract_pairs(commit("@@ -3 +3 @@\n- * old text\n+ * new text\n")) == []

    def test_malformed_diff_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert extract_pairs(commit("@@ garbage @@\n-a;\n+b;\n")) == []
        assert "malformed" in caplog.text

    def test_unknown_extension_ignored(self):
        assert extract_pairs(commit("@@ -3 +3 @@\n-a\n+b\n", path="notes.txt")) == []

    def test_language_filter(self):
        c = commit("@@ -3 +3 @@\n-int x = a;\n+int x = b;\n")
        assert extract_pairs(c, "python") == []

    def test_empty_diffs(self):
        assert extract_pairs(CommitRecord("repo", HASH, "fix")) == []

    def test_bad_hash(self):
        with pytest.raises(ValueError):
            CommitRecord("repo", "not-a-hash", "fix")

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["a = b;", "a=b;", "a = c;", " a = b ; ", "f(1);"]),
                              st.sampled_from(["a = b;", "a=b;", "a = c;", " a = b ; ", "f(1);"])), max_size=5))
    def test_never_cosmetic(self, swaps):
        hunks = [f"@@ -{10 * i + 1} +{10 * i + 1} @@\n-{a}\n+{b}\n" for i, (a, b) in enumerate(swaps)]
        for p in extract_pairs(commit(*hunks)):
            assert normalize_whitespace(p.buggy) != normalize_whitespace(p.fixed)


class TestLengthFilter:
    def test_uniform_lengths_kept(self):
        pairs = [pair(" ".join("a" * 10), " ".join("b" * 10), i + 1) for i in range(100)]
        assert length_filter(pairs) == pairs

    def test_outlier_removed(self):
        # counts: 198 x 10 and 2 x 500 -> mean 14.9, variance 2376.99, threshold ~112.41
        pairs = [pair(" ".join("a" * 10), " ".join("b" * 10), i + 1) for i in range(99)]
        pairs.append(pair(" ".join("a" * 500), " ".join("b" * 500), 1000))
        assert length_threshold(pairs) == pytest.approx(14.9 + 2 * math.sqrt(2376.99), rel=1e-12)
        assert length_filter(pairs) == pairs[:99]

    def test_empty(self):
        assert length_filter([]) == []

    def test_single_pair_unchanged(self):
        p = [pair("a = b;", "a = c;")]
        assert length_filter(p) == p

    def test_idempotent_with_frozen_threshold(self):
        pairs = [pair(" ".join("a" * n), "b", n) for n in range(1, 60, 3)]
        pairs.append(pair(" ".join("a" * 300), "b", 999))
        t = length_threshold(pairs)
        once = length_filter(pairs, t)
        assert length_filter(once, t) == once


class TestDedup:
    def test_identical_removed(self):
        p = pair("a = b;", "a = c;")
        assert dedup_against_benchmark([p], {"a = c;"}) == []

    def test_one_identifier_differs(self):
        p = pair("a = b;", "a = d;")
        assert dedup_against_benchmark([p], {"a = c;"}) == [p]

    def test_empty_benchmark(self):
        ps = [pair("a;", "b;"), pair("c;", "d;")]
        assert dedup_against_benchmark(ps, set()) == ps

    def test_pair_form(self):
        ps = [pair("a  = b;", "a = c;"), pair("x = b;", "a = c;")]
        assert dedup_against_benchmark(ps, {("a = b;", "a = c;")}) == ps[1:]

    def test_load_benchmark_file(self, tmp_path):
        f = tmp_path / "bench.jsonl"
        f.write_text(json.dumps({"buggy": "a  = b;", "fixed": "a = c;"}) + "\nreturn  x;\n")
        assert load_benchmark_fixes(f) == {("a = b;", "a = c;"), "return x;"}


class TestJsonl:
    def test_round_trip(self, tmp_path):
        ps = [pair("s = \"é\";", "s = \"ü\";", 4), pair("a;", "b;", 9)]
        path = tmp_path / "p.jsonl"
        assert write_jsonl(ps, path) == 2
        assert read_jsonl(path) == ps

    def test_key_order(self):
        assert list(json.loads(pair("a;", "b;").to_json())) == list(PAIR_FIELDS)

    def test_stable_id(self):
        assert pair("a;", "b;", 3).id == pair("x;", "y;", 3).id
        assert pair("a;", "b;", 3).id != pair("a;", "b;", 4).id

    def test_rejects_extra_fields(self):
        record = json.loads(pair("a;", "b;").to_json())
        record["extra"] = 1
        with pytest.raises(ValueError):
            BugFixPair.from_json(json.dumps(record))


JAVA_V1 = """class Foo {
    int sum(int[] a, int n) {
        int s = 0;
        for (int i = 0; i <= n; i++) {
            s += a[i];
        }
        return s;
    }
}
"""


class TestGitMining:
    @pytest.fixture
    def repo(self, tmp_path):
        root = tmp_path / "repos" / "demo"
        root.mkdir(parents=True)
        git(root, "init", "-q")
        commit_file(root, "Foo.java", JAVA_V1, "initial import")
        v2 = JAVA_V1.replace("i <= n", "i < n")
        fix = commit_file(root, "Foo.java", v2, "Fix off-by-one in sum loop")
        v3 = v2.replace("        int s = 0;", "    int s = 0;")
        commit_file(root, "Foo.java", v3, "fix indentation bug")
        v4 = v3.replace("return s;", "return s + 0;")
        commit_file(root, "Foo.java", v4, "bugfix: refactor return")
        v5 = v4.replace("            s += a[i];", "            if (a != null)\n                s += a[i];")
        commit_file(root, "Foo.java", v5, "Fix NPE")
        v6 = v5.replace("class Foo {", "class Foo { // patched")
        commit_file(root, "Foo.java", v6, "patch comment")
        return tmp_path / "repos", fix

    def test_mine(self, repo):
        root, fix = repo
        pairs = mine(root, "java")
        assert len(pairs) == 1
        p = pairs[0]
        assert (p.repo_id, p.commit_hash, p.file_path, p.line_no) == ("demo", fix, "Foo.java", 4)
        assert p.buggy == "for (int i = 0; i <= n; i++) {"
        assert p.fixed == "for (int i = 0; i < n; i++) {"

    def test_benchmark_exclusion(self, repo):
        root, _ = repo
        assert mine(root, "java", {"for (int i = 0; i < n; i++) {"}) == []

    def test_parallel_matches_serial(self, repo):
        root, _ = repo
        assert mine(root, "java", workers=3) == mine(root, "java")
