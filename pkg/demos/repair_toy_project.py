"""Validate candidate patches for a one-line bug in a throw-away Python project."""

import sys
import tempfile
import textwrap
from pathlib import Path

from convfix.pipeline import BugInstance, CandidatePatch, TestOracle, repair

root = Path(tempfile.mkdtemp(prefix="toy-")) / "toy"
root.mkdir()
(root / "calc.py").write_text(textwrap.dedent("""\
    def clamp(x, lo, hi):
        if x < lo:
            return lo
        if x > hi:
            return lo
        return x
"""))
(root / "test_calc.py").write_text(textwrap.dedent("""\
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
"""))

oracle = TestOracle.from_dict({
    "build": [sys.executable, "-m", "py_compile", "calc.py"],
    "test": [sys.executable, "-m", "unittest", "-q", "{test}"],
    "failing_tests": ["test_calc.TriggerTest.test_above_range"],
    "tests": ["test_calc.RegressionTest.test_inside_range", "test_calc.RegressionTest.test_degenerate_range"],
})

bug = BugInstance.load(root, "calc.py", 5)
print("buggy line:", repr(bug.buggy_line))

# hand-written candidates stand in for model output here
candidates = [CandidatePatch(s, score) for score, s in enumerate(
    ["return 5", "return hi (", "return lo", "return hi", "return min(x, hi)"])]
report = repair(bug, None, oracle, candidates=candidates, reference_fix="return hi")

for c in candidates:
    print(f"  {c.statement:<20} {c.verdict.value:<13} {c.seconds:.2f}s")
print("plausible:", [c.statement for c in report.plausible])
print("exact matches:", [c.statement for c in report.plausible if report.exact_match(c)])
print("project untouched:", "return lo" in (root / "calc.py").read_text().splitlines()[4])
