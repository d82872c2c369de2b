"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[ACCEPT n] PASS|FAIL`` line to the terminal (even
under output capture) before asserting.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from convfix.beam import beam_decode
from convfix.cli import main as cli_main
from convfix.ensemble import SearchSpace, TrialData, merge_rank, solved, train_topk, tune
from convfix.miner import write_jsonl
from convfix.nmt import HyperParams, Network, TrainConfig, Trainer, perplexity
from convfix.nmt.gradcheck import run_all
from convfix.pipeline import BugInstance, CandidatePatch, RepairModel, TestOracle, Verdict, explain, read_attention_csv, validate
from convfix.synthetic import generate
from convfix.tokenizer import detokenize, get_profile, tokenize

from conftest import BROKEN_FIX, BUG_LINE, DEV_FIX, LANGUAGES, SMALL_SPACE, TRAP_FIX, canonical, desk_lines, synthetic_pairs
from test_beam import exhaustive, tiny_net
from test_ensemble import naive_merge


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_01_tokenizer_round_trip(verdict):
    start = time.perf_counter()
    counts, bad = {}, 0
    for language in LANGUAGES:
        profile = get_profile(language)
        lines = desk_lines(language)
        counts[language] = len(lines)
        bad += sum(canonical(detokenize(tokenize(l, profile))) != canonical(l) for l in lines)
    elapsed = time.perf_counter() - start
    ok = bad == 0 and min(counts.values()) >= 1000 and elapsed < 5.0
    verdict(1, ok, f"tokenizer round-trip: {sum(counts.values())} lines, {bad} mismatches, {elapsed:.2f}s")


def test_02_gradients(verdict):
    start = time.perf_counter()
    report = run_all(0)
    elapsed = time.perf_counter() - start
    layer = {k: v for k, v in report.items() if not k.startswith("network")}
    net = {k: v for k, v in report.items() if k.startswith("network")}
    expected = {"embedding", "position_embedding", "encoder_conv", "causal_conv", "glu", "attention",
                "output_projection", "loss_default", "loss_smoothed"}
    ok = set(layer) == expected and max(layer.values()) < 1e-4 and max(net.values()) < 1e-3 and elapsed < 120
    verdict(2, ok, f"gradients: worst layer {max(layer.values()):.1e}, worst network {max(net.values()):.1e}, "
                   f"{elapsed:.1f}s")


def test_03_beam_vs_exhaustive(verdict):
    start = time.perf_counter()
    agree = 0
    for seed in range(20):
        net = tiny_net(seed, vocab=5)
        src = list(np.random.default_rng(seed).integers(3, 5, size=3))
        best = exhaustive(net, src, 4)[0]
        top = beam_decode(net, src, 5 ** 4, max_len=4)[0]
        agree += top.tokens == best[0] and abs(top.nll - best[1]) < 1e-9
    elapsed = time.perf_counter() - start
    verdict(3, agree == 20 and elapsed < 60, f"beam vs exhaustive: {agree}/20 seeds agree, {elapsed:.1f}s")


def test_04_overfit(verdict):
    start = time.perf_counter()
    ds = generate(64, ["off_by_one", "null_guard"], seed=3)
    data = ds.encoded()
    net = Network(HyperParams(seed=3), len(ds.vocab), len(ds.vocab), max_positions=32)
    trainer = Trainer(net, TrainConfig(batch_size=16))
    acc, epochs = 0.0, 0
    while epochs < 200 and acc < 0.95:
        for _ in range(10):
            trainer.train_epoch(data)
        epochs += 10
        acc = np.mean([beam_decode(net, s, 1, max_len=24)[0].tokens == tuple(t) for s, t in data])
    elapsed = time.perf_counter() - start
    verdict(4, acc >= 0.95 and elapsed < 600, f"overfit: top-1 exact match {acc:.1%} after {epochs} epochs, "
                                              f"{elapsed:.1f}s")


ENSEMBLE_SPACE = SearchSpace(embed_dim=(8, 48), out_embed_dim=(8, 48), channels=(16, 32, 64), kernel_width=(1, 5),
                             layers=(1, 3), dropout=(0.0, 0.3), clip_norm=(0.1, 1.0), learning_rate=(0.05, 0.5),
                             momentum=(0.5, 0.99))


def ensemble_sweep(seed: int) -> tuple[list[int], list[int]]:
    """Solved counts of each single model and of the top-k ensembles on held-out pairs."""
    ds = generate(150, ["off_by_one", "null_guard", "swap_args"], seed=seed)
    enc = ds.encoded()
    train, valid, test = enc[:60], enc[60:90], enc[90:]
    data = TrialData(train, valid, len(ds.vocab), len(ds.vocab), max_positions=32, batch_size=8)
    trials = tune(8, data, ENSEMBLE_SPACE, seed=seed)
    nets = [c.to_network() for c in train_topk(trials, 3, data, TrainConfig(batch_size=8, max_epochs=40, patience=5))]
    outs = [[[(r.tokens, r.nll) for r in beam_decode(n, s, 3, max_len=20) if not r.forced] for s, _ in test]
            for n in nets]

    def count(members):
        return sum(solved(merge_rank([outs[m][i] for m in members]), tuple(test[i][1])) for i in range(len(test)))

    return [count([m]) for m in range(len(nets))], [count(range(k)) for k in range(1, len(nets) + 1)]


def test_05_ensemble_monotonicity(verdict):
    runs = []
    for seed in range(3):
        singles, sweep = ensemble_sweep(seed)
        runs.append((seed, singles, sweep))
        if sweep[-1] > max(singles):
            break
    monotone = all(len(sw) == 3 and all(b >= a for a, b in zip(sw, sw[1:])) and sw[-1] >= max(si)
                   for _, si, sw in runs)
    improved = any(sw[-1] > max(si) for _, si, sw in runs)
    detail = "; ".join(f"seed {s}: singles {si} k=1..3 {sw}" for s, si, sw in runs)
    verdict(5, monotone and improved, f"ensemble sweep: {detail}")


def test_06_merge_rule(verdict):
    rng = np.random.default_rng(6)
    failures = 0
    for _ in range(10_000):
        k = int(rng.integers(1, 5))
        outputs = []
        for _ in range(k):
            n = int(rng.integers(0, 6))
            seqs = {tuple(int(t) for t in rng.integers(3, 6, size=rng.integers(1, 3))) for _ in range(n)}
            out = [(s, float(rng.choice([0.5, 1.0, 2.0, 3.5]) + rng.integers(0, 3))) for s in sorted(seqs)]
            outputs.append(sorted(out, key=lambda p: p[1]))
        merged = merge_rank(outputs)
        rows = [(e.score, e.model_id, e.tokens, e.contributors) for e in merged]
        scores = [e.score for e in merged]
        strip = lambda es: [(e.tokens, e.score) for e in es]
        ok = (rows == naive_merge(outputs) and scores == sorted(scores)
              and strip(merge_rank(outputs + outputs)) == strip(merged))
        failures += not ok
    verdict(6, failures == 0, f"merge rule: 10000 random cases, {failures} failures")


def test_07_uniform_perplexity(verdict):
    errors = {}
    for V in (4, 64, 1024):
        net = Network(HyperParams(seed=0), 10, V, max_positions=16, dtype=np.float64)
        net.params["gen.w"][:] = 0.0
        net.params["gen.b"][:] = 0.0
        errors[V] = abs(perplexity(net, [([3, 4, 5], [3, 3]), ([6], [3])]) - V)
    verdict(7, max(errors.values()) <= 1e-9, f"uniform perplexity: |ppl - V| = {errors}")


def test_08_validation_verdicts(verdict, toy_project):
    root, raw = toy_project
    bug = BugInstance.load(root, "calc.py", BUG_LINE)
    oracle = TestOracle.from_dict(raw)
    cases = [(DEV_FIX, Verdict.PLAUSIBLE), ("return lo", Verdict.TEST_FAIL),
             (BROKEN_FIX, Verdict.COMPILE_FAIL), (TRAP_FIX, Verdict.TEST_FAIL)]
    got = [validate(bug, CandidatePatch(s, 0.0), oracle) for s, _ in cases]
    exact = sum(g is want for g, (_, want) in zip(got, cases))
    verdict(8, exact == 4, f"validation verdicts: {exact}/4 exact ({', '.join(g.value for g in got)})")


def test_09_tune_determinism(verdict, tmp_path):
    data = tmp_path / "pairs.jsonl"
    write_jsonl(synthetic_pairs(60, ["off_by_one", "null_guard", "swap_args"], seed=9), data)
    space = tmp_path / "space.json"
    space.write_text(json.dumps(SMALL_SPACE))
    vocab = tmp_path / "vocab"
    assert cli_main(["build-vocab", "--data", str(data), "--out-dir", str(vocab), "--min-count", "1"]) == 0
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli_main(["tune", "--data", str(data), "--vocab-dir", str(vocab), "--budget", "5", "--seed", "13",
                         "--space", str(space), "--batch-size", "8", "--max-positions", "32", "--out", str(out)])
        assert code == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if not p.name.endswith(".timing.jsonl")})
    a, b = runs
    n_ckpt = sum(name.endswith(".ckpt") for name in a)
    ok = a == b and "tuning.jsonl" in a and n_ckpt >= 1
    verdict(9, ok, f"tune determinism: {len(a)} files ({n_ckpt} checkpoints) byte-identical={a == b}")


def test_10_throughput(verdict, memorized):
    ds, net = memorized
    src = ds.encoded()[0][0]
    start = time.perf_counter()
    res = beam_decode(net, src, 1000, max_len=40)
    elapsed = time.perf_counter() - start
    verdict(10, len(res) == 1000 and elapsed < 60, f"throughput: {len(res)} candidates in {elapsed:.2f}s")


def test_11_attention_export(verdict, memorized, tmp_path):
    ds, net = memorized
    model = RepairModel("m0", net, ds.vocab, ds.vocab)
    profile = get_profile("java")
    problems, checked = [], 0
    for i, (buggy, _) in enumerate(ds.pairs[:6]):
        line = detokenize(buggy)
        top = beam_decode(net, ds.vocab.encode(buggy), 3, max_len=24)
        patch = [r for r in top if not r.forced][-1]
        out_tokens = ds.vocab.decode(patch.tokens)
        paths = explain(model, line, "java", out_tokens, tmp_path / str(i))
        if len(paths) != len(net.hyper.decoder_layers):
            problems.append(f"pair {i}: {len(paths)} layer files")
        for p in paths:
            src_tokens, header, grid = read_attention_csv(p)
            checked += 1
            if src_tokens != list(tokenize(line, profile, abstract=True).tokens) or header != out_tokens:
                problems.append(f"{p.name}: header mismatch")
            if grid.shape != (len(src_tokens), len(out_tokens)):
                problems.append(f"{p.name}: shape {grid.shape}")
            if not np.allclose(grid.sum(axis=0), 1.0, atol=1e-6):
                problems.append(f"{p.name}: column sums off by {np.abs(grid.sum(axis=0) - 1).max():.1e}")
    verdict(11, not problems, f"attention export: {checked} grids checked, problems: {problems or 'none'}")
