from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convfix import ensemble as ens
from convfix.ensemble import (
    EnsembleEntry,
    SearchSpace,
    TrialData,
    TuningTrial,
    merge_rank,
    read_report,
    run_trial,
    sample_hyperparams,
    solved,
    train_topk,
    tune,
    write_report,
)
from convfix.nmt import HyperParams
from convfix.nmt.train import TrainConfig, TrainingDiverged

SMALL = SearchSpace(embed_dim=(8, 24), out_embed_dim=(8, 24), channels=(16, 32), kernel_width=(1, 3),
                    layers=(1, 2), dropout=(0.0, 0.2), clip_norm=(0.1, 1.0), learning_rate=(0.05, 0.5),
                    momentum=(0.5, 0.99))


def copy_data(n=48, seed=0, valid=16):
    rng = np.random.default_rng(seed)
    pairs = [(list(s), list(s)) for s in (rng.integers(3, 10, size=rng.integers(2, 5)) for _ in range(n + valid))]
    return TrialData(pairs[:n], pairs[n:], 10, 10, max_positions=16, batch_size=8)


class TestSampler:
    def test_default_bounds_over_many_samples(self):
        rng = np.random.default_rng(0)
        space = SearchSpace()
        for _ in range(1000):
            hp = sample_hyperparams(space, rng)
            for dim in (hp.src_embed_dim, hp.trg_embed_dim, hp.out_embed_dim):
                assert 50 <= dim <= 500
            for stack in (hp.encoder_layers, hp.decoder_layers):
                assert 1 <= len(stack) <= 10
                for channels, width in stack:
                    assert channels in (128, 256, 384, 512, 640)
                    assert 1 <= width <= 10
            assert all(w % 2 for _, w in hp.encoder_layers)
            assert 0.0 <= hp.dropout < 1.0 and 0.0 <= hp.momentum < 1.0
            assert 0.0 < hp.clip_norm <= 1.0 and 0.0 < hp.learning_rate <= 1.0
            assert hp.optimizer in ("sgd", "nag") and hp.criterion in ("default", "smoothed")

    def test_every_choice_reached(self):
        rng = np.random.default_rng(1)
        samples = [sample_hyperparams(SearchSpace(), rng) for _ in range(400)]
        assert {hp.encoder_layers[0][0] for hp in samples} == {128, 256, 384, 512, 640}
        assert {hp.decoder_layers[0][1] for hp in samples} == set(range(1, 11))
        assert {hp.encoder_layers[0][1] for hp in samples} == {1, 3, 5, 7, 9}
        assert {len(hp.decoder_layers) for hp in samples} == set(range(1, 11))

    def test_degenerate_ranges(self):
        space = SearchSpace(embed_dim=(64, 64), out_embed_dim=(32, 32), channels=(256,), kernel_width=(3, 3),
                            layers=(2, 2), dropout=(0.1, 0.1), clip_norm=(0.5, 0.5), learning_rate=(0.25, 0.25),
                            momentum=(0.9, 0.9), optimizers=("nag",), criteria=("smoothed",))
        hp = sample_hyperparams(space, np.random.default_rng(5))
        assert (hp.src_embed_dim, hp.trg_embed_dim, hp.out_embed_dim) == (64, 64, 32)
        assert hp.encoder_layers == hp.decoder_layers == ((256, 3), (256, 3))
        assert (hp.dropout, hp.clip_norm, hp.learning_rate, hp.momentum) == (0.1, 0.5, 0.25, 0.9)
        assert (hp.optimizer, hp.criterion) == ("nag", "smoothed")

    def test_seeded(self):
        a = [sample_hyperparams(SearchSpace(), np.random.default_rng(9)) for _ in range(3)]
        b = [sample_hyperparams(SearchSpace(), np.random.default_rng(9)) for _ in range(3)]
        assert a == b

    def test_no_odd_width_available(self):
        with pytest.raises(ValueError):
            sample_hyperparams(SearchSpace(kernel_width=(2, 2)), np.random.default_rng(0))

    def test_unknown_space_key(self):
        with pytest.raises(ValueError):
            SearchSpace.from_dict({"heads": [1, 2]})


class TestTune:
    def test_zero_budget(self):
        assert tune(0, copy_data()) == []

    def test_memorizer_ranks_first(self, monkeypatch):
        base = HyperParams(src_embed_dim=16, trg_embed_dim=16, out_embed_dim=16,
                           encoder_layers=((32, 3),), decoder_layers=((32, 3),), seed=1)
        frozen = base.replace(learning_rate=1e-9)
        learner = base.replace(learning_rate=0.5, momentum=0.9, clip_norm=1.0)
        queue = iter([frozen, learner])
        monkeypatch.setattr(ens, "sample_hyperparams", lambda space, rng: next(queue))
        trials = tune(2, copy_data(96))
        assert [t.index for t in trials] == [1, 0]
        assert trials[0].perplexity < trials[1].perplexity

    def test_sorted_and_deterministic(self):
        a = tune(3, copy_data(), SMALL, seed=4)
        b = tune(3, copy_data(), SMALL, seed=4)
        assert [t.to_record() for t in a] == [t.to_record() for t in b]
        assert [t.perplexity for t in a] == sorted(t.perplexity for t in a)
        assert sorted(t.index for t in a) == [0, 1, 2]

    def test_parallel_matches_serial(self):
        a = tune(3, copy_data(), SMALL, seed=8)
        b = tune(3, copy_data(), SMALL, seed=8, workers=2)
        assert [t.to_record() for t in a] == [t.to_record() for t in b]

    def test_wall_clock_budget(self):
        trials = tune("0.01s", copy_data(), SMALL)
        assert len(trials) >= 1

    def test_empty_validation(self):
        with pytest.raises(ValueError):
            tune(1, copy_data(valid=0), SMALL)

    def test_nan_perplexity_marks_failure(self, monkeypatch):
        monkeypatch.setattr(ens, "perplexity", lambda net, data: math.nan)
        trial, net = run_trial(0, HyperParams(seed=0), copy_data())
        assert trial.failed and net is None

    def test_divergence_keeps_tuning(self, monkeypatch, caplog):
        real = ens.Trainer.train_epoch
        calls = []

        def flaky(self, data):
            calls.append(1)
            if len(calls) == 1:
                raise TrainingDiverged("loss became nan")
            return real(self, data)

        monkeypatch.setattr(ens.Trainer, "train_epoch", flaky)
        with caplog.at_level(logging.WARNING):
            trials = tune(2, copy_data(), SMALL, seed=2)
        failed = [t for t in trials if t.failed]
        assert len(failed) == 1 and failed[0].index == 0 and failed[0].perplexity == math.inf
        assert trials[-1] is failed[0]
        assert "diverged" in caplog.text


class TestReport:
    def test_round_trip(self, tmp_path):
        trials = [TuningTrial(0, HyperParams(seed=3), 4.5, 1.25), TuningTrial(1, HyperParams(seed=4), math.inf, 0.5, True)]
        path = tmp_path / "tuning.jsonl"
        write_report(trials, path)
        back = read_report(path)
        assert [t.to_record() for t in back] == [t.to_record() for t in trials]
        assert json.loads(path.read_text().splitlines()[1])["perplexity"] == "inf"
        timing = [json.loads(l) for l in (tmp_path / "tuning.jsonl.timing.jsonl").read_text().splitlines()]
        assert timing == [{"index": 0, "wall_time": 1.25}, {"index": 1, "wall_time": 0.5}]

    def test_report_has_no_wall_time(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_report([TuningTrial(0, HyperParams(), 2.0, 9.9)], path)
        assert "wall_time" not in path.read_text()


class TestTrainTopk:
    def test_k_too_large(self):
        trials = [TuningTrial(0, HyperParams(), 3.0), TuningTrial(1, HyperParams(), math.inf, failed=True)]
        with pytest.raises(ValueError):
            train_topk(trials, 2, copy_data())

    def test_best_trials_trained_from_scratch(self):
        data = copy_data()
        trials = tune(3, data, SMALL, seed=6)
        cks = train_topk(trials, 2, data, TrainConfig(batch_size=8, max_epochs=2, patience=1), src_fingerprint="s")
        assert [c.metadata["trial"] for c in cks] == [t.index for t in trials[:2]]
        assert all(c.src_fingerprint == "s" and c.metadata["epochs"] == 2 for c in cks)
        assert cks[0].hyper == trials[0].hyper

    def test_diverged_model_excluded(self, monkeypatch, caplog):
        data = copy_data()
        trials = [TuningTrial(0, sample_hyperparams(SMALL, np.random.default_rng(0)), 3.0),
                  TuningTrial(1, sample_hyperparams(SMALL, np.random.default_rng(1)), 4.0)]
        real = ens.train_model

        def boom(hyper, *a, **kw):
            if hyper == trials[0].hyper:
                raise TrainingDiverged("nan")
            return real(hyper, *a, **kw)

        monkeypatch.setattr(ens, "train_model", boom)
        with caplog.at_level(logging.WARNING):
            cks = train_topk(trials, 2, data, TrainConfig(batch_size=8, max_epochs=1))
        assert [c.metadata["trial"] for c in cks] == [1]
        assert "excluding trial 0" in caplog.text


# -- merging ----------------------------------------------------------------------

SEQ = st.tuples(*[st.integers(3, 6)] * 2) | st.tuples(st.integers(3, 6))
OUTPUT = st.lists(st.tuples(SEQ, st.sampled_from([0.5, 1.0, 2.0, 3.5, 7.25])), max_size=6,
                  unique_by=lambda p: p[0]).map(lambda xs: sorted(xs, key=lambda p: p[1]))


def naive_merge(outputs):
    """Independent oracle: best (score, model) per sequence via exhaustive scan."""
    seqs = {tuple(s) for out in outputs for s, _ in out}
    rows = []
    for s in seqs:
        hits = [(n, m) for m, out in enumerate(outputs) for t, n in out if tuple(t) == s]
        score, mid = min(hits)
        rows.append((score, mid, s, tuple(sorted({m for _, m in hits}))))
    return sorted(rows)


class TestMergeRank:
    def test_single_model_identity(self):
        out = [((3, 4), 0.5), ((5,), 1.5), ((4, 4), 2.0)]
        assert [(e.tokens, e.score) for e in merge_rank([out])] == out

    def test_best_score_kept(self):
        merged = merge_rank([[((3, 4), 3.5)], [((3, 4), 2.0)]])
        assert merged == [EnsembleEntry((3, 4), 2.0, 1, (0, 1))]

    def test_disjoint_union(self):
        a = [((3, i), float(i)) for i in range(5)]
        b = [((4, i), i + 0.5) for i in range(5)]
        merged = merge_rank([a, b])
        assert len(merged) == 10
        assert [e.score for e in merged] == sorted(e.score for e in merged)

    def test_tie_breaks(self):
        merged = merge_rank([[((9,), 1.0)], [((3,), 1.0), ((4,), 1.0)]], model_ids=[7, 2])
        assert [(e.tokens, e.model_id) for e in merged] == [((3,), 2), ((4,), 2), ((9,), 7)]

    def test_id_count_mismatch(self):
        with pytest.raises(ValueError):
            merge_rank([[], []], model_ids=[0])

    def test_empty(self):
        assert merge_rank([]) == [] and merge_rank([[], []]) == []

    @settings(max_examples=300, deadline=None)
    @given(st.lists(OUTPUT, min_size=1, max_size=4))
    def test_matches_oracle(self, outputs):
        got = [(e.score, e.model_id, e.tokens, e.contributors) for e in merge_rank(outputs)]
        assert got == naive_merge(outputs)

    @settings(max_examples=200, deadline=None)
    @given(OUTPUT)
    def test_idempotent(self, out):
        strip = lambda es: [(e.tokens, e.score) for e in es]
        assert strip(merge_rank([out, out])) == strip(merge_rank([out]))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(OUTPUT, min_size=1, max_size=4), SEQ)
    def test_solved_superset(self, outputs, reference):
        merged = merge_rank(outputs)
        for out in outputs:
            if solved(merge_rank([out]), reference):
                assert solved(merged, reference)
