"""Random hyper-parameter search, top-k training and ensemble output merging."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .nmt.checkpoint import ModelCheckpoint
from .nmt.hyper import HyperParams
from .nmt.model import Network
from .nmt.train import EncodedPair, TrainConfig, Trainer, TrainingDiverged, perplexity

logger = logging.getLogger(__name__)

DEFAULT_K = 5


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive bounds for each sampled field."""

    embed_dim: tuple[int, int] = (50, 500)
    out_embed_dim: tuple[int, int] = (50, 500)
    channels: tuple[int, ...] = (128, 256, 384, 512, 640)
    kernel_width: tuple[int, int] = (1, 10)
    layers: tuple[int, int] = (1, 10)
    dropout: tuple[float, float] = (0.0, 1.0)
    clip_norm: tuple[float, float] = (0.0, 1.0)
    learning_rate: tuple[float, float] = (0.0, 1.0)
    momentum: tuple[float, float] = (0.0, 1.0)
    optimizers: tuple[str, ...] = ("sgd", "nag")
    criteria: tuple[str, ...] = ("default", "smoothed")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown search-space keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})


def _half_open(rng, lo, hi):
    """Uniform on [lo, hi), or exactly lo when the range is degenerate."""
    return lo if lo == hi else float(rng.uniform(lo, hi))


def _open_closed(rng, lo, hi):
    """Uniform on (lo, hi]."""
    return hi if lo == hi else float(hi - rng.uniform(0.0, hi - lo))


def sample_hyperparams(space: SearchSpace, rng: np.random.Generator) -> HyperParams:
    """Draw every field independently and uniformly from ``space``.

    Each conv stack gets one (channels, width) pair repeated over its depth.
    Encoder widths are drawn from the odd values in range so the symmetric
    window stays centred.
    """
    def stack(odd: bool):
        depth = int(rng.integers(space.layers[0], space.layers[1] + 1))
        channels = int(space.channels[rng.integers(len(space.channels))])
        widths = [w for w in range(space.kernel_width[0], space.kernel_width[1] + 1) if not odd or w % 2]
        if not widths:
            raise ValueError("kernel_width range contains no odd width for the encoder")
        width = int(widths[rng.integers(len(widths))])
        return ((channels, width),) * depth

    return HyperParams(
        src_embed_dim=int(rng.integers(space.embed_dim[0], space.embed_dim[1] + 1)),
        trg_embed_dim=int(rng.integers(space.embed_dim[0], space.embed_dim[1] + 1)),
        out_embed_dim=int(rng.integers(space.out_embed_dim[0], space.out_embed_dim[1] + 1)),
        encoder_layers=stack(odd=True),
        decoder_layers=stack(odd=False),
        dropout=_half_open(rng, *space.dropout),
        clip_norm=_open_closed(rng, *space.clip_norm),
        optimizer=str(space.optimizers[rng.integers(len(space.optimizers))]),
        criterion=str(space.criteria[rng.integers(len(space.criteria))]),
        learning_rate=_open_closed(rng, *space.learning_rate),
        momentum=_half_open(rng, *space.momentum),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


@dataclass
class TuningTrial:
    index: int
    hyper: HyperParams
    perplexity: float
    wall_time: float = 0.0
    failed: bool = False

    def to_record(self, with_time: bool = False) -> dict:
        record = {
            "index": self.index,
            "hyper": self.hyper.to_dict(),
            "perplexity": self.perplexity if math.isfinite(self.perplexity) else "inf",
            "failed": self.failed,
        }
        if with_time:
            record["wall_time"] = self.wall_time
        return record

    @classmethod
    def from_record(cls, record: dict) -> "TuningTrial":
        ppl = record["perplexity"]
        return cls(record["index"], HyperParams.from_dict(record["hyper"]),
                   math.inf if ppl == "inf" else float(ppl), record.get("wall_time", 0.0), record["failed"])


@dataclass
class TrialData:
    train: Sequence[EncodedPair]
    valid: Sequence[EncodedPair]
    src_vocab_size: int
    trg_vocab_size: int
    max_positions: int = 256
    batch_size: int = 32


def run_trial(index: int, hyper: HyperParams, data: TrialData) -> tuple[TuningTrial, Network | None]:
    """Train one epoch and measure validation perplexity."""
    start = time.perf_counter()
    net = Network(hyper, data.src_vocab_size, data.trg_vocab_size, data.max_positions)
    trainer = Trainer(net, TrainConfig(batch_size=data.batch_size))
    try:
        trainer.train_epoch(data.train)
        ppl = perplexity(net, data.valid)
    except TrainingDiverged as exc:
        logger.warning("trial %d diverged: %s", index, exc)
        return TuningTrial(index, hyper, math.inf, time.perf_counter() - start, True), None
    failed = not math.isfinite(ppl)
    return TuningTrial(index, hyper, ppl, time.perf_counter() - start, failed), (None if failed else net)


def _trial_job(args):
    return run_trial(*args)


def _parse_budget(budget) -> tuple[int | None, float | None]:
    if isinstance(budget, int):
        return budget, None
    if isinstance(budget, float):
        return None, budget
    text = str(budget).strip().lower()
    units = {"s": 1, "m": 60, "h": 3600}
    if text and text[-1] in units:
        return None, float(text[:-1]) * units[text[-1]]
    return int(text), None


def tune(budget, data: TrialData, space: SearchSpace | None = None, seed: int = 0,
         workers: int = 1, keep_networks: bool = False):
    """Random search: sample, train one epoch, rank by validation perplexity.

    ``budget`` is a trial count (int or "5") or a wall-clock limit ("90s",
    "10m", or a float of seconds).  Returns trials sorted by (perplexity,
    index); with ``keep_networks`` also a dict of trial index -> network.
    """
    space = space or SearchSpace()
    if not data.valid:
        raise ValueError("tuning needs a non-empty validation split")
    count, seconds = _parse_budget(budget)
    rng = np.random.default_rng(seed)
    results: list[tuple[TuningTrial, Network | None]] = []
    if count is not None:
        jobs = [(i, sample_hyperparams(space, rng), data) for i in range(count)]
        if workers > 1 and count > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_trial_job, jobs))
        else:
            results = [_trial_job(j) for j in jobs]
    else:
        deadline = time.monotonic() + seconds
        i = 0
        while time.monotonic() < deadline:
            results.append(run_trial(i, sample_hyperparams(space, rng), data))
            i += 1
    results.sort(key=lambda r: (r[0].perplexity, r[0].index))
    trials = [r[0] for r in results]
    if keep_networks:
        return trials, {t.index: net for t, net in results if net is not None}
    return trials


def write_report(trials: Sequence[TuningTrial], path: str | Path) -> None:
    """Deterministic JSONL report; wall times go to a ``.timing.jsonl`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(json.dumps(t.to_record(), sort_keys=True) + "\n")
    with open(str(path) + ".timing.jsonl", "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(json.dumps({"index": t.index, "wall_time": t.wall_time}, sort_keys=True) + "\n")


def read_report(path: str | Path) -> list[TuningTrial]:
    with open(path, encoding="utf-8") as fh:
        return [TuningTrial.from_record(json.loads(line)) for line in fh if line.strip()]


def train_model(hyper: HyperParams, data: TrialData, config: TrainConfig | None = None,
                initial: Network | None = None) -> tuple[Network, float, int]:
    """Train from scratch (or from ``initial``) until convergence; returns (net, best ppl, epochs)."""
    net = initial.copy() if initial is not None else Network(hyper, data.src_vocab_size, data.trg_vocab_size, data.max_positions)
    config = config or TrainConfig(batch_size=data.batch_size)
    result = Trainer(net, config).fit(data.train, data.valid or None)
    return net, result.best_perplexity, result.epochs


def train_topk(trials: Sequence[TuningTrial], k: int, data: TrialData, config: TrainConfig | None = None,
               resume_from: dict[int, Network] | None = None, src_fingerprint: str = "",
               trg_fingerprint: str = "") -> list[ModelCheckpoint]:
    """Fully train the ``k`` best successful trials.

    Each model restarts from fresh initialization with its trial's
    hyper-parameters unless ``resume_from`` supplies the tuned weights.
    """
    ok = [t for t in trials if not t.failed and math.isfinite(t.perplexity)]
    if k > len(ok):
        raise ValueError(f"k={k} exceeds the {len(ok)} successful trials")
    ok.sort(key=lambda t: (t.perplexity, t.index))
    out = []
    for t in ok[:k]:
        initial = (resume_from or {}).get(t.index)
        try:
            net, ppl, epochs = train_model(t.hyper, data, config, initial)
        except TrainingDiverged as exc:
            logger.warning("excluding trial %d: %s", t.index, exc)
            continue
        if not math.isfinite(ppl):
            logger.warning("excluding trial %d: did not converge", t.index)
            continue
        out.append(ModelCheckpoint.from_network(
            net, src_fingerprint, trg_fingerprint,
            {"trial": t.index, "epochs": epochs, "valid_perplexity": ppl},
        ))
    return out


# -- merging ------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleEntry:
    tokens: tuple
    score: float
    model_id: object
    contributors: tuple


def merge_rank(per_model_outputs: Sequence[Sequence[tuple[Sequence[Hashable], float]]],
               model_ids: Sequence | None = None) -> list[EnsembleEntry]:
    """Union of every model's (sequence, NLL) list.

    A sequence produced by several models keeps its lowest NLL and is
    credited to the smallest model id reaching it.  Output is sorted by
    (NLL, model id, tokens).
    """
    model_ids = list(range(len(per_model_outputs))) if model_ids is None else list(model_ids)
    if len(model_ids) != len(per_model_outputs):
        raise ValueError("one model id per output list is required")
    best: dict[tuple, tuple] = {}
    contributors: dict[tuple, set] = {}
    for mid, outputs in zip(model_ids, per_model_outputs):
        for tokens, nll in outputs:
            key = tuple(tokens)
            contributors.setdefault(key, set()).add(mid)
            if key not in best or (nll, mid) < best[key]:
                best[key] = (float(nll), mid)
    entries = [EnsembleEntry(key, nll, mid, tuple(sorted(contributors[key])))
               for key, (nll, mid) in best.items()]
    entries.sort(key=lambda e: (e.score, e.model_id, e.tokens))
    return entries


def solved(entries: Sequence[EnsembleEntry], reference: Sequence) -> bool:
    ref = tuple(reference)
    return any(e.tokens == ref for e in entries)


__all__ = [
    "DEFAULT_K", "EnsembleEntry", "SearchSpace", "TrialData", "TuningTrial", "merge_rank",
    "read_report", "run_trial", "sample_hyperparams", "solved", "train_model", "train_topk",
    "tune", "write_report",
]
