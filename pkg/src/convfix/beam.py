"""Beam search over a trained network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nmt.layers import log_softmax
from .nmt.model import EncoderState, Network

PAD_ID, START_ID, END_ID = 0, 1, 2
BANNED = (PAD_ID, START_ID)


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    finished: bool = False
    forced: bool = False


@dataclass(frozen=True)
class BeamResult:
    tokens: tuple[int, ...]
    nll: float
    forced: bool = False


def _next_logprobs(net: Network, enc: EncoderState, prefixes: np.ndarray) -> np.ndarray:
    logits, _, _ = net.decode(enc.repeat(len(prefixes)), prefixes)
    logp = log_softmax(logits[:, -1].astype(np.float64))
    logp[:, list(BANNED)] = -np.inf
    return logp


def _greedy_rollout(net: Network, enc: EncoderState, prefixes: np.ndarray, steps: int) -> np.ndarray:
    """Log-probability mass collected by ``steps`` greedy continuations of each prefix."""
    extra = np.zeros(len(prefixes))
    done = np.zeros(len(prefixes), dtype=bool)
    cur = prefixes
    for _ in range(steps):
        if cur.shape[1] >= net.max_positions:
            break
        logp = _next_logprobs(net, enc, cur)
        best = logp.argmax(axis=1)
        extra += np.where(done, 0.0, logp[np.arange(len(cur)), best])
        done |= best == END_ID
        cur = np.concatenate([cur, best[:, None]], axis=1)
    return extra


def beam_decode(
    net: Network,
    src: Sequence[int] | EncoderState,
    beam_width: int,
    max_len: int = 100,
    length_normalize: bool = False,
    lookahead: int = 0,
) -> list[BeamResult]:
    """Top ``beam_width`` output sequences ranked by negative log-likelihood.

    Every unfinished hypothesis is expanded with every allowed token and the
    best ``beam_width`` of finished + expanded hypotheses survive.  Decoding
    stops when all survivors emitted ``<END>`` or after ``max_len`` generated
    tokens, in which case the leftovers are returned with ``forced=True``.
    ``lookahead`` > 0 ranks candidates by their score plus a greedy rollout of
    that many steps; the reported NLL is always the exact sequence score.
    """
    if beam_width < 1:
        raise ValueError("beam width must be at least 1")
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    enc = src if isinstance(src, EncoderState) else net.encode_sequence(src)
    max_len = min(max_len, net.max_positions)

    def rank_key(h: Hypothesis):
        score = h.score / max(1, len(h.tokens) - 1) if length_normalize else h.score
        return (-score, h.tokens)

    beams = [Hypothesis([START_ID], 0.0)]
    for step in range(max_len):
        active = [h for h in beams if not h.finished]
        if not active:
            break
        pool = [h for h in beams if h.finished]
        prefixes = np.asarray([h.tokens for h in active], dtype=np.int64)
        logp = _next_logprobs(net, enc, prefixes)
        totals = np.asarray([h.score for h in active])[:, None] + logp
        flat = totals.ravel()
        finite = np.isfinite(flat)
        n_keep = min(beam_width, int(finite.sum()))
        if n_keep == 0:
            break
        # every candidate tied with the cut-off survives until the exact sort
        margin = n_keep if not (lookahead or length_normalize) else min(int(finite.sum()), 2 * n_keep)
        cut = np.partition(flat[finite], -margin)[-margin]
        last = step == max_len - 1
        for idx in np.nonzero(finite & (flat >= cut))[0]:
            row, tok = divmod(int(idx), logp.shape[1])
            ended = tok == END_ID
            pool.append(Hypothesis(active[row].tokens + [tok], float(flat[idx]),
                                   finished=ended or last, forced=last and not ended))
        if lookahead:
            fresh = [h for h in pool if not h.finished]
            bonus = {}
            if fresh:
                extra = _greedy_rollout(net, enc, np.asarray([h.tokens for h in fresh]), lookahead)
                bonus = {id(h): e for h, e in zip(fresh, extra)}
            pool.sort(key=lambda h: (-(h.score + bonus.get(id(h), 0.0)), h.tokens))
        else:
            pool.sort(key=rank_key)
        beams = pool[:beam_width]

    results = []
    for h in beams:
        toks = h.tokens[1:]
        if h.finished and not h.forced and toks and toks[-1] == END_ID:
            toks = toks[:-1]
        results.append(BeamResult(tuple(toks), -h.score, h.forced or not h.finished))
    if length_normalize:
        results.sort(key=lambda r: (r.nll / max(1, len(r.tokens) + 1), r.tokens))
    else:
        results.sort(key=lambda r: (r.nll, r.tokens))
    return results


def sequence_nll(net: Network, src: Sequence[int], tokens: Sequence[int], finished: bool = True) -> float:
    """Teacher-forced NLL of ``tokens`` (plus ``<END>`` when finished) given ``src``."""
    target = list(tokens) + ([END_ID] if finished else [])
    enc = net.encode_sequence(src)
    logits, _, _ = net.decode(enc, np.asarray([[START_ID] + target[:-1]], dtype=np.int64))
    logp = log_softmax(logits[0].astype(np.float64))
    return float(-sum(logp[i, t] for i, t in enumerate(target)))
