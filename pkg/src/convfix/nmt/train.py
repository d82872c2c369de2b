"""Loss functions, optimizers and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import log_softmax
from .model import PAD_ID, Network

logger = logging.getLogger(__name__)

START_ID, END_ID = 1, 2
LABEL_SMOOTHING = 0.1

EncodedPair = tuple[Sequence[int], Sequence[int]]


class TrainingDiverged(RuntimeError):
    pass


def loss_and_grad(logits: np.ndarray, targets: np.ndarray, criterion: str = "default",
                  epsilon: float = LABEL_SMOOTHING) -> tuple[float, np.ndarray, int]:
    """Mean per-token loss over non-pad targets, its gradient w.r.t. logits, token count.

    ``smoothed`` moves ``epsilon`` of the target mass uniformly onto the
    other ``V - 1`` tokens.
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape[:-1]} and targets {targets.shape} lengths differ")
    if criterion not in ("default", "smoothed"):
        raise ValueError(f"unknown criterion {criterion!r}")
    vocab = logits.shape[-1]
    mask = targets != PAD_ID
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no non-pad target tokens")
    logp = log_softmax(logits.astype(np.float64) if logits.dtype != np.float64 else logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    nll = -picked
    q = np.zeros_like(logp)
    if criterion == "smoothed":
        off = epsilon / (vocab - 1)
        per_token = (1.0 - epsilon) * nll + off * (-logp.sum(axis=-1) - nll)
        q += off
        np.put_along_axis(q, targets[..., None], 1.0 - epsilon, axis=-1)
    else:
        per_token = nll
        np.put_along_axis(q, targets[..., None], 1.0, axis=-1)
    loss = float(per_token[mask].sum() / n)
    grad = (np.exp(logp) - q) * (mask[..., None] / n)
    return loss, grad.astype(logits.dtype), n


def loss(logits: np.ndarray, targets: np.ndarray, criterion: str = "default") -> float:
    return loss_and_grad(logits, targets, criterion)[0]


def make_batch(pairs: Sequence[EncodedPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of (src, trg) index lists into src, decoder input and target arrays."""
    s = max(len(src) for src, _ in pairs)
    t = max(len(trg) for _, trg in pairs) + 1
    src = np.full((len(pairs), s), PAD_ID, dtype=np.int64)
    tin = np.full((len(pairs), t), PAD_ID, dtype=np.int64)
    tout = np.full((len(pairs), t), PAD_ID, dtype=np.int64)
    for i, (a, b) in enumerate(pairs):
        if not len(a):
            raise ValueError("empty source sequence")
        src[i, : len(a)] = a
        tin[i, 0] = START_ID
        tin[i, 1 : len(b) + 1] = b
        tout[i, : len(b)] = b
        tout[i, len(b)] = END_ID
    return src, tin, tout


def batches(pairs: Sequence[EncodedPair], batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for lo in range(0, len(pairs), batch_size):
        yield make_batch([pairs[i] for i in order[lo : lo + batch_size]])


class Optimizer:
    """SGD with a momentum buffer, or its Nesterov variant (``nag``)."""

    def __init__(self, kind: str, learning_rate: float, momentum: float):
        if kind not in ("sgd", "nag"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        lr, mu = params_dtype_scalar(params, self.learning_rate), params_dtype_scalar(params, self.momentum)
        for name in sorted(params):
            g = grads[name]
            buf = self.buffers.get(name)
            buf = g.copy() if buf is None else mu * buf + g
            self.buffers[name] = buf
            update = buf if self.kind == "sgd" else g + mu * buf
            params[name] -= lr * update


def params_dtype_scalar(params, value):
    dtype = next(iter(params.values())).dtype
    return dtype.type(value)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale in place so the global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] *= grads[name].dtype.type(scale)
    return norm


@dataclass
class EpochStats:
    mean_loss: float
    perplexity: float
    tokens: int
    batches: int
    grad_norms: list[float] = field(default_factory=list)


def train_epoch(net: Network, data: Sequence[EncodedPair], optimizer: Optimizer,
                rng: np.random.Generator, batch_size: int = 32) -> EpochStats:
    """One pass of teacher-forced training; mutates ``net.params`` in place."""
    hp = net.hyper
    total = 0.0
    tokens = 0
    norms = []
    n_batches = 0
    for b, (src, tin, tout) in enumerate(batches(data, batch_size, rng)):
        logits, cache = net.forward(src, tin, train=True, rng=rng)
        value, dlogits, n = loss_and_grad(logits, tout, hp.criterion)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at batch {b}")
        grads = net.backward(cache, dlogits)
        norms.append(clip_gradients(grads, hp.clip_norm))
        optimizer.step(net.params, grads)
        if not all(np.isfinite(p).all() for p in net.params.values()):
            raise TrainingDiverged(f"non-finite weights after batch {b}")
        total += value * n
        tokens += n
        n_batches += 1
    mean = total / tokens
    return EpochStats(mean, math.exp(min(mean, 700.0)), tokens, n_batches, norms)


def mean_nll(net: Network, data: Sequence[EncodedPair], batch_size: int = 64) -> float:
    if not len(data):
        raise ValueError("cannot evaluate on empty data")
    total = 0.0
    tokens = 0
    for src, tin, tout in batches(data, batch_size):
        logits, _ = net.forward(src, tin)
        value, _, n = loss_and_grad(logits, tout, "default")
        total += value * n
        tokens += n
    return total / tokens


def perplexity(net: Network, data: Sequence[EncodedPair], batch_size: int = 64) -> float:
    """exp of the mean per-token negative log-likelihood (default criterion)."""
    nll = mean_nll(net, data, batch_size)
    return math.exp(nll) if nll < 700 else math.inf


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3


@dataclass
class FitResult:
    epochs: int
    best_perplexity: float
    history: list[dict]


class Trainer:
    """Owns one network, its optimizer state and its random stream."""

    def __init__(self, net: Network, config: TrainConfig | None = None):
        self.net = net
        self.config = config or TrainConfig()
        hp = net.hyper
        self.optimizer = Optimizer(hp.optimizer, hp.learning_rate, hp.momentum)
        self.rng = np.random.default_rng(hp.seed + 1_000_003)
        self.epoch = 0

    def train_epoch(self, data: Sequence[EncodedPair]) -> EpochStats:
        stats = train_epoch(self.net, data, self.optimizer, self.rng, self.config.batch_size)
        self.epoch += 1
        return stats

    def fit(self, train: Sequence[EncodedPair], valid: Sequence[EncodedPair] | None = None,
            max_epochs: int | None = None) -> FitResult:
        """Train until validation perplexity stops improving for ``patience`` epochs.

        Without validation data the training perplexity drives the stopping
        rule.  The best weights seen are restored at the end.
        """
        cfg = self.config
        max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
        best = math.inf
        best_params = {k: v.copy() for k, v in self.net.params.items()}
        stale = 0
        history = []
        for _ in range(max_epochs):
            stats = self.train_epoch(train)
            ppl = perplexity(self.net, valid) if valid else stats.perplexity
            history.append({"epoch": self.epoch, "train_loss": stats.mean_loss, "valid_perplexity": ppl})
            logger.info("epoch %d loss %.4f ppl %.4f", self.epoch, stats.mean_loss, ppl)
            if ppl < best:
                best, stale = ppl, 0
                best_params = {k: v.copy() for k, v in self.net.params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        self.net.params = best_params
        return FitResult(self.epoch, best, history)
