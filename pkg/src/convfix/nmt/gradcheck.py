"""Central finite-difference verification of every analytic gradient.

All checks run in float64.  Errors are normwise per tensor:
``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import layers as L
from .hyper import HyperParams
from .model import Network
from .train import loss_and_grad, make_batch

H = 1e-3


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0.0 else float(diff / scale)


def _check(f, inputs: dict[str, np.ndarray], analytic: dict[str, np.ndarray]) -> float:
    return max(rel_error(analytic[k], numeric_grad(f, inputs[k])) for k in analytic)


def check_embedding(rng: np.random.Generator) -> float:
    table = rng.normal(size=(7, 5))
    idx = rng.integers(0, 7, size=(2, 4))
    r = rng.normal(size=(2, 4, 5))
    f = lambda: float(np.sum(r * L.embedding_forward(table, idx)))
    return _check(f, {"table": table}, {"table": L.embedding_backward(r, idx, table.shape, table.dtype)})


def check_position_embedding(rng: np.random.Generator) -> float:
    pos = rng.normal(size=(10, 4))
    t = 6
    r = rng.normal(size=(3, t, 4))
    f = lambda: float(np.sum(r * pos[:t][None]))
    analytic = np.zeros_like(pos)
    analytic[:t] = r.sum(axis=0)
    return _check(f, {"pos": pos}, {"pos": analytic})


def _check_conv(rng, pad_left, pad_right, k=3):
    x = rng.normal(size=(2, 5, 3))
    w = rng.normal(size=(k, 3, 4))
    b = rng.normal(size=(4,))
    r = rng.normal(size=(2, 5, 4))
    f = lambda: float(np.sum(r * L.conv1d_forward(x, w, b, pad_left, pad_right)[0]))
    _, cache = L.conv1d_forward(x, w, b, pad_left, pad_right)
    dx, dw, db = L.conv1d_backward(r, w, cache)
    return _check(f, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db})


def check_encoder_conv(rng: np.random.Generator) -> float:
    return _check_conv(rng, 1, 1)


def check_causal_conv(rng: np.random.Generator) -> float:
    return _check_conv(rng, 2, 0)


def check_glu(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 3, 8))
    r = rng.normal(size=(2, 3, 4))
    f = lambda: float(np.sum(r * L.glu(x)))
    _, cache = L.glu_forward(x)
    return _check(f, {"x": x}, {"x": L.glu_backward(r, cache)})


def check_attention(rng: np.random.Generator) -> float:
    q = rng.normal(size=(2, 3, 4))
    k = rng.normal(size=(2, 5, 4))
    v = rng.normal(size=(2, 5, 4))
    mask = np.ones((2, 5), dtype=bool)
    mask[1, 3:] = False
    r = rng.normal(size=(2, 3, 4))
    f = lambda: float(np.sum(r * L.attention_forward(q, k, v, mask)[0]))
    _, cache = L.attention_forward(q, k, v, mask)
    dq, dk, dv = L.attention_backward(r, cache)
    return _check(f, {"q": q, "k": k, "v": v}, {"q": dq, "k": dk, "v": dv})


def check_output_projection(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 6))
    b = rng.normal(size=(6,))
    r = rng.normal(size=(2, 3, 6))
    f = lambda: float(np.sum(r * L.linear_forward(x, w, b)[0]))
    dx, dw, db = L.linear_backward(r, x, w)
    return _check(f, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db})


def _check_loss(rng, criterion):
    logits = rng.normal(size=(2, 4, 6))
    targets = rng.integers(1, 6, size=(2, 4))
    targets[1, 3] = 0  # a pad position
    f = lambda: loss_and_grad(logits, targets, criterion)[0]
    return _check(f, {"logits": logits}, {"logits": loss_and_grad(logits, targets, criterion)[1]})


def check_loss_default(rng: np.random.Generator) -> float:
    return _check_loss(rng, "default")


def check_loss_smoothed(rng: np.random.Generator) -> float:
    return _check_loss(rng, "smoothed")


LAYER_CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "embedding": check_embedding,
    "position_embedding": check_position_embedding,
    "encoder_conv": check_encoder_conv,
    "causal_conv": check_causal_conv,
    "glu": check_glu,
    "attention": check_attention,
    "output_projection": check_output_projection,
    "loss_default": check_loss_default,
    "loss_smoothed": check_loss_smoothed,
}


def tiny_network(seed: int = 0, criterion: str = "default", zero: bool = False) -> Network:
    hyper = HyperParams(
        src_embed_dim=6, trg_embed_dim=5, out_embed_dim=4,
        encoder_layers=((8, 3), (6, 1)), decoder_layers=((6, 2), (8, 3)),
        criterion=criterion, seed=seed,
    )
    net = Network(hyper, src_vocab_size=9, trg_vocab_size=8, max_positions=8, dtype=np.float64)
    if zero:
        for p in net.params.values():
            p[...] = 0.0
    return net


def tiny_batch(seed: int = 0):
    rng = np.random.default_rng(seed)
    pairs = [
        (list(rng.integers(3, 9, size=4)), list(rng.integers(3, 8, size=3))),
        (list(rng.integers(3, 9, size=2)), list(rng.integers(3, 8, size=4))),
    ]
    return make_batch(pairs)


def network_gradients(net: Network, batch, criterion: str | None = None):
    src, tin, tout = batch
    criterion = criterion or net.hyper.criterion
    logits, cache = net.forward(src, tin)
    _, dlogits, _ = loss_and_grad(logits, tout, criterion)
    return net.backward(cache, dlogits)


def check_network(net: Network, batch, h: float = H) -> dict[str, float]:
    """Per-tensor relative error of the full network gradient."""
    if net.dtype != np.float64:
        net = net.astype(np.float64)
    if net.n_params > 10_000:
        raise ValueError("finite differences are limited to networks with <= 10k parameters")
    src, tin, tout = batch
    analytic = network_gradients(net, batch)

    def f():
        return loss_and_grad(net.forward(src, tin)[0], tout, net.hyper.criterion)[0]

    return {name: rel_error(analytic[name], numeric_grad(f, net.params[name], h)) for name in sorted(net.params)}


def run_all(seed: int = 0) -> dict[str, float]:
    """Every layer in isolation plus two end-to-end networks (one per criterion)."""
    rng = np.random.default_rng(seed)
    report = {name: check(rng) for name, check in LAYER_CHECKS.items()}
    for criterion in ("default", "smoothed"):
        errs = check_network(tiny_network(seed, criterion), tiny_batch(seed))
        report[f"network_{criterion}"] = max(errs.values())
    return report
