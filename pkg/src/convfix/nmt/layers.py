"""Forward/backward kernels for the convolutional encoder-decoder.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes the upstream gradient plus that cache.  Arrays are ``(batch, time,
channels)``; all kernels are dtype-preserving so the same code runs in
float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glu(x: np.ndarray) -> np.ndarray:
    """Gated linear unit over the last axis: first half times sigmoid(second half)."""
    if x.shape[-1] % 2:
        raise ValueError(f"GLU needs an even channel count, got {x.shape[-1]}")
    return glu_forward(x)[0]


def glu_forward(x):
    c = x.shape[-1] // 2
    a, b = x[..., :c], x[..., c:]
    gate = sigmoid(b)
    return a * gate, (a, gate)


def glu_backward(dout, cache):
    a, gate = cache
    da = dout * gate
    db = dout * a * gate * (1.0 - gate)
    return np.concatenate([da, db], axis=-1)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dout, x, w):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    return dout @ w.T, flat_x.T @ flat_d, flat_d.sum(axis=0)


def embedding_forward(table, idx):
    return table[idx]


def embedding_backward(dout, idx, shape, dtype):
    grad = np.zeros(shape, dtype=dtype)
    np.add.at(grad, idx.reshape(-1), dout.reshape(-1, shape[1]))
    return grad


def conv1d_forward(x, w, b, pad_left: int, pad_right: int):
    """Temporal convolution; ``w`` is (kernel, in_channels, out_channels)."""
    k, cin, cout = w.shape
    bsz, t, _ = x.shape
    xp = np.pad(x, ((0, 0), (pad_left, pad_right), (0, 0)))
    t_out = t + pad_left + pad_right - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (B, t_out, cin, k)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(bsz * t_out, k * cin)
    y = (cols @ w.reshape(k * cin, cout)).reshape(bsz, t_out, cout) + b
    return y, (cols, x.shape, pad_left, pad_right)


def conv1d_backward(dy, w, cache):
    cols, x_shape, pad_left, pad_right = cache
    k, cin, cout = w.shape
    bsz, t, _ = x_shape
    t_out = dy.shape[1]
    flat = dy.reshape(-1, cout)
    dw = (cols.T @ flat).reshape(k, cin, cout)
    db = flat.sum(axis=0)
    dcols = (flat @ w.reshape(k * cin, cout).T).reshape(bsz, t_out, k, cin)
    dxp = np.zeros((bsz, t + pad_left + pad_right, cin), dtype=dy.dtype)
    for j in range(k):
        dxp[:, j:j + t_out] += dcols[:, :, j]
    return dxp[:, pad_left:pad_left + t], dw, db


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def attention_forward(query, keys, values, key_mask=None):
    """Dot-product attention.

    query (B, T, E), keys/values (B, S, E); ``key_mask`` (B, S) is True on
    real positions.  Returns the context (B, T, E) and weights (B, T, S).
    """
    scores = query @ keys.transpose(0, 2, 1)
    if key_mask is not None:
        scores = np.where(key_mask[:, None, :], scores, -np.inf)
    weights = softmax(scores, axis=-1)
    return weights @ values, (query, keys, values, weights)


def attention_backward(dctx, cache):
    query, keys, values, weights = cache
    dvalues = weights.transpose(0, 2, 1) @ dctx
    dweights = dctx @ values.transpose(0, 2, 1)
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dquery = dscores @ keys
    dkeys = dscores.transpose(0, 2, 1) @ query
    return dquery, dkeys, dvalues


def dropout_mask(rng: np.random.Generator, shape, p: float, dtype):
    if p <= 0.0:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)
