"""Convolutional encoder-decoder with multi-step attention.

Layout of one forward pass (shapes for batch B, source S, target T):

* encoder: token + position embeddings -> input projection -> stack of
  same-padded convolutions, each followed by a GLU and a residual
  connection scaled by sqrt(0.5) -> output projection ``z`` (B, S, src_embed).
  Attention values are ``(z + embeddings) * sqrt(0.5)``.
* decoder: token + position embeddings -> input projection -> stack of
  causal (left-padded) convolutions + GLU.  After every layer the GLU output
  queries the encoder (dot product against ``z``), the resulting context is
  projected back and mixed into the stream, then the residual is added.
* generation: output projection of the final decoder state, then a linear
  map to target-vocabulary logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .hyper import HyperParams

PAD_ID = 0
SQRT_HALF = math.sqrt(0.5)


@dataclass
class EncoderState:
    """Encoder outputs for a batch: ``z`` keys, ``v`` values, ``mask`` of real positions."""

    z: np.ndarray
    v: np.ndarray
    mask: np.ndarray

    @property
    def e_out(self) -> np.ndarray:
        return self.z

    def repeat(self, n: int) -> "EncoderState":
        """View of a single-sequence state broadcast to ``n`` rows."""
        if self.z.shape[0] != 1:
            raise ValueError("repeat() expects a single-sequence state")
        return EncoderState(
            np.broadcast_to(self.z, (n,) + self.z.shape[1:]),
            np.broadcast_to(self.v, (n,) + self.v.shape[1:]),
            np.broadcast_to(self.mask, (n,) + self.mask.shape[1:]),
        )


def param_shapes(hyper: HyperParams, src_vocab: int, trg_vocab: int, max_positions: int) -> dict[str, tuple[int, ...]]:
    es, et, eo = hyper.src_embed_dim, hyper.trg_embed_dim, hyper.out_embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "enc.embed": (src_vocab, es),
        "enc.pos": (max_positions, es),
        "enc.in.w": (es, hyper.encoder_layers[0][0]),
        "enc.in.b": (hyper.encoder_layers[0][0],),
    }
    cin = hyper.encoder_layers[0][0]
    for i, (cout, k) in enumerate(hyper.encoder_layers):
        if cin != cout:
            shapes[f"enc.res{i}.w"] = (cin, cout)
        shapes[f"enc.conv{i}.w"] = (k, cin, 2 * cout)
        shapes[f"enc.conv{i}.b"] = (2 * cout,)
        cin = cout
    shapes["enc.out.w"] = (cin, es)
    shapes["enc.out.b"] = (es,)

    shapes["dec.embed"] = (trg_vocab, et)
    shapes["dec.pos"] = (max_positions, et)
    shapes["dec.in.w"] = (et, hyper.decoder_layers[0][0])
    shapes["dec.in.b"] = (hyper.decoder_layers[0][0],)
    cin = hyper.decoder_layers[0][0]
    for i, (cout, k) in enumerate(hyper.decoder_layers):
        if cin != cout:
            shapes[f"dec.res{i}.w"] = (cin, cout)
        shapes[f"dec.conv{i}.w"] = (k, cin, 2 * cout)
        shapes[f"dec.conv{i}.b"] = (2 * cout,)
        shapes[f"dec.att{i}.q.w"] = (cout, es)
        shapes[f"dec.att{i}.q.b"] = (es,)
        shapes[f"dec.att{i}.g.w"] = (et, es)
        shapes[f"dec.att{i}.o.w"] = (es, cout)
        shapes[f"dec.att{i}.o.b"] = (cout,)
        cin = cout
    shapes["dec.out.w"] = (cin, eo)
    shapes["dec.out.b"] = (eo,)
    shapes["gen.w"] = (eo, trg_vocab)
    shapes["gen.b"] = (trg_vocab,)
    return shapes


def init_params(shapes: dict[str, tuple[int, ...]], seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform init with variance 1/fan_in; embeddings std 0.1; zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".b"):
            arr = np.zeros(shape)
        elif name.endswith((".embed", ".pos")):
            arr = rng.uniform(-0.1 * math.sqrt(3), 0.1 * math.sqrt(3), size=shape)
            if name.endswith(".embed"):
                arr[PAD_ID] = 0.0
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = math.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = arr.astype(dtype)
    return params


class Network:
    def __init__(self, hyper: HyperParams, src_vocab_size: int, trg_vocab_size: int,
                 max_positions: int = 256, params: dict[str, np.ndarray] | None = None,
                 dtype=np.float32):
        self.hyper = hyper
        self.src_vocab_size = src_vocab_size
        self.trg_vocab_size = trg_vocab_size
        self.max_positions = max_positions
        self.dtype = np.dtype(dtype)
        shapes = self.shapes()
        if params is None:
            params = init_params(shapes, hyper.seed, self.dtype)
        else:
            if set(params) != set(shapes):
                missing = sorted(set(shapes) ^ set(params))
                raise ValueError(f"parameter names do not match hyper-parameters: {missing[:5]}")
            for name, shape in shapes.items():
                if params[name].shape != shape:
                    raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
            params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        self.params = params

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return param_shapes(self.hyper, self.src_vocab_size, self.trg_vocab_size, self.max_positions)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "Network":
        return Network(self.hyper, self.src_vocab_size, self.trg_vocab_size, self.max_positions,
                       {k: v.astype(dtype) for k, v in self.params.items()}, dtype)

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    # -- encoder ------------------------------------------------------------

    def encode(self, src: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        p, hp, dt = self.params, self.hyper, self.dtype
        src = np.asarray(src)
        if src.ndim != 2 or src.shape[1] < 1:
            raise ValueError("source batch must be (batch, length>=1)")
        if src.min() < 0 or src.max() >= self.src_vocab_size:
            raise IndexError(f"source index out of range [0, {self.src_vocab_size})")
        bsz, s = src.shape
        if s > self.max_positions:
            raise ValueError(f"source length {s} exceeds max_positions {self.max_positions}")
        drop = hp.dropout if train else 0.0
        mask = src != PAD_ID
        fmask = mask[..., None].astype(dt)

        emb = (L.embedding_forward(p["enc.embed"], src) + p["enc.pos"][:s]) * fmask
        emb_drop = L.dropout_mask(rng, emb.shape, drop, dt) if drop else None
        e = emb * emb_drop if emb_drop is not None else emb
        x, _ = L.linear_forward(e, p["enc.in.w"], p["enc.in.b"])
        x = x * fmask
        cache = {"src": src, "fmask": fmask, "proj_in": e, "emb_drop": emb_drop, "layers": []}
        for i, (cout, k) in enumerate(hp.encoder_layers):
            lc = {"x": x}
            res = x @ p[f"enc.res{i}.w"] if f"enc.res{i}.w" in p else x
            dm = L.dropout_mask(rng, x.shape, drop, dt) if drop else None
            xin = x * dm if dm is not None else x
            y, lc["conv"] = L.conv1d_forward(xin, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], (k - 1) // 2, (k - 1) // 2)
            g, lc["glu"] = L.glu_forward(y)
            x = (g + res) * dt.type(SQRT_HALF) * fmask
            lc["drop"] = dm
            cache["layers"].append(lc)
        cache["x_last"] = x
        z, _ = L.linear_forward(x, p["enc.out.w"], p["enc.out.b"])
        z = z * fmask
        v = (z + e) * dt.type(SQRT_HALF)
        return EncoderState(z, v, mask), cache

    def encode_backward(self, dz, dv, cache, grads):
        p, hp, dt = self.params, self.hyper, self.dtype
        fmask = cache["fmask"]
        dz = (dz + dv * dt.type(SQRT_HALF)) * fmask
        de = dv * dt.type(SQRT_HALF)
        dx, grads["enc.out.w"], grads["enc.out.b"] = L.linear_backward(dz, cache["x_last"], p["enc.out.w"])
        for i in reversed(range(len(hp.encoder_layers))):
            lc = cache["layers"][i]
            dx = dx * fmask * dt.type(SQRT_HALF)
            dres = dx
            dy = L.glu_backward(dx, lc["glu"])
            dxin, grads[f"enc.conv{i}.w"], grads[f"enc.conv{i}.b"] = L.conv1d_backward(dy, p[f"enc.conv{i}.w"], lc["conv"])
            if lc["drop"] is not None:
                dxin = dxin * lc["drop"]
            if f"enc.res{i}.w" in p:
                flat_x = lc["x"].reshape(-1, lc["x"].shape[-1])
                grads[f"enc.res{i}.w"] = flat_x.T @ dres.reshape(-1, dres.shape[-1])
                dres = dres @ p[f"enc.res{i}.w"].T
            dx = dxin + dres
        dx = dx * fmask
        de_in, grads["enc.in.w"], grads["enc.in.b"] = L.linear_backward(dx, cache["proj_in"], p["enc.in.w"])
        de = de + de_in
        if cache["emb_drop"] is not None:
            de = de * cache["emb_drop"]
        de = de * fmask
        src = cache["src"]
        grads["enc.embed"] = L.embedding_backward(de, src, p["enc.embed"].shape, dt)
        grads["enc.embed"][PAD_ID] = 0.0
        gpos = np.zeros_like(p["enc.pos"])
        gpos[: src.shape[1]] = de.sum(axis=0)
        grads["enc.pos"] = gpos

    # -- decoder ------------------------------------------------------------

    def decode(self, enc: EncoderState, tgt_in: np.ndarray, train: bool = False,
               rng: np.random.Generator | None = None):
        """Logits (B, T, V) and one attention array (B, T, S) per decoder layer."""
        p, hp, dt = self.params, self.hyper, self.dtype
        tgt_in = np.asarray(tgt_in)
        if tgt_in.ndim != 2 or tgt_in.shape[1] < 1:
            raise ValueError("decoder prefix must be (batch, length>=1)")
        if tgt_in.min() < 0 or tgt_in.max() >= self.trg_vocab_size:
            raise IndexError(f"target index out of range [0, {self.trg_vocab_size})")
        bsz, t = tgt_in.shape
        if t > self.max_positions:
            raise ValueError(f"target length {t} exceeds max_positions {self.max_positions}")
        drop = hp.dropout if train else 0.0
        half = dt.type(SQRT_HALF)

        gemb = L.embedding_forward(p["dec.embed"], tgt_in) + p["dec.pos"][:t]
        gdrop = L.dropout_mask(rng, gemb.shape, drop, dt) if drop else None
        g = gemb * gdrop if gdrop is not None else gemb
        x, _ = L.linear_forward(g, p["dec.in.w"], p["dec.in.b"])
        cache = {"tgt": tgt_in, "g": g, "gdrop": gdrop, "enc": enc, "layers": []}
        attns = []
        for i, (cout, k) in enumerate(hp.decoder_layers):
            lc = {"x": x}
            res = x @ p[f"dec.res{i}.w"] if f"dec.res{i}.w" in p else x
            dm = L.dropout_mask(rng, x.shape, drop, dt) if drop else None
            xin = x * dm if dm is not None else x
            y, lc["conv"] = L.conv1d_forward(xin, p[f"dec.conv{i}.w"], p[f"dec.conv{i}.b"], k - 1, 0)
            h, lc["glu"] = L.glu_forward(y)
            q = (h @ p[f"dec.att{i}.q.w"] + p[f"dec.att{i}.q.b"] + g @ p[f"dec.att{i}.g.w"]) * half
            ctx, lc["att"] = L.attention_forward(q, enc.z, enc.v, enc.mask)
            co = ctx @ p[f"dec.att{i}.o.w"] + p[f"dec.att{i}.o.b"]
            x = ((h + co) * half + res) * half
            lc.update(h=h, ctx=ctx, drop=dm)
            cache["layers"].append(lc)
            attns.append(lc["att"][3])
        cache["x_last"] = x
        o, _ = L.linear_forward(x, p["dec.out.w"], p["dec.out.b"])
        odrop = L.dropout_mask(rng, o.shape, drop, dt) if drop else None
        if odrop is not None:
            o = o * odrop
        cache["o"], cache["odrop"] = o, odrop
        logits = o @ p["gen.w"] + p["gen.b"]
        return logits, attns, cache

    def decode_backward(self, dlogits, cache, grads):
        """Accumulate decoder grads; returns (dz, dv) for the encoder."""
        p, hp, dt = self.params, self.hyper, self.dtype
        half = dt.type(SQRT_HALF)
        enc = cache["enc"]
        do, grads["gen.w"], grads["gen.b"] = L.linear_backward(dlogits, cache["o"], p["gen.w"])
        if cache["odrop"] is not None:
            do = do * cache["odrop"]
        dx, grads["dec.out.w"], grads["dec.out.b"] = L.linear_backward(do, cache["x_last"], p["dec.out.w"])
        dz = np.zeros(enc.z.shape, dtype=dt)
        dv = np.zeros(enc.v.shape, dtype=dt)
        dg = np.zeros_like(cache["g"])
        g = cache["g"]
        flat_g = g.reshape(-1, g.shape[-1])
        for i in reversed(range(len(hp.decoder_layers))):
            lc = cache["layers"][i]
            dres = dx * half
            dh = dx * half * half
            dco = dh
            dctx, grads[f"dec.att{i}.o.w"], grads[f"dec.att{i}.o.b"] = L.linear_backward(dco, lc["ctx"], p[f"dec.att{i}.o.w"])
            dq, dzi, dvi = L.attention_backward(dctx, lc["att"])
            dz += dzi
            dv += dvi
            dq = dq * half
            dh_q, grads[f"dec.att{i}.q.w"], grads[f"dec.att{i}.q.b"] = L.linear_backward(dq, lc["h"], p[f"dec.att{i}.q.w"])
            grads[f"dec.att{i}.g.w"] = flat_g.T @ dq.reshape(-1, dq.shape[-1])
            dg += dq @ p[f"dec.att{i}.g.w"].T
            dh = dh + dh_q
            dy = L.glu_backward(dh, lc["glu"])
            dxin, grads[f"dec.conv{i}.w"], grads[f"dec.conv{i}.b"] = L.conv1d_backward(dy, p[f"dec.conv{i}.w"], lc["conv"])
            if lc["drop"] is not None:
                dxin = dxin * lc["drop"]
            if f"dec.res{i}.w" in p:
                flat_x = lc["x"].reshape(-1, lc["x"].shape[-1])
                grads[f"dec.res{i}.w"] = flat_x.T @ dres.reshape(-1, dres.shape[-1])
                dres = dres @ p[f"dec.res{i}.w"].T
            dx = dxin + dres
        dg_in, grads["dec.in.w"], grads["dec.in.b"] = L.linear_backward(dx, g, p["dec.in.w"])
        dg = dg + dg_in
        if cache["gdrop"] is not None:
            dg = dg * cache["gdrop"]
        tgt = cache["tgt"]
        grads["dec.embed"] = L.embedding_backward(dg, tgt, p["dec.embed"].shape, dt)
        grads["dec.embed"][PAD_ID] = 0.0
        gpos = np.zeros_like(p["dec.pos"])
        gpos[: tgt.shape[1]] = dg.sum(axis=0)
        grads["dec.pos"] = gpos
        return dz, dv

    # -- whole network ------------------------------------------------------

    def forward(self, src, tgt_in, train: bool = False, rng: np.random.Generator | None = None):
        enc, enc_cache = self.encode(src, train, rng)
        logits, attns, dec_cache = self.decode(enc, tgt_in, train, rng)
        return logits, {"enc": enc_cache, "dec": dec_cache, "attn": attns}

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        dz, dv = self.decode_backward(dlogits, cache["dec"], grads)
        self.encode_backward(dz, dv, cache["enc"], grads)
        for name, param in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(param)
        return grads

    # -- single-sequence inference helpers -----------------------------------

    def encode_sequence(self, src_indices) -> EncoderState:
        enc, _ = self.encode(np.asarray([list(src_indices)], dtype=np.int64))
        return enc

    def decode_step(self, prefix_indices, enc: EncoderState):
        """Logits for the token after ``prefix_indices`` and per-layer attention maps.

        Attention maps are oriented (source_len, prefix_len): rows are input
        tokens, columns are generated positions.
        """
        prefix = list(prefix_indices)
        if not prefix:
            raise ValueError("decoder prefix must not be empty (start with <START>)")
        logits, attns, _ = self.decode(enc, np.asarray([prefix], dtype=np.int64))
        return logits[0, -1], [a[0].T for a in attns]
