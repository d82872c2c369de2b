"""Train one small network on synthetic edits and look at its beam output."""

import time

import numpy as np

from convfix.beam import beam_decode
from convfix.nmt import HyperParams, Network, TrainConfig, Trainer, perplexity
from convfix.pipeline import attention_grid
from convfix.synthetic import generate

ds = generate(64, ["off_by_one", "null_guard"], seed=3)
print(len(ds.pairs), "pairs, vocabulary of", len(ds.vocab))
print("example:", " ".join(ds.pairs[1][0]), "=>", " ".join(ds.pairs[1][1]))

hyper = HyperParams(seed=3)
net = Network(hyper, len(ds.vocab), len(ds.vocab), max_positions=32)
print("parameters:", net.n_params)

trainer = Trainer(net, TrainConfig(batch_size=16))
start = time.perf_counter()
for epoch in range(1, 61):
    stats = trainer.train_epoch(ds.encoded())
    if epoch % 10 == 0:
        print(f"epoch {epoch:3d}  loss {stats.mean_loss:.4f}  perplexity {perplexity(net, ds.encoded()):.4f}")
print(f"trained in {time.perf_counter() - start:.1f}s")

src, trg = ds.encoded()[1]
results = beam_decode(net, src, beam_width=5, max_len=24)
print("\nbeam output for:", " ".join(ds.pairs[1][0]))
for r in results:
    flag = " (forced)" if r.forced else ""
    print(f"  {r.nll:8.4f}  {' '.join(ds.vocab.decode(r.tokens))}{flag}")

top = results[0].tokens
grid = attention_grid(net, src, top)[-1]
np.set_printoptions(precision=2, suppress=True)
print("\nlast-layer attention (rows: input tokens, columns: output tokens)")
print("columns:", ds.vocab.decode(top))
for tok, row in zip(ds.vocab.decode(src), grid):
    print(f"{tok:>8}", row)
