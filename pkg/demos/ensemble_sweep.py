"""Random search, top-3 training, and solved counts as the ensemble grows."""

from convfix.beam import beam_decode
from convfix.ensemble import SearchSpace, TrialData, merge_rank, solved, train_topk, tune
from convfix.nmt import TrainConfig
from convfix.synthetic import generate

space = SearchSpace(embed_dim=(8, 48), out_embed_dim=(8, 48), channels=(16, 32, 64), kernel_width=(1, 5),
                    layers=(1, 3), dropout=(0.0, 0.3), clip_norm=(0.1, 1.0), learning_rate=(0.05, 0.5),
                    momentum=(0.5, 0.99))

ds = generate(150, ["off_by_one", "null_guard", "swap_args"], seed=0)
enc = ds.encoded()
train, valid, test = enc[:60], enc[60:90], enc[90:]
data = TrialData(train, valid, len(ds.vocab), len(ds.vocab), max_positions=32, batch_size=8)

trials = tune(8, data, space, seed=0)
print("one-epoch tuning, ranked by validation perplexity")
for t in trials:
    h = t.hyper
    print(f"  trial {t.index}: ppl {t.perplexity:8.3f}  enc {len(h.encoder_layers)}x{h.encoder_layers[0]}  "
          f"dec {len(h.decoder_layers)}x{h.decoder_layers[0]}  lr {h.learning_rate:.3f} {h.optimizer}")

checkpoints = train_topk(trials, 3, data, TrainConfig(batch_size=8, max_epochs=40, patience=5))
nets = [c.to_network() for c in checkpoints]
for c in checkpoints:
    print(f"trial {c.metadata['trial']}: {c.metadata['epochs']} epochs, valid ppl {c.metadata['valid_perplexity']:.3f}")

outputs = [[[(r.tokens, r.nll) for r in beam_decode(n, s, 3, max_len=20) if not r.forced] for s, _ in test]
           for n in nets]

print(f"\nheld-out pairs solved (correct fix anywhere in the merged top-3 lists), out of {len(test)}")
for m in range(len(nets)):
    print(f"  model {m} alone: {sum(solved(merge_rank([outputs[m][i]]), test[i][1]) for i in range(len(test)))}")
for k in range(1, len(nets) + 1):
    n = sum(solved(merge_rank([outputs[m][i] for m in range(k)]), test[i][1]) for i in range(len(test)))
    print(f"  ensemble k={k}: {n}")
