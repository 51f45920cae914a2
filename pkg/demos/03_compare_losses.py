"""
One-hot versus CUI multi-label pre-training
===========================================

Train the same small model twice on a synthetic clinical corpus, once with
softmax cross-entropy and once with the multi-label BCE objective, then
compare how close the planted synonym pairs end up in the token table.

Pass a step count as the first argument (default 600; the acceptance run
uses 2000).
"""

import sys
import time

from cuimlm import LossMode, ModelConfig, TrainConfig, train_loop
from cuimlm.evaluation import neighbor_rank, synonym_similarity
from cuimlm.synthetic import make_synthetic
from cuimlm.tokenizer import build_vocab

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600

###############################################################################
# 2000 template sentences, 10 synonym pairs that share a CUI.
data = make_synthetic(2000, seed=0)
vocab = build_vocab(data.corpus)
print(f"{len(data.corpus)} sentences, vocabulary {len(vocab)}, pairs {data.pairs}")

model_cfg = ModelConfig(vocab_size=len(vocab), group_count=data.lexicon.group_count, max_seq_len=12)

###############################################################################
# Same seed, same batches, same masks: only the loss differs.
for mode in LossMode:
    start = time.perf_counter()
    losses = []
    ckpt = train_loop(data.corpus, data.lexicon, vocab, model_cfg,
                      TrainConfig(loss_mode=mode, total_steps=steps, seed=0),
                      metrics=lambda r: losses.append(r["loss"]))
    sim = synonym_similarity(data.pairs, ckpt.params, vocab, data.lexicon)
    ranks = [neighbor_rank(a, b, ckpt.params, vocab, data.lexicon) for a, b in data.pairs]
    print(f"{mode.value:>8}: loss {losses[0]:.3f} -> {losses[-1]:.3f}, mean pair cosine {sim:.4f}, "
          f"median neighbour rank {sorted(ranks)[len(ranks) // 2]} ({time.perf_counter() - start:.0f}s)")
