"""
Neighbours, group clustering and a 2-D projection
=================================================

Train briefly with semantic-group input embeddings, then inspect the
result: nearest neighbours of a few words, silhouette of the clinical words
grouped by semantic group in both spaces, and a PCA projection written as TSV.
"""

import sys

from cuimlm import ModelConfig, TrainConfig, train_loop
from cuimlm.evaluation import (
    Space,
    clinical_words,
    group_silhouette,
    nearest_neighbors,
    project_2d,
    word_vectors,
    write_projection_tsv,
)
from cuimlm.synthetic import make_synthetic
from cuimlm.tokenizer import build_vocab

data = make_synthetic(2000, seed=0)
vocab = build_vocab(data.corpus)
cfg = ModelConfig(vocab_size=len(vocab), group_count=data.lexicon.group_count, max_seq_len=12)
ckpt = train_loop(data.corpus, data.lexicon, vocab, cfg, TrainConfig(total_steps=1000, seed=1))

###############################################################################
# Nearest neighbours by cosine similarity in the token table.
for word in ("kidney", "fever", "aspirin"):
    report = nearest_neighbors(word, 4, ckpt.params, vocab, data.lexicon)
    print(word, "->", ", ".join(f"{w} ({s:.2f})" for w, s in report.neighbors))

###############################################################################
# Adding the group column pulls each group together.
for space in Space:
    rep = group_silhouette(ckpt.params, vocab, data.lexicon, space)
    groups = ", ".join(f"{g} {s:.2f}" for g, s in rep.per_group.items())
    print(f"silhouette {space.value:>15}: {rep.overall:.3f}  ({groups})")

###############################################################################
# word, group, x, y lines, ready for any plotting tool.
words = clinical_words(vocab, data.lexicon)
points = project_2d(word_vectors(words, ckpt.params, vocab, data.lexicon, Space.AUGMENTED_INPUT), words)
groups = [data.lexicon.group_name(data.lexicon.group_of(w)) for w in words]
write_projection_tsv(points[:8], groups[:8], sys.stdout)
