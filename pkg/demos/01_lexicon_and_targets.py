"""
Lexicon, encoding and multi-label targets
=========================================

Parse a small concept lexicon, encode a sentence with its semantic groups,
mask it and compare one-hot targets with CUI-expanded targets.
"""

import numpy as np

from cuimlm import load_lexicon
from cuimlm.tokenizer import TargetMode, apply_masking, build_targets, build_vocab, decode, encode

###############################################################################
# A lexicon line is ``word<TAB>CUI[,CUI...]<TAB>GROUP``. Words that share a
# CUI are siblings.
lexicon = load_lexicon(
    "lungs\tC0024109\tANATOMY\n"
    "lung\tC0024109\tANATOMY\n"
    "pulmonary\tC0024109\tANATOMY\n"
    "kidney\tC0022646\tANATOMY\n"
    "ren\tC0022646\tANATOMY\n"
    "mass\tC0577559\tDISORDER\n"
    "lump\tC0577559\tDISORDER\n"
)
print("groups:", [g.name for g in lexicon.groups])
print("siblings of lungs:", sorted(lexicon.siblings("lungs")))

###############################################################################
# Encoding prepends [CLS], pads to ``max_len`` and attaches each word's group.
corpus = ["the lungs are clear", "a lump near the kidney", "pulmonary mass seen", "lung and ren fine"]
vocab = build_vocab(corpus)
enc = encode("the lungs are clear", vocab, lexicon, max_len=8)
print("tokens:", enc.token_ids)
print("groups:", enc.group_ids)
print("decoded:", decode(enc, vocab))

###############################################################################
# Mask at a high rate so something is always selected, then build both target
# kinds. The CUI-expanded row for a masked "lungs" also lights up "lung" and
# "pulmonary".
outcome = apply_masking(enc, 0.5, np.random.default_rng(3))
for mode in TargetMode:
    rows = build_targets(outcome, lexicon, vocab, mode).rows
    for pos, row in zip(outcome.masked_positions, rows):
        print(f"{mode.value:>13} pos {pos}: {[vocab.tokens[i] for i in np.flatnonzero(row)]}")
