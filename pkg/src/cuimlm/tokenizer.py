"""Closed word-level vocabulary, sentence encoding, masking and MLM targets."""

from __future__ import annotations

import enum
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .lexicon import Lexicon

PAD, UNK, CLS, MASK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[MASK]")
NO_GROUP = -1


class TargetMode(enum.Enum):
    ONE_HOT = "one-hot"
    CUI_EXPANDED = "cui-expanded"


class Vocab:
    """Bijective token <-> id map with the four reserved ids up front."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens = list(RESERVED)
        self.index = {tok: i for i, tok in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    @property
    def words(self) -> list:
        """Non-reserved tokens in id order."""
        return self.tokens[len(RESERVED):]

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(tok + "\n" for tok in self.words)

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def tokenize(sentence: str) -> list:
    return sentence.lower().split()


def build_vocab(corpus: Iterable[str], min_freq: int = 1, max_size: int = 30000) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be >= {len(RESERVED)}")
    counts = Counter()
    for line in corpus:
        counts.update(tokenize(line))
    kept = [(tok, n) for tok, n in counts.items() if n >= min_freq and tok not in RESERVED]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocab([tok for tok, _ in kept[: max_size - len(RESERVED)]])


@dataclass(frozen=True)
class EncodedSentence:
    token_ids: tuple
    group_ids: tuple
    segment_ids: tuple
    attention_len: int

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class MaskingOutcome:
    corrupted_ids: tuple
    masked_positions: tuple
    original_ids: tuple


@dataclass(frozen=True)
class TargetMatrix:
    rows: np.ndarray  # [M, D] of {0, 1}
    mode: TargetMode

    def __len__(self) -> int:
        return self.rows.shape[0]


def encode(sentence: str, vocab: Vocab, lex: Lexicon, max_len: int) -> EncodedSentence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    words = tokenize(sentence)[: max_len - 1]
    ids = [CLS] + [vocab.id(w) for w in words]
    groups = [NO_GROUP]
    for w, i in zip(words, ids[1:]):
        g = lex.group_of(w) if i != UNK else None
        groups.append(NO_GROUP if g is None else g)
    n = len(ids)
    pad = max_len - n
    return EncodedSentence(
        token_ids=tuple(ids) + (PAD,) * pad,
        group_ids=tuple(groups) + (NO_GROUP,) * pad,
        segment_ids=(0,) * max_len,
        attention_len=n,
    )


def decode(enc: EncodedSentence, vocab: Vocab) -> str:
    return " ".join(vocab.tokens[i] for i in enc.token_ids[1:enc.attention_len])


def apply_masking(
    enc: EncodedSentence,
    rate: float,
    rng: np.random.Generator,
    corrupt_split: bool = False,
    vocab_size: Optional[int] = None,
) -> MaskingOutcome:
    """Select each real non-CLS position with probability ``rate`` and replace it by MASK.

    If nothing is selected, one eligible position is drawn uniformly so every
    sentence contributes to the loss. With ``corrupt_split`` the classic
    80/10/10 MASK/random/keep corruption is applied instead.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("masking rate must be in (0, 1)")
    eligible = np.arange(1, enc.attention_len)
    if eligible.size == 0:
        raise ValueError("sentence has no maskable positions")
    chosen = eligible[rng.random(eligible.size) < rate]
    if chosen.size == 0:
        chosen = eligible[[rng.integers(eligible.size)]]
    corrupted = list(enc.token_ids)
    if corrupt_split:
        if vocab_size is None or vocab_size <= len(RESERVED):
            raise ValueError("corrupt_split needs a vocab_size with non-reserved tokens")
        draws = rng.random(chosen.size)
        randoms = rng.integers(len(RESERVED), vocab_size, size=chosen.size)
        for pos, u, r in zip(chosen, draws, randoms):
            if u < 0.8:
                corrupted[pos] = MASK
            elif u < 0.9:
                corrupted[pos] = int(r)
    else:
        for pos in chosen:
            corrupted[pos] = MASK
    positions = tuple(int(p) for p in chosen)
    return MaskingOutcome(
        corrupted_ids=tuple(corrupted),
        masked_positions=positions,
        original_ids=tuple(enc.token_ids[p] for p in positions),
    )


def sibling_table(lex: Lexicon, vocab: Vocab) -> dict:
    """token id -> sorted tuple of in-vocab ids sharing a CUI with it (itself included)."""
    table = {}
    for word in lex.entries:
        if word not in vocab:
            continue
        table[vocab.index[word]] = tuple(sorted(vocab.index[s] for s in lex.siblings(word) if s in vocab))
    return table


def build_targets(
    outcome: MaskingOutcome,
    lex: Lexicon,
    vocab: Vocab,
    mode: TargetMode,
    siblings: Optional[dict] = None,
) -> TargetMatrix:
    """One {0,1} row per masked position: one-hot, or one-hot plus CUI siblings."""
    mode = TargetMode(mode)
    rows = np.zeros((len(outcome.original_ids), len(vocab)), dtype=np.float64)
    if mode is TargetMode.CUI_EXPANDED and siblings is None:
        siblings = sibling_table(lex, vocab)
    for r, tok in enumerate(outcome.original_ids):
        rows[r, tok] = 1.0
        if mode is TargetMode.CUI_EXPANDED:
            rows[r, list(siblings.get(tok, ()))] = 1.0
    return TargetMatrix(rows=rows, mode=mode)
