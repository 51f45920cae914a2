"""Embedding analyses (neighbours, group silhouette, synonym similarity, 2-D
projection) and token-classification fine-tuning on top of a checkpoint."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO

import numpy as np

from . import tensor as T
from .lexicon import Lexicon
from .model import Batch, bind, forward, truncated_normal
from .seeding import derive_rng
from .tokenizer import RESERVED, TargetMatrix, TargetMode, Vocab, encode
from .training import OptimizerState, adam_update, ce_loss


class Space(enum.Enum):
    INPUT_TABLE = "input-table"
    AUGMENTED_INPUT = "augmented-input"


def word_vector(word: str, params: dict, vocab: Vocab, lexicon: Lexicon, space: Space) -> np.ndarray:
    """Token-table column, plus the group column of the word's group in the
    augmented space (words without a group keep the plain column)."""
    word = word.lower()
    if word not in vocab or vocab.index[word] < len(RESERVED):
        raise KeyError(f"{word!r} is not in the vocabulary")
    vec = params["token_table"][:, vocab.index[word]]
    if Space(space) is Space.AUGMENTED_INPUT:
        g = lexicon.group_of(word)
        if g is not None:
            vec = vec + params["group_table"][:, g]
    return vec


def word_vectors(words: Sequence[str], params, vocab, lexicon, space) -> np.ndarray:
    if not words:
        return np.zeros((0, params["token_table"].shape[0]))
    return np.stack([word_vector(w, params, vocab, lexicon, space) for w in words])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def cosine_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cos over rows, clipped to [0, 2], with an exact zero diagonal."""
    U = _unit_rows(np.asarray(X, dtype=np.float64))
    D = np.clip(1.0 - U @ U.T, 0.0, 2.0)
    np.fill_diagonal(D, 0.0)
    return D


# ---------------------------------------------------------------- neighbours


@dataclass
class NeighborReport:
    query: str
    neighbors: list  # [(word, similarity)], descending
    space: Space

    def to_dict(self) -> dict:
        return {"report": "neighbors", "query": self.query, "space": self.space.value,
                "neighbors": [[w, s] for w, s in self.neighbors]}


def nearest_neighbors(word: str, k: int, params: dict, vocab: Vocab, lexicon: Lexicon,
                      space: Space = Space.INPUT_TABLE) -> NeighborReport:
    if k < 1:
        raise ValueError("k must be >= 1")
    space = Space(space)
    query = word.lower()
    q = word_vector(query, params, vocab, lexicon, space)
    others = [w for w in vocab.words if w != query]
    U = _unit_rows(word_vectors(others, params, vocab, lexicon, space))
    qn = np.linalg.norm(q)
    sims = np.clip(U @ (q / qn if qn > 0 else q), -1.0, 1.0)
    order = sorted(range(len(others)), key=lambda i: (-sims[i], others[i]))[:k]
    return NeighborReport(query, [(others[i], float(sims[i])) for i in order], space)


def neighbor_rank(query: str, target: str, params, vocab, lexicon, space=Space.INPUT_TABLE) -> int:
    """1-based rank of ``target`` among the neighbours of ``query``."""
    report = nearest_neighbors(query, len(vocab.words) - 1, params, vocab, lexicon, space)
    for rank, (w, _) in enumerate(report.neighbors, start=1):
        if w == target.lower():
            return rank
    raise KeyError(target)


def synonym_similarity(pairs: Sequence[tuple], params: dict, vocab: Vocab, lexicon: Lexicon,
                       space: Space = Space.INPUT_TABLE) -> float:
    """Mean cosine similarity over word pairs."""
    if not pairs:
        raise ValueError("no word pairs given")
    sims = [cosine(word_vector(a, params, vocab, lexicon, space), word_vector(b, params, vocab, lexicon, space))
            for a, b in pairs]
    return math.fsum(sims) / len(sims)


# ---------------------------------------------------------------- clustering


def silhouette_samples(D: np.ndarray, labels: Sequence) -> np.ndarray:
    """Per-point silhouette from a precomputed distance matrix.

    Sums are exactly rounded (``math.fsum``), so the result does not depend on
    summation order. Every label must have at least two members.
    """
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    if any(len(m) < 2 for m in members.values()):
        raise ValueError("every cluster needs at least 2 members")
    out = np.empty(len(labels))
    for i, c in enumerate(labels.tolist()):
        own = members[c]
        a = math.fsum(D[i, j] for j in own if j != i) / (len(own) - 1)
        b = min(math.fsum(D[i, members[o]]) / len(members[o]) for o in classes if o != c)
        top = max(a, b)
        out[i] = 0.0 if top == 0.0 else (b - a) / top
    return out


@dataclass
class ClusterReport:
    space: Space
    overall: float
    per_group: dict  # group name -> mean silhouette
    sizes: dict  # group name -> member count (scored groups only)
    skipped: list = field(default_factory=list)  # groups with < 2 members

    def to_dict(self) -> dict:
        return {"report": "cluster", "space": self.space.value, "overall": self.overall,
                "per_group": self.per_group, "sizes": self.sizes, "skipped": self.skipped}


def clinical_words(vocab: Vocab, lexicon: Lexicon) -> list:
    """Vocabulary words that have a lexicon entry, in vocabulary order."""
    return [w for w in vocab.words if w in lexicon.entries]


def group_silhouette(params: dict, vocab: Vocab, lexicon: Lexicon, space: Space = Space.INPUT_TABLE) -> ClusterReport:
    """Cosine-distance silhouette of vocab-and-lexicon words labelled by semantic group."""
    space = Space(space)
    words = clinical_words(vocab, lexicon)
    by_group: dict = {}
    for w in words:
        by_group.setdefault(lexicon.group_of(w), []).append(w)
    kept = {g: ws for g, ws in by_group.items() if len(ws) >= 2}
    skipped = sorted(lexicon.group_name(g) for g, ws in by_group.items() if len(ws) < 2)
    if len(kept) < 2:
        raise ValueError("need at least 2 semantic groups with 2 or more vocabulary members")
    points = [w for g in sorted(kept) for w in kept[g]]
    labels = [lexicon.group_of(w) for w in points]
    s = silhouette_samples(cosine_distances(word_vectors(points, params, vocab, lexicon, space)), labels)
    labels = np.asarray(labels)
    per_group = {lexicon.group_name(g): math.fsum(s[labels == g]) / int((labels == g).sum()) for g in sorted(kept)}
    sizes = {lexicon.group_name(g): len(kept[g]) for g in sorted(kept)}
    return ClusterReport(space, math.fsum(s) / len(s), per_group, sizes, skipped)


# ---------------------------------------------------------------- projection


class Point(NamedTuple):
    label: object
    x: float
    y: float


def project_2d(vectors: np.ndarray, labels: Optional[Sequence] = None) -> list:
    """Top-two principal components of mean-centred rows.

    Each principal axis is oriented so its largest-magnitude loading is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("project_2d needs at least 3 vectors")
    if len(np.unique(X, axis=0)) < 2:
        raise ValueError("project_2d needs at least 2 distinct points")
    if labels is None:
        labels = range(X.shape[0])
    labels = list(labels)
    if len(labels) != X.shape[0]:
        raise ValueError("labels and vectors differ in length")
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2].copy()
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((1, X.shape[1]))])
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    coords = centered @ axes.T
    return [Point(lab, float(x), float(y)) for lab, (x, y) in zip(labels, coords)]


def write_projection_tsv(points: Iterable[Point], groups: Sequence[str], fh: TextIO) -> None:
    """``word<TAB>group<TAB>x<TAB>y`` lines."""
    for p, g in zip(points, groups):
        fh.write(f"{p.label}\t{g}\t{p.x!r}\t{p.y!r}\n")


# ---------------------------------------------------------------- fine-tuning


@dataclass
class TaggedCorpus:
    sentences: list  # list of token lists
    tags: list  # list of tag-id lists
    tag_set: tuple

    def __post_init__(self):
        if len(self.sentences) != len(self.tags):
            raise ValueError("sentences and tags differ in count")
        for i, (words, tags) in enumerate(zip(self.sentences, self.tags)):
            if len(words) != len(tags):
                raise ValueError(f"sentence {i}: {len(words)} tokens but {len(tags)} tags")
            for t in tags:
                if not 0 <= t < len(self.tag_set):
                    raise ValueError(f"sentence {i}: unseen tag id {t}")

    def __len__(self) -> int:
        return len(self.sentences)


def read_tagged(lines: Iterable[str], tag_set: Optional[Sequence[str]] = None) -> TaggedCorpus:
    """Parse ``word/TAG word/TAG ...`` lines. Tag ids follow first appearance
    unless ``tag_set`` fixes them, in which case unknown tags are an error."""
    fixed = tag_set is not None
    tags_seen = list(tag_set or ())
    index = {t: i for i, t in enumerate(tags_seen)}
    sentences, tags = [], []
    for line_no, line in enumerate(lines, start=1):
        items = line.split()
        if not items:
            continue
        words, ids = [], []
        for item in items:
            word, sep, tag = item.rpartition("/")
            if not sep or not word or not tag:
                raise ValueError(f"line {line_no}: token {item!r} is not word/TAG")
            if tag not in index:
                if fixed:
                    raise ValueError(f"line {line_no}: unseen tag {tag!r}")
                index[tag] = len(tags_seen)
                tags_seen.append(tag)
            words.append(word.lower())
            ids.append(index[tag])
        sentences.append(words)
        tags.append(ids)
    return TaggedCorpus(sentences, tags, tuple(tags_seen))


@dataclass
class NerHead:
    weight: np.ndarray  # [tag_count, d]
    bias: np.ndarray  # [tag_count]


@dataclass
class FinetuneResult:
    head: NerHead
    params: dict
    accuracy: float
    per_tag_f1: dict
    train_sentences: int
    test_sentences: int

    def to_dict(self) -> dict:
        return {"report": "finetune", "accuracy": self.accuracy, "per_tag_f1": self.per_tag_f1,
                "train_sentences": self.train_sentences, "test_sentences": self.test_sentences}


def _tag_batch(corpus: TaggedCorpus, idx: Sequence[int], vocab, lexicon, max_len: int):
    encoded = [encode(" ".join(corpus.sentences[i]), vocab, lexicon, max_len) for i in idx]
    labels = np.full((len(idx), max_len), -1, dtype=np.int64)
    for r, i in enumerate(idx):
        tags = corpus.tags[i][: max_len - 1]
        labels[r, 1:1 + len(tags)] = tags
    return Batch.from_encoded(encoded), labels


def _head_logits(p: dict, batch: Batch, labels: np.ndarray, cfg) -> T.Tensor:
    h = forward(batch, p, cfg, with_logits=False).final_hidden
    B, S, d = h.shape
    picked = T.gather_rows(T.reshape(h, (B * S, d)), np.flatnonzero(labels.ravel() >= 0))
    return picked @ T.transpose(p["head.weight"]) + p["head.bias"]


def token_f1(gold: np.ndarray, pred: np.ndarray, tag_set: Sequence[str]) -> dict:
    out = {}
    for t, name in enumerate(tag_set):
        tp = int(((pred == t) & (gold == t)).sum())
        n_pred, n_gold = int((pred == t).sum()), int((gold == t).sum())
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gold if n_gold else 0.0
        out[name] = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return out


def finetune_token_classifier(ckpt, tagged: TaggedCorpus, epochs: int, lr: float, lexicon: Lexicon,
                              batch_size: int = 16, seed: int = 0, holdout: float = 0.2,
                              init_std: float = 0.02) -> FinetuneResult:
    """Fine-tune encoder and a linear tag head jointly; score on a held-out split.

    Loss is softmax cross-entropy over tags at real, non-CLS positions.
    """
    if len(tagged) == 0:
        raise ValueError("tagged corpus is empty")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    cfg = ckpt.model_config
    vocab = ckpt.vocabulary()
    n_tags = len(tagged.tag_set)
    order = derive_rng(seed, "split").permutation(len(tagged))
    n_test = max(1, int(round(holdout * len(tagged)))) if len(tagged) > 1 else 0
    test_idx, train_idx = order[:n_test].tolist(), order[n_test:].tolist()
    if not train_idx:
        train_idx = test_idx

    params = {k: v.copy() for k, v in ckpt.params.items()}
    params["head.weight"] = truncated_normal(derive_rng(seed, "head-init"), (n_tags, cfg.hidden_dim), init_std)
    params["head.bias"] = np.zeros(n_tags)
    state = OptimizerState.zeros_like(params)

    for epoch in range(epochs):
        perm = derive_rng(seed, "finetune-shuffle", epoch).permutation(len(train_idx))
        for start in range(0, len(perm), batch_size):
            idx = [train_idx[j] for j in perm[start:start + batch_size]]
            batch, labels = _tag_batch(tagged, idx, vocab, lexicon, cfg.max_seq_len)
            gold = labels.ravel()[labels.ravel() >= 0]
            if gold.size == 0:
                continue
            rows = np.zeros((gold.size, n_tags))
            rows[np.arange(gold.size), gold] = 1.0
            tape = T.Tape()
            loss = ce_loss(_head_logits(bind(params, tape), batch, labels, cfg), TargetMatrix(rows, TargetMode.ONE_HOT))
            params, state = adam_update(params, T.backward(tape, loss), state, lr)

    eval_idx = test_idx or train_idx
    golds, preds = [], []
    p = bind(params)
    for start in range(0, len(eval_idx), batch_size):
        batch, labels = _tag_batch(tagged, eval_idx[start:start + batch_size], vocab, lexicon, cfg.max_seq_len)
        gold = labels.ravel()[labels.ravel() >= 0]
        if gold.size == 0:
            continue
        golds.append(gold)
        preds.append(_head_logits(p, batch, labels, cfg).value.argmax(axis=1))
    gold = np.concatenate(golds) if golds else np.zeros(0, dtype=np.int64)
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    accuracy = float((gold == pred).mean()) if gold.size else 0.0
    head = NerHead(params.pop("head.weight"), params.pop("head.bias"))
    return FinetuneResult(head, params, accuracy, token_f1(gold, pred, tagged.tag_set),
                          len(train_idx), len(test_idx))
