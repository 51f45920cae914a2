import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuimlm.lexicon import Lexicon
from cuimlm.tokenizer import (
    CLS,
    MASK,
    NO_GROUP,
    PAD,
    UNK,
    TargetMode,
    Vocab,
    apply_masking,
    build_targets,
    build_vocab,
    decode,
    encode,
)


def test_build_vocab_frequency_order():
    vocab = build_vocab(["a b a"], min_freq=1)
    assert vocab.index["a"] == 4 and vocab.index["b"] == 5


def test_build_vocab_min_freq():
    assert build_vocab(["a b a"], min_freq=2).words == ["a"]


def test_build_vocab_empty():
    assert len(build_vocab([])) == 4


def test_build_vocab_ties_and_truncation():
    vocab = build_vocab(["c b a d d"], max_size=6)
    assert vocab.words == ["d", "a"]


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(["the lungs are clear", "the kidney"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == vocab.tokens[4]
    assert Vocab.load(path) == vocab


def test_encode_groups(fixture_lexicon):
    vocab = build_vocab(["chest cavity is clear"])
    enc = encode("Chest cavity is clear", vocab, fixture_lexicon, max_len=8)
    anatomy = fixture_lexicon.group_id("ANATOMY")
    assert enc.token_ids[0] == CLS
    assert enc.group_ids == (NO_GROUP, anatomy, anatomy, NO_GROUP, NO_GROUP, NO_GROUP, NO_GROUP, NO_GROUP)
    assert enc.segment_ids == (0,) * 8
    assert enc.attention_len == 5
    assert enc.token_ids[5:] == (PAD,) * 3


def test_encode_unknown_words(fixture_lexicon):
    vocab = build_vocab(["something else"])
    enc = encode("lungs kidney", vocab, fixture_lexicon, max_len=4)
    assert enc.token_ids[1:3] == (UNK, UNK)
    assert set(enc.group_ids) == {NO_GROUP}


def test_encode_lexicon_word(fixture_lexicon):
    vocab = build_vocab(["lungs"])
    enc = encode("lungs", vocab, fixture_lexicon, max_len=3)
    assert enc.group_ids[1] == fixture_lexicon.group_id("ANATOMY")


def test_encode_truncates():
    vocab = build_vocab(["a b c d e"])
    enc = encode("a b c d e", vocab, Lexicon(), max_len=3)
    assert enc.token_ids == (CLS, vocab.id("a"), vocab.id("b"))
    assert enc.attention_len == 3


def test_encode_idempotent_on_in_vocab(fixture_lexicon):
    vocab = build_vocab(["the lungs and the kidney are fine"])
    enc = encode("the lungs and the kidney", vocab, fixture_lexicon, 10)
    assert encode(decode(enc, vocab), vocab, fixture_lexicon, 10) == enc


def _eligible_sentence(n, max_len=None):
    vocab = build_vocab([" ".join(f"w{i}" for i in range(n))])
    return encode(" ".join(f"w{i}" for i in range(n)), vocab, Lexicon(), max_len or n + 1)


def test_masking_rate_concentrates():
    enc = _eligible_sentence(10_000)
    out = apply_masking(enc, 0.15, np.random.default_rng(7))
    frac = len(out.masked_positions) / 10_000
    assert 0.14 <= frac <= 0.16


def test_masking_fallback_single_position():
    enc = _eligible_sentence(1, max_len=4)
    out = apply_masking(enc, 1e-9, np.random.default_rng(0))
    assert out.masked_positions == (1,)
    assert out.corrupted_ids[1] == MASK


def test_masking_deterministic():
    enc = _eligible_sentence(40)
    a = apply_masking(enc, 0.3, np.random.default_rng(5))
    b = apply_masking(enc, 0.3, np.random.default_rng(5))
    assert a == b


def test_masking_errors():
    vocab = build_vocab(["x"])
    enc = encode("", vocab, Lexicon(), 4)
    with pytest.raises(ValueError, match="no maskable"):
        apply_masking(enc, 0.15, np.random.default_rng(0))
    with pytest.raises(ValueError):
        apply_masking(_eligible_sentence(3), 1.0, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 20), pad=st.integers(0, 5), rate=st.floats(0.01, 0.99), seed=st.integers(0, 10_000))
def test_masking_invariants(n, pad, rate, seed):
    enc = _eligible_sentence(n, max_len=n + 1 + pad)
    out = apply_masking(enc, rate, np.random.default_rng(seed))
    pos = out.masked_positions
    assert list(pos) == sorted(set(pos)) and len(pos) >= 1
    assert all(1 <= p < enc.attention_len for p in pos)
    for i, (orig, new) in enumerate(zip(enc.token_ids, out.corrupted_ids)):
        assert new == (MASK if i in pos else orig)
    assert out.original_ids == tuple(enc.token_ids[p] for p in pos)


def test_corrupt_split_keeps_some_tokens():
    enc = _eligible_sentence(5000)
    out = apply_masking(enc, 0.5, np.random.default_rng(3), corrupt_split=True, vocab_size=5004)
    changed = [enc.token_ids[p] != out.corrupted_ids[p] for p in out.masked_positions]
    masked = [out.corrupted_ids[p] == MASK for p in out.masked_positions]
    assert 0.75 < np.mean(masked) < 0.85
    assert np.mean(changed) < 1.0


def _outcome_for(words, vocab):
    ids = tuple(vocab.index[w] for w in words)
    from cuimlm.tokenizer import MaskingOutcome
    return MaskingOutcome(corrupted_ids=(), masked_positions=tuple(range(len(ids))), original_ids=ids)


def test_targets_cui_expanded_lungs(fixture_lexicon):
    vocab = build_vocab(["lungs lung pulmonary heart the"])
    t = build_targets(_outcome_for(["lungs"], vocab), fixture_lexicon, vocab, TargetMode.CUI_EXPANDED)
    assert set(np.flatnonzero(t.rows[0])) == {vocab.index[w] for w in ("lungs", "lung", "pulmonary")}


def test_targets_non_lexicon_word_is_one_hot(fixture_lexicon):
    vocab = build_vocab(["lungs the"])
    t = build_targets(_outcome_for(["the"], vocab), fixture_lexicon, vocab, TargetMode.CUI_EXPANDED)
    assert np.flatnonzero(t.rows[0]).tolist() == [vocab.index["the"]]


def test_targets_sibling_outside_vocab(fixture_lexicon):
    vocab = build_vocab(["kidney liver"])
    t = build_targets(_outcome_for(["kidney"], vocab), fixture_lexicon, vocab, TargetMode.CUI_EXPANDED)
    assert np.flatnonzero(t.rows[0]).tolist() == [vocab.index["kidney"]]


def test_targets_one_hot_mode(fixture_lexicon):
    vocab = build_vocab(["lungs lung pulmonary"])
    t = build_targets(_outcome_for(["lungs", "lung"], vocab), fixture_lexicon, vocab, TargetMode.ONE_HOT)
    assert (t.rows.sum(axis=1) == 1).all()
    assert t.rows[1, vocab.index["lung"]] == 1


def test_expanded_dominates_one_hot(fixture_lexicon):
    vocab = build_vocab(["lungs lung pulmonary kidney mass lump the of heart"])
    words = ["lungs", "kidney", "mass", "the", "heart"]
    one = build_targets(_outcome_for(words, vocab), fixture_lexicon, vocab, TargetMode.ONE_HOT).rows
    cui = build_targets(_outcome_for(words, vocab), fixture_lexicon, vocab, TargetMode.CUI_EXPANDED).rows
    assert (cui >= one).all()
    equal = (cui == one).all(axis=1)
    assert equal.tolist() == [False, True, False, True, True]


def test_masking_leaves_groups_alone(fixture_lexicon):
    vocab = build_vocab(["the lungs are clear"])
    enc = encode("the lungs are clear", vocab, fixture_lexicon, 8)
    before = (enc.group_ids, enc.segment_ids)
    apply_masking(enc, 0.5, np.random.default_rng(1))
    assert (enc.group_ids, enc.segment_ids) == before
