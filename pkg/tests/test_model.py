import numpy as np
import pytest

from cuimlm import tensor as T
from cuimlm.lexicon import Lexicon
from cuimlm.model import (
    Batch,
    ModelConfig,
    attention_weights,
    bind,
    embedding_sum,
    forward,
    init_params,
    input_embed,
    mlm_logits,
    param_shapes,
)
from cuimlm.tokenizer import NO_GROUP, PAD, build_vocab, encode

WORDS = "the chest cavity is clear lungs kidney no mass seen".split()


@pytest.fixture()
def setup(fixture_lexicon):
    vocab = build_vocab([" ".join(WORDS)])
    cfg = ModelConfig(vocab_size=len(vocab), group_count=fixture_lexicon.group_count, hidden_dim=16,
                      layer_count=2, head_count=4, ff_dim=32, max_seq_len=8)
    params = init_params(cfg, np.random.default_rng(0), std=0.2)
    return vocab, cfg, params


def make_batch(sentences, vocab, lex, cfg):
    return Batch.from_encoded([encode(s, vocab, lex, cfg.max_seq_len) for s in sentences])


def test_param_shapes(setup):
    _, cfg, params = setup
    d, D = cfg.hidden_dim, cfg.vocab_size
    assert params["token_table"].shape == (d, D)
    assert params["position_table"].shape == (cfg.max_seq_len, d)
    assert params["segment_table"].shape == (d, 2)
    assert params["group_table"].shape == (d, cfg.group_count)
    assert params["mlm_bias"].shape == (D,)
    assert set(params) == set(param_shapes(cfg))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, hidden_dim=10, head_count=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=3)


def test_init_clipping_and_determinism():
    cfg = ModelConfig(vocab_size=50, group_count=3)
    a = init_params(cfg, np.random.default_rng(11), std=0.02)
    b = init_params(cfg, np.random.default_rng(11), std=0.02)
    for name in a:
        assert a[name].tobytes() == b[name].tobytes()
        if name.endswith(".gain"):
            assert (a[name] == 1).all()
        elif name.endswith(".bias") or name == "mlm_bias":
            assert (a[name] == 0).all()
        else:
            assert np.abs(a[name]).max() <= 0.04


def test_init_mean_near_zero():
    cfg = ModelConfig(vocab_size=200, group_count=0, hidden_dim=64)
    sample = init_params(cfg, np.random.default_rng(3), std=0.02)["token_table"].ravel()[:10_000]
    assert sample.size == 10_000
    assert abs(sample.mean()) <= 0.002


def test_init_rejects_bad_std():
    with pytest.raises(ValueError):
        init_params(ModelConfig(vocab_size=8), np.random.default_rng(0), std=0.0)


def test_augmentation_noop_without_lexicon_words(setup, fixture_lexicon):
    vocab, cfg, params = setup
    off = ModelConfig(**{**cfg.to_dict(), "augment_inputs": False})
    batch = make_batch(["the is clear no seen"], vocab, fixture_lexicon, cfg)
    a = input_embed(batch, bind(params), cfg).value
    b = input_embed(batch, bind(params), off).value
    assert a.tobytes() == b.tobytes()


def test_group_column_added_before_layer_norm(setup, fixture_lexicon):
    vocab, cfg, params = setup
    batch = make_batch(["chest is clear"], vocab, fixture_lexicon, cfg)
    u = embedding_sum(batch, bind(params), cfg).value
    anatomy = fixture_lexicon.group_id("ANATOMY")
    cid = vocab.index["chest"]
    expected = params["position_table"][1] + params["segment_table"][:, 0] + params["token_table"][:, cid]
    assert np.array_equal(u[0, 1], expected + params["group_table"][:, anatomy])
    # ungrouped word: plain sum
    iid = vocab.index["is"]
    plain = params["position_table"][2] + params["segment_table"][:, 0] + params["token_table"][:, iid]
    assert np.array_equal(u[0, 2], plain)


def test_embedding_linear_in_token_column(setup, fixture_lexicon):
    vocab, cfg, params = setup
    params = dict(params, group_table=params["group_table"].copy())
    anatomy = fixture_lexicon.group_id("ANATOMY")
    params["group_table"][:, anatomy] = 0.0
    a = embedding_sum(make_batch(["chest"], vocab, fixture_lexicon, cfg), bind(params), cfg).value[0, 1]
    b = embedding_sum(make_batch(["lungs"], vocab, fixture_lexicon, cfg), bind(params), cfg).value[0, 1]
    diff = params["token_table"][:, vocab.index["chest"]] - params["token_table"][:, vocab.index["lungs"]]
    assert np.allclose(a - b, diff, rtol=0, atol=1e-15)


def test_out_of_range_ids(setup):
    vocab, cfg, params = setup
    batch = Batch(np.array([[2, cfg.vocab_size]]), np.full((1, 2), NO_GROUP), np.zeros((1, 2), int), np.array([2]))
    with pytest.raises(IndexError):
        input_embed(batch, bind(params), cfg)
    batch = Batch(np.array([[2, 5]]), np.array([[NO_GROUP, cfg.group_count]]), np.zeros((1, 2), int), np.array([2]))
    with pytest.raises(IndexError):
        input_embed(batch, bind(params), cfg)


def test_pad_attention_is_zero(setup, fixture_lexicon):
    vocab, cfg, params = setup
    batch = make_batch(["the chest is clear", "no mass"], vocab, fixture_lexicon, cfg)
    for layer in range(cfg.layer_count):
        w = attention_weights(batch, params, cfg, layer)
        for b, n in enumerate(batch.attention_len):
            assert (w[b, :, :, n:] == 0).all()
            assert np.allclose(w[b].sum(axis=-1), 1.0)


def test_identical_rows_identical_outputs(setup, fixture_lexicon):
    vocab, cfg, params = setup
    batch = make_batch(["the lungs are clear"] * 2, vocab, fixture_lexicon, cfg)
    out = forward(batch, bind(params), cfg).logits.value
    assert out[0].tobytes() == out[1].tobytes()


def test_pad_token_ids_do_not_leak(setup, fixture_lexicon):
    vocab, cfg, params = setup
    batch = make_batch(["the chest is clear"], vocab, fixture_lexicon, cfg)
    n = int(batch.attention_len[0])
    altered = Batch(batch.token_ids.copy(), batch.group_ids.copy(), batch.segment_ids, batch.attention_len)
    altered.token_ids[0, n:] = vocab.index["kidney"]
    altered.group_ids[0, n:] = fixture_lexicon.group_id("ANATOMY")
    a = forward(batch, bind(params), cfg).logits.value[0, :n]
    b = forward(altered, bind(params), cfg).logits.value[0, :n]
    assert a.tobytes() == b.tobytes()


def test_logits_zero_hidden_equals_bias(setup):
    _, cfg, params = setup
    params = dict(params, mlm_bias=np.random.default_rng(2).normal(size=cfg.vocab_size))
    out = mlm_logits(T.constant(np.zeros((2, 3, cfg.hidden_dim))), bind(params)).value
    assert out.shape == (2, 3, cfg.vocab_size)
    assert (out == params["mlm_bias"]).all()


def test_logits_tied_to_token_table(setup):
    _, cfg, params = setup
    h = T.constant(np.random.default_rng(5).normal(size=(2, 3, cfg.hidden_dim)))
    base = mlm_logits(h, bind(params)).value
    k = 6
    bumped = dict(params, token_table=params["token_table"].copy())
    bumped["token_table"][:, k] += 0.1
    out = mlm_logits(h, bind(bumped)).value
    changed = np.abs(out - base) > 0
    assert changed[..., k].all()
    assert not np.delete(changed, k, axis=-1).any()


def test_reduction_to_baseline_forward(setup, fixture_lexicon):
    vocab, cfg, params = setup
    off = ModelConfig(**{**cfg.to_dict(), "augment_inputs": False})
    grouped = make_batch(["the chest is clear", "no mass seen"], vocab, fixture_lexicon, cfg)
    none = Batch(grouped.token_ids, np.full_like(grouped.group_ids, NO_GROUP), grouped.segment_ids,
                 grouped.attention_len)
    base = forward(grouped, bind(params), off).logits.value
    assert forward(none, bind(params), cfg).logits.value.tobytes() == base.tobytes()
    assert forward(grouped, bind(params), off).logits.value.tobytes() == base.tobytes()
    assert forward(grouped, bind(params), cfg).logits.value.tobytes() != base.tobytes()


def test_trace_shapes_and_finite(setup, fixture_lexicon):
    vocab, cfg, params = setup
    batch = make_batch(["the chest is clear", "no mass"], vocab, fixture_lexicon, cfg)
    trace = forward(batch, bind(params), cfg)
    assert trace.input_embeddings.shape == (2, cfg.max_seq_len, cfg.hidden_dim)
    assert len(trace.hidden_states) == cfg.layer_count
    assert trace.logits.shape == (2, cfg.max_seq_len, cfg.vocab_size)
    for t in [trace.input_embeddings, *trace.hidden_states, trace.logits]:
        assert np.isfinite(t.value).all()


def test_no_groups_config(fixture_lexicon):
    vocab = build_vocab([" ".join(WORDS)])
    cfg = ModelConfig(vocab_size=len(vocab), group_count=0, hidden_dim=8, layer_count=1, head_count=2,
                      ff_dim=8, max_seq_len=6)
    params = init_params(cfg, np.random.default_rng(0))
    batch = make_batch(["the is clear"], vocab, Lexicon(), cfg)
    assert forward(batch, bind(params), cfg).logits.shape == (1, 6, len(vocab))
