"""Post-LN transformer encoder with semantic-group augmented input embeddings
and a tied-weight masked-LM head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tokenizer import NO_GROUP

ATTENTION_MASK_VALUE = -np.inf


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    group_count: int = 0
    hidden_dim: int = 64
    layer_count: int = 2
    head_count: int = 4
    ff_dim: int = 256
    max_seq_len: int = 32
    augment_inputs: bool = True
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden_dim % self.head_count:
            raise ValueError("hidden_dim must be divisible by head_count")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4")
        if self.group_count < 0:
            raise ValueError("group_count must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def param_shapes(cfg: ModelConfig) -> dict:
    """Parameter name -> shape, in canonical order."""
    d, D = cfg.hidden_dim, cfg.vocab_size
    shapes = {
        "token_table": (d, D),
        "position_table": (cfg.max_seq_len, d),
        "segment_table": (d, 2),
        "group_table": (d, cfg.group_count),
        "embed_ln.gain": (d,),
        "embed_ln.bias": (d,),
    }
    for i in range(cfg.layer_count):
        p = f"layer{i}."
        for proj in "qkvo":
            shapes[f"{p}attn.{proj}.weight"] = (d, d)
            shapes[f"{p}attn.{proj}.bias"] = (d,)
        shapes[f"{p}attn_ln.gain"] = (d,)
        shapes[f"{p}attn_ln.bias"] = (d,)
        shapes[f"{p}ff.in.weight"] = (d, cfg.ff_dim)
        shapes[f"{p}ff.in.bias"] = (cfg.ff_dim,)
        shapes[f"{p}ff.out.weight"] = (cfg.ff_dim, d)
        shapes[f"{p}ff.out.bias"] = (d,)
        shapes[f"{p}ff_ln.gain"] = (d,)
        shapes[f"{p}ff_ln.bias"] = (d,)
    shapes["mlm_bias"] = (D,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) samples, redrawn until they fall within +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(cfg: ModelConfig, rng: np.random.Generator, std: float = 0.02) -> dict:
    if std <= 0:
        raise ValueError("std must be positive")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".bias") or name == "mlm_bias":
            params[name] = np.zeros(shape)
        else:
            params[name] = truncated_normal(rng, shape, std)
    return params


def check_params(params: dict, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        raise ValueError(f"parameter names differ: {sorted(set(params) ^ set(expected))}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def bind(params: dict, tape: Optional[T.Tape] = None) -> dict:
    """Wrap raw arrays as tape parameters (or untracked constants)."""
    if tape is None:
        return {name: T.constant(v) for name, v in params.items()}
    return {name: tape.parameter(name, v) for name, v in params.items()}


@dataclass
class Batch:
    """Padded id arrays for a batch of encoded sentences."""

    token_ids: np.ndarray  # [B, S]
    group_ids: np.ndarray  # [B, S], NO_GROUP where absent
    segment_ids: np.ndarray  # [B, S]
    attention_len: np.ndarray  # [B]

    @classmethod
    def from_encoded(cls, encoded, token_ids=None) -> "Batch":
        return cls(
            token_ids=np.array([e.token_ids for e in encoded] if token_ids is None else token_ids, dtype=np.int64),
            group_ids=np.array([e.group_ids for e in encoded], dtype=np.int64),
            segment_ids=np.array([e.segment_ids for e in encoded], dtype=np.int64),
            attention_len=np.array([e.attention_len for e in encoded], dtype=np.int64),
        )


@dataclass
class ForwardTrace:
    input_embeddings: T.Tensor
    hidden_states: list = field(default_factory=list)
    logits: Optional[T.Tensor] = None

    @property
    def final_hidden(self) -> T.Tensor:
        return self.hidden_states[-1] if self.hidden_states else self.input_embeddings


def embedding_sum(batch: Batch, p: dict, cfg: ModelConfig) -> T.Tensor:
    """Position + segment + token (+ semantic group) embedding, before layer norm."""
    B, S = batch.token_ids.shape
    if S > cfg.max_seq_len:
        raise ValueError(f"sequence length {S} exceeds max_seq_len {cfg.max_seq_len}")
    if batch.token_ids.min() < 0 or batch.token_ids.max() >= cfg.vocab_size:
        raise IndexError(f"token ids outside [0, {cfg.vocab_size})")
    groups = batch.group_ids
    if groups.size and (groups.max() >= cfg.group_count or groups.min() < NO_GROUP):
        raise IndexError(f"group ids outside [0, {cfg.group_count}) and not NO_GROUP")

    u = T.gather_rows(p["position_table"], np.arange(S)) + T.gather_rows(
        T.transpose(p["segment_table"]), batch.segment_ids
    )
    u = u + T.gather_rows(T.transpose(p["token_table"]), batch.token_ids)
    has_group = groups != NO_GROUP
    if cfg.augment_inputs and has_group.any():
        # extra all-zero row serves positions without a group
        table = T.concat([T.transpose(p["group_table"]), T.constant(np.zeros((1, cfg.hidden_dim)))], axis=0)
        u = u + T.gather_rows(table, np.where(has_group, groups, cfg.group_count))
    return u


def input_embed(batch: Batch, p: dict, cfg: ModelConfig) -> T.Tensor:
    u = embedding_sum(batch, p, cfg)
    return T.layer_norm(u, p["embed_ln.gain"], p["embed_ln.bias"], cfg.layer_norm_eps)


def attention_bias(attention_len: np.ndarray, seq_len: int) -> np.ndarray:
    """[B, 1, 1, S] additive mask: 0 on real keys, -inf on PAD keys."""
    real = np.arange(seq_len)[None, :] < np.asarray(attention_len)[:, None]
    return np.where(real, 0.0, ATTENTION_MASK_VALUE)[:, None, None, :]


def _linear(x: T.Tensor, p: dict, name: str) -> T.Tensor:
    return x @ p[name + ".weight"] + p[name + ".bias"]


def encoder_layer(x: T.Tensor, mask: T.Tensor, p: dict, i: int, cfg: ModelConfig) -> T.Tensor:
    B, S, d = x.shape
    H = cfg.head_count
    dh = d // H
    pre = f"layer{i}."

    def heads(t):
        return T.transpose(T.reshape(t, (B, S, H, dh)), (0, 2, 1, 3))

    q = heads(_linear(x, p, pre + "attn.q"))
    k = heads(_linear(x, p, pre + "attn.k"))
    v = heads(_linear(x, p, pre + "attn.v"))
    scores = T.scale(q @ T.transpose(k), 1.0 / math.sqrt(dh)) + mask
    ctx = T.softmax_rows(scores) @ v
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, S, d))
    x = T.layer_norm(x + _linear(ctx, p, pre + "attn.o"), p[pre + "attn_ln.gain"], p[pre + "attn_ln.bias"],
                     cfg.layer_norm_eps)
    ff = _linear(T.gelu(_linear(x, p, pre + "ff.in")), p, pre + "ff.out")
    return T.layer_norm(x + ff, p[pre + "ff_ln.gain"], p[pre + "ff_ln.bias"], cfg.layer_norm_eps)


def encoder_forward(u: T.Tensor, attention_len, p: dict, cfg: ModelConfig) -> list:
    mask = T.constant(attention_bias(attention_len, u.shape[1]))
    hidden = []
    x = u
    for i in range(cfg.layer_count):
        x = encoder_layer(x, mask, p, i, cfg)
        hidden.append(x)
    return hidden


def mlm_logits(hidden: T.Tensor, p: dict) -> T.Tensor:
    """Scores over the vocabulary through the transposed token table plus bias."""
    return hidden @ p["token_table"] + p["mlm_bias"]


def forward(batch: Batch, p: dict, cfg: ModelConfig, with_logits: bool = True) -> ForwardTrace:
    u = input_embed(batch, p, cfg)
    trace = ForwardTrace(input_embeddings=u, hidden_states=encoder_forward(u, batch.attention_len, p, cfg))
    if with_logits:
        trace.logits = mlm_logits(trace.final_hidden, p)
    return trace


def attention_weights(batch: Batch, params: dict, cfg: ModelConfig, layer: int = 0) -> np.ndarray:
    """Softmax attention probabilities [B, H, S, S] of one layer (untracked)."""
    p = bind(params)
    x = input_embed(batch, p, cfg)
    mask = T.constant(attention_bias(batch.attention_len, x.shape[1]))
    for i in range(layer):
        x = encoder_layer(x, mask, p, i, cfg)
    B, S, d = x.shape
    H, dh = cfg.head_count, d // cfg.head_count
    pre = f"layer{layer}."
    q = T.transpose(T.reshape(_linear(x, p, pre + "attn.q"), (B, S, H, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(_linear(x, p, pre + "attn.k"), (B, S, H, dh)), (0, 2, 1, 3))
    scores = T.scale(q @ T.transpose(k), 1.0 / math.sqrt(dh)) + mask
    return T.softmax_rows(scores).value
