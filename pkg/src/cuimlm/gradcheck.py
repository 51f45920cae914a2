"""Finite-difference verification of the analytic gradients.

The oracle is a separate, tape-free forward pass written directly in numpy
and evaluated in extended precision (``np.longdouble``). Central differences
of a float64 loss carry ~1e-11 of rounding noise, which would swamp
parameters whose true gradient is zero (the attention key bias, for
instance); in extended precision that noise drops below 1e-13.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lexicon import load_lexicon
from .model import ModelConfig, init_params
from .seeding import derive_rng
from .tokenizer import NO_GROUP, Vocab
from .training import LossMode, TrainConfig, TrainingBatch, batch_loss, prepare_batch

FD_STEP = 1e-5
TOLERANCE = 1e-4


def _erf(x: np.ndarray) -> np.ndarray:
    # erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (2n+1)!!; all terms positive
    x = np.asarray(x)
    pi = np.arctan(np.ones((), dtype=x.dtype)) * 4
    ax = np.abs(x)
    term = ax.copy()
    acc = ax.copy()
    n = 0
    while True:
        n += 1
        term = term * 2 * ax * ax / (2 * n + 1)
        acc = acc + term
        if np.all(term <= acc * np.finfo(x.dtype).eps) or n > 2000:
            break
    out = 2 / np.sqrt(pi) * np.exp(-ax * ax) * acc
    return np.sign(x) * np.minimum(out, 1)


def _layer_norm(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def reference_loss(params: dict, batch: TrainingBatch, cfg: ModelConfig, mode: LossMode,
                   dtype=np.longdouble) -> float:
    """The masked-LM loss recomputed without the tape, in ``dtype``."""
    P = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    eps = dtype(cfg.layer_norm_eps)
    ids = batch.inputs.token_ids
    B, S = ids.shape
    d, H = cfg.hidden_dim, cfg.head_count
    dh = d // H

    x = P["position_table"][:S][None] + P["segment_table"].T[batch.inputs.segment_ids] + P["token_table"].T[ids]
    if cfg.augment_inputs:
        for b in range(B):
            for s in range(S):
                g = batch.inputs.group_ids[b, s]
                if g != NO_GROUP:
                    x[b, s] = x[b, s] + P["group_table"][:, g]
    x = _layer_norm(x, P["embed_ln.gain"], P["embed_ln.bias"], eps)

    real = np.arange(S)[None, :] < batch.inputs.attention_len[:, None]
    for i in range(cfg.layer_count):
        pre = f"layer{i}."
        lin = {n: x @ P[f"{pre}attn.{n}.weight"] + P[f"{pre}attn.{n}.bias"] for n in "qkv"}
        ctx = np.zeros_like(x)
        for b in range(B):
            for h in range(H):
                cols = slice(h * dh, (h + 1) * dh)
                scores = lin["q"][b][:, cols] @ lin["k"][b][:, cols].T / np.sqrt(dtype(dh))
                scores = np.where(real[b][None, :], scores, -np.inf)
                w = np.exp(scores - scores.max(axis=1, keepdims=True))
                w = w / w.sum(axis=1, keepdims=True)
                ctx[b][:, cols] = w @ lin["v"][b][:, cols]
        attn = ctx @ P[f"{pre}attn.o.weight"] + P[f"{pre}attn.o.bias"]
        x = _layer_norm(x + attn, P[f"{pre}attn_ln.gain"], P[f"{pre}attn_ln.bias"], eps)
        z = x @ P[f"{pre}ff.in.weight"] + P[f"{pre}ff.in.bias"]
        act = z * (1 + _erf(z / np.sqrt(dtype(2)))) / 2
        x = _layer_norm(x + act @ P[f"{pre}ff.out.weight"] + P[f"{pre}ff.out.bias"],
                        P[f"{pre}ff_ln.gain"], P[f"{pre}ff_ln.bias"], eps)

    hidden = x.reshape(B * S, d)[batch.masked_flat]
    y = hidden @ P["token_table"] + P["mlm_bias"]
    t = np.asarray(batch.targets.rows, dtype=dtype)
    if LossMode(mode) is LossMode.CE_ONE_HOT:
        top = y.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(y - top).sum(axis=1))
        per_row = lse - (y * t).sum(axis=1)
    else:
        sig = 1 / (1 + np.exp(-y))
        per_row = -(t * np.log(sig) + (1 - t) * np.log(1 - sig)).sum(axis=1)
    return per_row.mean()


@dataclass
class GradCheckResult:
    mode: LossMode
    max_rel_error: float
    worst: tuple  # (param name, flat index, analytic, numeric)
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def gradient_check(params: dict, batch: TrainingBatch, cfg: ModelConfig, mode: LossMode,
                   h: float = FD_STEP) -> GradCheckResult:
    """Compare every analytic gradient entry with a central difference."""
    tape = T.Tape()
    loss, _ = batch_loss(params, batch, cfg, mode, tape)
    grads = T.backward(tape, loss)
    work = {k: np.asarray(v, dtype=np.longdouble) for k, v in params.items()}
    step = np.longdouble(h)
    worst, worst_at, count = -1.0, None, 0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = reference_loss(work, batch, cfg, mode)
            flat[i] = orig - step
            down = reference_loss(work, batch, cfg, mode)
            flat[i] = orig
            numeric = float((up - down) / (2 * step))
            analytic = float(grads[name].reshape(-1)[i])
            err = relative_error(analytic, numeric)
            count += 1
            if err > worst:
                worst, worst_at = err, (name, i, analytic, numeric)
    return GradCheckResult(LossMode(mode), worst, worst_at, count)


_TINY_LEXICON = """\
lungs\tC0024109\tANATOMY
lung\tC0024109\tANATOMY
pulmonary\tC0024109\tANATOMY
kidney\tC0022646\tANATOMY
ren\tC0022646\tANATOMY
mass\tC0577559\tDISORDER
lump\tC0577559\tDISORDER
bleeding\tC0019080\tDISORDER
hem\tC0019080\tDISORDER
aspirin\tC9000001\tCHEMICAL
"""
_TINY_WORDS = ("lungs lung pulmonary kidney ren mass lump bleeding hem aspirin "
               "the a of no with clear").split()


def tiny_setup(seed: int, mode: LossMode, std: float = 0.2, batch_size: int = 3):
    """d=8, 1 layer, 2 heads, D=20, seq=6 model with a batch containing PAD,
    grouped and ungrouped tokens and (in CUI mode) multi-bit targets."""
    lex = load_lexicon(_TINY_LEXICON)
    vocab = Vocab(_TINY_WORDS)
    cfg = ModelConfig(vocab_size=len(vocab), group_count=lex.group_count, hidden_dim=8, layer_count=1,
                      head_count=2, ff_dim=16, max_seq_len=6)
    params = init_params(cfg, derive_rng(seed, "gradcheck-init"), std)
    # non-trivial layer norm gains and biases
    rng = derive_rng(seed, "gradcheck-ln")
    for name in params:
        if name.endswith((".gain", ".bias")) or name == "mlm_bias":
            params[name] = params[name] + rng.uniform(-0.3, 0.3, size=params[name].shape)
    rng = derive_rng(seed, "gradcheck-batch")
    sentences = []
    for b in range(batch_size):
        n = 5 if b == 0 else int(rng.integers(2, 5))
        sentences.append(" ".join(rng.choice(_TINY_WORDS, size=n)))
    train_cfg = TrainConfig(loss_mode=mode, mask_rate=0.5, total_steps=1)
    batch = prepare_batch(sentences, vocab, lex, cfg, train_cfg, derive_rng(seed, "gradcheck-mask"))
    return params, batch, cfg


def run_gradcheck(seed: int = 1) -> list:
    """Gradient check of the tiny model under both loss modes."""
    results = []
    for mode in LossMode:
        params, batch, cfg = tiny_setup(seed, mode)
        results.append(gradient_check(params, batch, cfg, mode))
    return results
