"""Masked-LM losses (softmax cross-entropy and CUI multi-label BCE), Adam and
the training loop."""

from __future__ import annotations

import enum
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence, TextIO, Union

import numpy as np
from scipy.special import expit

from . import seeding
from . import tensor as T
from .lexicon import Lexicon
from .model import Batch, ModelConfig, bind, forward, init_params, mlm_logits
from .tokenizer import (
    TargetMatrix,
    TargetMode,
    Vocab,
    apply_masking,
    build_targets,
    encode,
    sibling_table,
)

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class LossMode(enum.Enum):
    CE_ONE_HOT = "ce"
    BCE_CUI = "bce-cui"

    @property
    def target_mode(self) -> TargetMode:
        return TargetMode.ONE_HOT if self is LossMode.CE_ONE_HOT else TargetMode.CUI_EXPANDED


class TrainingDivergedError(ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    loss_mode: LossMode = LossMode.BCE_CUI
    mask_rate: float = 0.15
    learning_rate: float = 3e-4
    batch_size: int = 16
    total_steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 0
    init_std: float = 0.02
    corrupt_split: bool = False

    def __post_init__(self):
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must be in (0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["loss_mode"] = self.loss_mode.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


# ---------------------------------------------------------------- losses


def _check_rows(targets: TargetMatrix, logits: T.Tensor) -> np.ndarray:
    rows = np.asarray(targets.rows, dtype=np.float64)
    if logits.ndim != 2 or rows.shape != logits.shape:
        raise T.ShapeError(f"loss: logits {logits.shape} vs targets {rows.shape}")
    if rows.shape[0] < 1:
        raise ValueError("loss needs at least one masked position")
    if not np.isin(rows, (0.0, 1.0)).all():
        raise ValueError("target rows must be {0, 1} valued")
    return rows


def ce_loss(logits, targets: TargetMatrix) -> T.Tensor:
    """Mean over rows of -log softmax(logits)[target]; rows must be one-hot."""
    logits = T._lift(logits)
    rows = _check_rows(targets, logits)
    if not (rows.sum(axis=1) == 1.0).all():
        raise ValueError("ce_loss needs exactly one set bit per target row")
    y = logits.value
    top = y.max(axis=1, keepdims=True)
    e = np.exp(y - top)
    z = e.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(z[:, 0])
    picked = (y * rows).sum(axis=1)
    m = y.shape[0]
    value = np.asarray(np.sum(lse - picked) / m)

    def grad_fn(g):
        return (g * (e / z - rows) / m,)

    return T.apply(value, (logits,), grad_fn)


def bce_loss(logits, targets: TargetMatrix) -> T.Tensor:
    """Per-channel logistic BCE summed over the vocabulary, mean over rows.

    Uses max(y, 0) - y*h + log(1 + exp(-|y|)), which equals
    -[h log sigmoid(y) + (1 - h) log(1 - sigmoid(y))] without overflow.
    """
    logits = T._lift(logits)
    rows = _check_rows(targets, logits)
    if not (rows.sum(axis=1) >= 1.0).all():
        raise ValueError("bce_loss target rows must have at least one set bit")
    y = logits.value
    per = np.maximum(y, 0.0) - y * rows + np.log1p(np.exp(-np.abs(y)))
    m = y.shape[0]
    value = np.asarray(np.sum(per.sum(axis=1)) / m)

    def grad_fn(g):
        return (g * (expit(y) - rows) / m,)

    return T.apply(value, (logits,), grad_fn)


def loss_for(mode: LossMode, logits, targets: TargetMatrix) -> T.Tensor:
    return ce_loss(logits, targets) if LossMode(mode) is LossMode.CE_ONE_HOT else bce_loss(logits, targets)


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params: dict, grads: dict, state: OptimizerState, lr: float):
    """One bias-corrected Adam step; returns new (params, state)."""
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    return new_p, OptimizerState(new_m, new_v, t)


# ---------------------------------------------------------------- batches


@dataclass
class TrainingBatch:
    inputs: Batch  # token ids already corrupted
    masked_flat: np.ndarray  # [M] indices into the flattened [B*S] positions
    targets: TargetMatrix

    @property
    def size(self) -> int:
        return self.inputs.token_ids.shape[0]


def prepare_batch(
    sentences: Sequence[str],
    vocab: Vocab,
    lex: Lexicon,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    rng: np.random.Generator,
    siblings: Optional[dict] = None,
    threads: int = 1,
) -> TrainingBatch:
    """Encode, mask and build targets for one batch.

    Encoding is pure and may run on a thread pool; masking consumes ``rng`` in
    sentence order, so the result does not depend on ``threads``.
    """
    if not sentences:
        raise ValueError("empty batch")

    def enc(s):
        return encode(s, vocab, lex, model_cfg.max_seq_len)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            encoded = list(pool.map(enc, sentences))
    else:
        encoded = [enc(s) for s in sentences]
    mode = train_cfg.loss_mode.target_mode
    if siblings is None and mode is TargetMode.CUI_EXPANDED:
        siblings = sibling_table(lex, vocab)
    corrupted, flat, rows = [], [], []
    S = model_cfg.max_seq_len
    for b, e in enumerate(encoded):
        outcome = apply_masking(e, train_cfg.mask_rate, rng, train_cfg.corrupt_split, len(vocab))
        corrupted.append(outcome.corrupted_ids)
        flat.extend(b * S + p for p in outcome.masked_positions)
        rows.append(build_targets(outcome, lex, vocab, mode, siblings).rows)
    return TrainingBatch(
        inputs=Batch.from_encoded(encoded, token_ids=corrupted),
        masked_flat=np.array(flat, dtype=np.int64),
        targets=TargetMatrix(np.concatenate(rows, axis=0), mode),
    )


def masked_logits(p: dict, batch: TrainingBatch, model_cfg: ModelConfig) -> T.Tensor:
    """MLM scores [M, D] at the masked positions only."""
    trace = forward(batch.inputs, p, model_cfg, with_logits=False)
    h = trace.final_hidden
    B, S, d = h.shape
    picked = T.gather_rows(T.reshape(h, (B * S, d)), batch.masked_flat)
    return mlm_logits(picked, p)


def batch_loss(params: dict, batch: TrainingBatch, model_cfg: ModelConfig, mode: LossMode,
               tape: Optional[T.Tape] = None):
    """Loss tensor and the bound parameters it was computed from."""
    p = bind(params, tape)
    return loss_for(mode, masked_logits(p, batch, model_cfg), batch.targets), p


def train_step(params: dict, opt_state: OptimizerState, batch: TrainingBatch, model_cfg: ModelConfig,
               train_cfg: TrainConfig, step: Optional[int] = None):
    """Forward, loss on masked positions, backward and one Adam update.

    Returns ``(loss, new_params, new_opt_state)``; inputs are not mutated.
    """
    tape = T.Tape()
    loss, _ = batch_loss(params, batch, model_cfg, train_cfg.loss_mode, tape)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergedError(opt_state.step + 1 if step is None else step, value)
    grads = T.backward(tape, loss)
    new_params, new_state = adam_update(params, grads, opt_state, train_cfg.learning_rate)
    return value, new_params, new_state


# ---------------------------------------------------------------- loop


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict
    opt_state: OptimizerState
    train_config: TrainConfig
    rng_state: dict
    step: int
    vocab: list = field(default_factory=list)
    version: int = 1

    def vocabulary(self) -> Vocab:
        return Vocab(self.vocab)


class _Sampler:
    """Epoch-wise seeded reshuffling; yields index lists of at most batch_size."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator, order=None, cursor: int = 0):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.order = list(order) if order is not None else [int(i) for i in rng.permutation(n)]
        self.cursor = cursor

    def next(self) -> list:
        if self.cursor >= self.n:
            self.order = [int(i) for i in self.rng.permutation(self.n)]
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + self.batch_size]
        self.cursor += len(idx)
        return idx

    def state(self) -> dict:
        return {"shuffle": self.rng.bit_generator.state, "order": self.order, "cursor": self.cursor}


MetricsSink = Union[TextIO, Callable[[dict], None], None]


def _emit(sink: MetricsSink, record: dict) -> None:
    if sink is None:
        return
    if callable(sink) and not hasattr(sink, "write"):
        sink(dict(record))
    else:
        sink.write(json.dumps(record) + "\n")


def train_loop(
    corpus: Iterable[str],
    lexicon: Lexicon,
    vocab: Vocab,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    metrics: MetricsSink = None,
    checkpoint_path: Optional[Union[str, os.PathLike]] = None,
    resume: Optional[Checkpoint] = None,
    dump_targets: Optional[TextIO] = None,
    threads: int = 1,
) -> Checkpoint:
    """Run ``train_cfg.total_steps`` optimizer steps (counted from ``resume``
    when given) and return the final checkpoint.

    Each step writes ``{"step", "loss", "mode"}`` to ``metrics``. All
    randomness derives from ``train_cfg.seed``: parameter init, per-step
    masking streams and the epoch shuffle.
    """
    from .checkpoint import save_checkpoint

    sentences = [s for s in (line.strip() for line in corpus) if s]
    if not sentences:
        raise ValueError("training corpus is empty")
    if model_cfg.vocab_size != len(vocab):
        raise ValueError(f"model vocab_size {model_cfg.vocab_size} != vocabulary size {len(vocab)}")
    seed = train_cfg.seed
    if resume is None:
        params = init_params(model_cfg, seeding.derive_rng(seed, seeding.INIT), train_cfg.init_std)
        opt_state = OptimizerState.zeros_like(params)
        sampler = _Sampler(len(sentences), train_cfg.batch_size, seeding.derive_rng(seed, seeding.SHUFFLE))
        start = 0
    else:
        params = {k: v.copy() for k, v in resume.params.items()}
        opt_state = resume.opt_state
        rng = seeding.derive_rng(seed, seeding.SHUFFLE)
        rng.bit_generator.state = resume.rng_state["shuffle"]
        sampler = _Sampler(len(sentences), train_cfg.batch_size, rng, resume.rng_state["order"],
                           resume.rng_state["cursor"])
        start = resume.step
    siblings = sibling_table(lexicon, vocab)
    mode = train_cfg.loss_mode

    def snapshot(step):
        return Checkpoint(model_cfg, params, opt_state, train_cfg, sampler.state(), step, list(vocab.words))

    for step in range(start + 1, start + train_cfg.total_steps + 1):
        chosen = [sentences[i] for i in sampler.next()]
        batch = prepare_batch(chosen, vocab, lexicon, model_cfg, train_cfg,
                              seeding.derive_rng(seed, seeding.MASK, step), siblings, threads)
        if dump_targets is not None:
            rows = [np.flatnonzero(r).tolist() for r in batch.targets.rows]
            dump_targets.write(json.dumps({"step": step, "rows": rows}) + "\n")
        loss, params, opt_state = train_step(params, opt_state, batch, model_cfg, train_cfg, step)
        _emit(metrics, {"step": step, "loss": loss, "mode": mode.value})
        if checkpoint_path is not None and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
            log.info("step %d: writing checkpoint to %s", step, checkpoint_path)
            save_checkpoint(snapshot(step), checkpoint_path)
    final = snapshot(start + train_cfg.total_steps)
    if checkpoint_path is not None:
        save_checkpoint(final, checkpoint_path)
    return final


def with_overrides(cfg, **changes):
    """``dataclasses.replace`` that ignores None values."""
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
