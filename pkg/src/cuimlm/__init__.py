"""Masked-LM pre-training with thesaurus knowledge: semantic-group input
embeddings and CUI-expanded multi-label targets, on a small numpy autodiff."""

from .lexicon import Lexicon, load_lexicon, read_lexicon
from .model import ModelConfig, init_params
from .tokenizer import TargetMode, Vocab, build_vocab, encode
from .training import LossMode, TrainConfig, bce_loss, ce_loss, train_loop

__version__ = "0.1.0"

__all__ = [
    "Lexicon",
    "LossMode",
    "ModelConfig",
    "TargetMode",
    "TrainConfig",
    "Vocab",
    "bce_loss",
    "build_vocab",
    "ce_loss",
    "encode",
    "init_params",
    "load_lexicon",
    "read_lexicon",
    "train_loop",
]
