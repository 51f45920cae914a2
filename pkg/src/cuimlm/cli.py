"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from typing import Optional, Sequence

from . import evaluation as ev
from .checkpoint import CheckpointError, load_checkpoint
from .gradcheck import TOLERANCE, run_gradcheck
from .lexicon import Lexicon, LexiconParseError, read_lexicon, sibling_pairs
from .model import ModelConfig
from .tokenizer import Vocab, build_vocab
from .training import LossMode, TrainConfig, TrainingDivergedError, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cuimlm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


REQUIRED = {
    "build-vocab": ("corpus",),
    "train": ("corpus", "out"),
    "eval-nn": ("checkpoint", "word"),
    "eval-cluster": ("checkpoint", "lexicon"),
    "eval-synonyms": ("checkpoint",),
    "finetune-ner": ("checkpoint", "tagged"),
    "export-embeddings": ("checkpoint",),
    "gradcheck": (),
}

SPACES = [s.value for s in ev.Space]


def build_parser() -> _Parser:
    parser = _Parser(prog="cuimlm", description="Knowledge-augmented masked-LM toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        return p

    p = add("build-vocab", "build a vocabulary file from a corpus")
    p.add_argument("--corpus")
    p.add_argument("--out", help="vocabulary file (default: stdout)")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-size", type=int, default=30000)

    p = add("train", "pre-train with the CE or CUI multi-label objective")
    p.add_argument("--corpus")
    p.add_argument("--lexicon", help="lexicon TSV (default: empty lexicon)")
    p.add_argument("--vocab", help="vocabulary file (default: built from the corpus)")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-vocab", type=int, default=30000)
    p.add_argument("--loss", choices=[m.value for m in LossMode], default=LossMode.BCE_CUI.value)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--mask-rate", type=float, default=0.15)
    p.add_argument("--corrupt-split", action="store_true", help="80/10/10 MASK/random/keep corruption")
    p.add_argument("--no-augment", action="store_true", help="disable semantic-group input embeddings")
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-dim", type=int, default=256)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--init-std", type=float, default=0.02)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--out")
    p.add_argument("--metrics", help="metrics JSON-lines file (default: stdout)")
    p.add_argument("--dump-targets", help="write per-step target bit lists as JSON lines")
    p.add_argument("--threads", type=int, default=1, help="threads for batch encoding")

    def add_eval(name, help_text):
        q = add(name, help_text)
        q.add_argument("--checkpoint")
        q.add_argument("--lexicon")
        return q

    p = add_eval("eval-nn", "nearest neighbours of query words")
    p.add_argument("--word", action="append")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--space", choices=SPACES, default=ev.Space.INPUT_TABLE.value)

    p = add_eval("eval-cluster", "semantic-group silhouette")
    p.add_argument("--space", choices=SPACES + ["both"], default="both")

    p = add_eval("eval-synonyms", "mean cosine similarity of word pairs")
    p.add_argument("--pairs", help="TSV of word pairs (default: CUI-sharing pairs in the lexicon)")
    p.add_argument("--space", choices=SPACES, default=ev.Space.INPUT_TABLE.value)

    p = add_eval("finetune-ner", "fine-tune a linear token-classification head")
    p.add_argument("--tagged")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=float, default=0.2)

    p = add_eval("export-embeddings", "2-D PCA projection as word/group/x/y TSV")
    p.add_argument("--space", choices=SPACES, default=ev.Space.AUGMENTED_INPUT.value)
    p.add_argument("--all-words", action="store_true", help="include words without a lexicon entry")
    p.add_argument("--out", help="TSV file (default: stdout)")

    p = add("gradcheck", "finite-difference gradient check of a tiny model")
    p.add_argument("--seed", type=int, default=1)
    return parser


def _config_tokens(path: str, subparser: argparse.ArgumentParser) -> list:
    flags = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = action
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if not sep or key not in flags or key == "config":
                raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
            action = flags[key]
            if action.nargs == 0:
                if value.lower() in ("1", "true", "yes", "on"):
                    tokens.append("--" + key)
            else:
                tokens += ["--" + key, value]
    return tokens


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "cuimlm: error: a subcommand is required")
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        try:
            tokens = _config_tokens(args.config, subparser)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        idx = list(argv).index(args.command)
        args = parser.parse_args(list(argv[:idx + 1]) + tokens + list(argv[idx + 1:]))
    missing = [f"--{name.replace('_', '-')}" for name in REQUIRED[args.command] if not getattr(args, name)]
    if missing:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        raise UsageError(f"{sub.format_usage()}{sub.prog}: error: missing required flag(s): {', '.join(missing)}")
    return args


@contextmanager
def _output(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _lexicon(path: Optional[str]) -> Lexicon:
    return read_lexicon(path) if path else Lexicon()


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record) + "\n")


def cmd_build_vocab(args) -> int:
    with open(args.corpus, encoding="utf-8") as fh:
        vocab = build_vocab(fh, args.min_freq, args.max_size)
    with _output(args.out) as out:
        out.writelines(tok + "\n" for tok in vocab.words)
    log.info("vocabulary size %d", len(vocab))
    return EXIT_OK


def cmd_train(args) -> int:
    with open(args.corpus, encoding="utf-8") as fh:
        corpus = fh.read().splitlines()
    lexicon = _lexicon(args.lexicon)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        vocab = resume.vocabulary()
        model_cfg = resume.model_config
    else:
        vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(corpus, args.min_freq, args.max_vocab)
        model_cfg = ModelConfig(
            vocab_size=len(vocab), group_count=lexicon.group_count, hidden_dim=args.hidden_dim,
            layer_count=args.layers, head_count=args.heads, ff_dim=args.ff_dim, max_seq_len=args.max_len,
            augment_inputs=not args.no_augment,
        )
    train_cfg = TrainConfig(
        loss_mode=LossMode(args.loss), mask_rate=args.mask_rate, learning_rate=args.lr,
        batch_size=args.batch_size, total_steps=args.steps, seed=args.seed,
        checkpoint_every=args.checkpoint_every, init_std=args.init_std, corrupt_split=args.corrupt_split,
    )
    dump = open(args.dump_targets, "w", encoding="utf-8") if args.dump_targets else None
    try:
        with _output(args.metrics) as metrics:
            train_loop(corpus, lexicon, vocab, model_cfg, train_cfg, metrics=metrics, checkpoint_path=args.out,
                       resume=resume, dump_targets=dump, threads=args.threads)
    finally:
        if dump is not None:
            dump.close()
    log.info("checkpoint written to %s", args.out)
    return EXIT_OK


def _load(args):
    ckpt = load_checkpoint(args.checkpoint)
    return ckpt, ckpt.vocabulary(), _lexicon(args.lexicon)


def cmd_eval_nn(args) -> int:
    ckpt, vocab, lexicon = _load(args)
    for word in args.word:
        _emit(ev.nearest_neighbors(word, args.k, ckpt.params, vocab, lexicon, ev.Space(args.space)).to_dict())
    return EXIT_OK


def cmd_eval_cluster(args) -> int:
    ckpt, vocab, lexicon = _load(args)
    spaces = list(ev.Space) if args.space == "both" else [ev.Space(args.space)]
    for space in spaces:
        _emit(ev.group_silhouette(ckpt.params, vocab, lexicon, space).to_dict())
    return EXIT_OK


def cmd_eval_synonyms(args) -> int:
    ckpt, vocab, lexicon = _load(args)
    if args.pairs:
        with open(args.pairs, encoding="utf-8") as fh:
            pairs = [tuple(line.split()[:2]) for line in fh if line.strip()]
    else:
        pairs = [p for p in sibling_pairs(lexicon) if p[0] in vocab and p[1] in vocab]
    space = ev.Space(args.space)
    _emit({"report": "synonyms", "space": space.value, "pairs": len(pairs),
           "mean_cosine": ev.synonym_similarity(pairs, ckpt.params, vocab, lexicon, space)})
    return EXIT_OK


def cmd_finetune(args) -> int:
    ckpt, _, lexicon = _load(args)
    with open(args.tagged, encoding="utf-8") as fh:
        tagged = ev.read_tagged(fh)
    result = ev.finetune_token_classifier(ckpt, tagged, args.epochs, args.lr, lexicon,
                                          batch_size=args.batch_size, seed=args.seed, holdout=args.holdout)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt, vocab, lexicon = _load(args)
    words = list(vocab.words) if args.all_words else ev.clinical_words(vocab, lexicon)
    space = ev.Space(args.space)
    points = ev.project_2d(ev.word_vectors(words, ckpt.params, vocab, lexicon, space), words)
    groups = [lexicon.group_name(g) if (g := lexicon.group_of(w)) is not None else "NONE" for w in words]
    with _output(args.out) as out:
        ev.write_projection_tsv(points, groups, out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for result in run_gradcheck(args.seed):
        worst = max(worst, result.max_rel_error)
        _emit({"report": "gradcheck", "mode": result.mode.value, "max_rel_error": result.max_rel_error,
               "worst_param": result.worst[0], "checked": result.checked})
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_NUMERIC


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval-nn": cmd_eval_nn,
    "eval-cluster": cmd_eval_cluster,
    "eval-synonyms": cmd_eval_synonyms,
    "finetune-ner": cmd_finetune,
    "export-embeddings": cmd_export,
    "gradcheck": cmd_gradcheck,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LexiconParseError, CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    sys.exit(run())


if __name__ == "__main__":
    main()
