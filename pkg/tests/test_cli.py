import json
import subprocess
import sys

import pytest

from cuimlm import cli
from cuimlm.checkpoint import load_checkpoint
from cuimlm.synthetic import make_synthetic

SMALL = ["--hidden-dim", "16", "--layers", "1", "--heads", "2", "--ff-dim", "16", "--max-len", "10",
         "--batch-size", "4"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = make_synthetic(120, seed=6)
    (root / "corpus.txt").write_text("\n".join(data.corpus) + "\n")
    (root / "lexicon.tsv").write_text(data.lexicon_tsv)
    (root / "tagged.txt").write_text("\n".join(data.tagged_lines) + "\n")
    (root / "bad.tsv").write_text("lungs\tC0024109\n")
    ckpt = root / "model.ckpt"
    code = cli.run(["train", "--corpus", str(root / "corpus.txt"), "--lexicon", str(root / "lexicon.tsv"),
                    "--out", str(ckpt), "--steps", "3", "--metrics", str(root / "m.jsonl"), *SMALL])
    assert code == 0
    return root


def lines(capsys):
    return [json.loads(x) for x in capsys.readouterr().out.splitlines() if x.startswith("{")]


def test_no_subcommand():
    assert cli.run([]) == cli.EXIT_USAGE


def test_missing_corpus(files, capsys):
    assert cli.run(["train", "--out", str(files / "x.ckpt")]) == cli.EXIT_USAGE
    assert "--corpus" in capsys.readouterr().err


def test_unknown_flag():
    assert cli.run(["train", "--bogus"]) == cli.EXIT_USAGE


def test_bad_lexicon_is_data_error(files, capsys):
    code = cli.run(["train", "--corpus", str(files / "corpus.txt"), "--lexicon", str(files / "bad.tsv"),
                    "--out", str(files / "x.ckpt"), "--steps", "1", *SMALL])
    assert code == cli.EXIT_DATA
    assert "line 1" in capsys.readouterr().err


def test_missing_file_is_data_error(files):
    assert cli.run(["eval-cluster", "--checkpoint", str(files / "nope.ckpt"),
                    "--lexicon", str(files / "lexicon.tsv")]) == cli.EXIT_DATA


def test_corrupt_checkpoint_is_data_error(files):
    (files / "junk.ckpt").write_bytes(b"JUNKJUNKJUNK")
    assert cli.run(["eval-nn", "--checkpoint", str(files / "junk.ckpt"), "--word", "kidney"]) == cli.EXIT_DATA


def test_train_outputs(files):
    records = [json.loads(x) for x in (files / "m.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == [1, 2, 3]
    assert {r["mode"] for r in records} == {"bce-cui"}
    ckpt = load_checkpoint(files / "model.ckpt")
    assert ckpt.step == 3 and ckpt.model_config.hidden_dim == 16


def test_train_twice_identical_bytes(files):
    outs = []
    for name in ("a.ckpt", "b.ckpt"):
        assert cli.run(["train", "--corpus", str(files / "corpus.txt"), "--lexicon", str(files / "lexicon.tsv"),
                        "--out", str(files / name), "--steps", "2", "--seed", "4", "--metrics",
                        str(files / "ignored.jsonl"), *SMALL]) == 0
        outs.append((files / name).read_bytes())
    assert outs[0] == outs[1]


def test_dump_targets_equal_without_lexicon(files):
    dumps = []
    for loss in ("ce", "bce-cui"):
        path = files / f"targets-{loss}.jsonl"
        assert cli.run(["train", "--corpus", str(files / "corpus.txt"), "--out", str(files / "t.ckpt"),
                        "--steps", "2", "--loss", loss, "--dump-targets", str(path), "--metrics",
                        str(files / "ignored.jsonl"), *SMALL]) == 0
        dumps.append(path.read_text())
    assert dumps[0] == dumps[1] and dumps[0]


def test_config_file_and_precedence(files):
    cfg = files / "train.cfg"
    cfg.write_text("# settings\nsteps = 2\nloss = ce\nhidden_dim = 8\nheads = 2\n")
    out = files / "cfg.ckpt"
    assert cli.run(["train", "--config", str(cfg), "--corpus", str(files / "corpus.txt"), "--out", str(out),
                    "--hidden-dim", "16", "--metrics", str(files / "cfg.jsonl"), "--layers", "1",
                    "--ff-dim", "16", "--max-len", "10"]) == 0
    ckpt = load_checkpoint(out)
    assert ckpt.model_config.hidden_dim == 16
    assert ckpt.step == 2 and ckpt.train_config.loss_mode.value == "ce"


def test_config_unknown_key(files):
    cfg = files / "bad.cfg"
    cfg.write_text("stepz = 2\n")
    assert cli.run(["train", "--config", str(cfg), "--corpus", "x", "--out", "y"]) == cli.EXIT_USAGE


def test_build_vocab(files, capsys):
    assert cli.run(["build-vocab", "--corpus", str(files / "corpus.txt"), "--min-freq", "2"]) == 0
    words = capsys.readouterr().out.split()
    assert words and not any(w.startswith("[") for w in words)


def test_eval_nn(files, capsys):
    assert cli.run(["eval-nn", "--checkpoint", str(files / "model.ckpt"), "--word", "kidney", "--word", "heart",
                    "--k", "3"]) == 0
    out = lines(capsys)
    assert [r["query"] for r in out] == ["kidney", "heart"]
    assert all(len(r["neighbors"]) == 3 for r in out)


def test_eval_nn_unknown_word(files):
    assert cli.run(["eval-nn", "--checkpoint", str(files / "model.ckpt"), "--word", "zzz"]) == cli.EXIT_DATA


def test_eval_cluster_both_spaces(files, capsys):
    assert cli.run(["eval-cluster", "--checkpoint", str(files / "model.ckpt"),
                    "--lexicon", str(files / "lexicon.tsv")]) == 0
    assert [r["space"] for r in lines(capsys)] == ["input-table", "augmented-input"]


def test_eval_synonyms(files, capsys):
    assert cli.run(["eval-synonyms", "--checkpoint", str(files / "model.ckpt"),
                    "--lexicon", str(files / "lexicon.tsv")]) == 0
    (rec,) = lines(capsys)
    assert rec["pairs"] > 0 and -1 <= rec["mean_cosine"] <= 1


def test_finetune(files, capsys):
    assert cli.run(["finetune-ner", "--checkpoint", str(files / "model.ckpt"), "--tagged", str(files / "tagged.txt"),
                    "--lexicon", str(files / "lexicon.tsv"), "--epochs", "1"]) == 0
    (rec,) = lines(capsys)
    assert 0 <= rec["accuracy"] <= 1 and "O" in rec["per_tag_f1"]


def test_export_embeddings(files):
    out = files / "proj.tsv"
    assert cli.run(["export-embeddings", "--checkpoint", str(files / "model.ckpt"),
                    "--lexicon", str(files / "lexicon.tsv"), "--out", str(out)]) == 0
    rows = [r.split("\t") for r in out.read_text().splitlines()]
    assert rows and all(len(r) == 4 for r in rows)
    assert {r[1] for r in rows} <= {"ANATOMY", "DISORDER", "CHEMICAL", "PROCEDURE"}


def test_gradcheck_command(capsys):
    assert cli.run(["gradcheck"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cuimlm", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "train" in proc.stdout
