from __future__ import annotations

import json
import subprocess
import sys

import pytest

from entsum.cli import main
from entsum.metrics import EvalReport


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-data", "--seed", "7", "--n-docs", "6", "--out", str(out)]) == 0
    return out


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["gen-data", "--seed", "7", "--n-docs", "50", "--out", str(d)]) == 0
    fa, fb = _files(a), _files(b)
    assert set(fa) == {"corpus.jsonl", "vocab.txt", "lexicon.tsv", "triples.tsv", "teacher.nar",
                       "corpus_config.json"}
    assert fa == fb


def test_prints_resolved_config(tmp_path, capsys):
    main(["gen-data", "--seed", "3", "--n-docs", "1", "--out", str(tmp_path)])
    err = capsys.readouterr().err
    cfg = json.loads(err.splitlines()[0].removeprefix("# config "))
    assert cfg["seed"] == 3 and cfg["n_docs"] == 1
    assert "# seed 3" in err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["gen-data"], ["gen-data", "--out", "x", "--frobnicate", "1"],
                                  ["evaluate", "--data", "x", "--checkpoint", "c", "--beam-size", "many"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_checkpoint_is_data_error(data_dir, capsys):
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(data_dir / "none.nar")]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_corpus_is_data_error(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    argv = ["train", "--data", str(data_dir), "--train-file", str(bad), "--out", str(tmp_path / "run")]
    assert main(argv) == 2
    assert "line 1: missing text_tokens" in capsys.readouterr().err


def test_config_file_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# corpus knobs\nn_docs = 2\nseed=9\n")
    assert main(["gen-data", "--n-docs", "40", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 0
    assert len((tmp_path / "c" / "corpus.jsonl").read_text().splitlines()) == 2
    assert '"seed": 9' in capsys.readouterr().err


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_docs=2\nwarp=9\n")
    assert main(["gen-data", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 1


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    te = out / "transe.nar"
    assert main(["train-transe", "--triples", str(data_dir / "triples.tsv"), "--lexicon",
                 str(data_dir / "lexicon.tsv"), "--epochs", "5", "--out", str(te)]) == 0
    argv = ["train", "--data", str(data_dir), "--out", str(out), "--transe", str(te), "--stage1-epochs", "1",
            "--stage2-epochs", "1", "--n-subsets", "2", "--d-model", "16", "--n-heads", "2", "--d-ff", "32",
            "--enc-layers", "1", "--dec-layers", "1"]
    assert main(argv) == 0
    return out


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"final.nar", "train.log", "config.json", "ckpt_subset00.nar", "ckpt_subset01.nar"} <= names
    log = (trained / "train.log").read_text().splitlines()
    assert log[0].startswith("stage=modal_matching step=1")
    assert any(line.startswith("stage=finetune") and "val_loss=-" not in line for line in log)


def test_summarize_untrained_model(trained, data_dir, capsys):
    ckpt = trained / "final.nar"
    first = json.loads((data_dir / "corpus.jsonl").read_text().splitlines()[0])
    assert main(["summarize", "--data", str(data_dir), "--checkpoint", str(ckpt), "--doc-id", first["id"]]) == 0
    lines = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    ids = lines["summary_ids"].split()
    assert len(ids) <= 16
    assert 0 <= int(lines["image_index"]) < len(first["images"])


def test_summarize_unknown_doc(trained, data_dir):
    assert main(["summarize", "--data", str(data_dir), "--checkpoint", str(trained / "final.nar"),
                 "--doc-id", "nope"]) == 2


def test_evaluate_is_read_only(trained, data_dir, tmp_path, capsys):
    ckpts = [trained / "ckpt_subset00.nar", trained / "ckpt_subset01.nar"]
    before = [p.read_bytes() for p in ckpts]
    argv = ["evaluate", "--data", str(data_dir), "--beam-size", "2", "--out", str(tmp_path)]
    for p in ckpts:
        argv += ["--checkpoint", str(p)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    rep = EvalReport.from_text((tmp_path / "report.txt").read_text())
    assert rep.n_documents == 6
    assert EvalReport.from_json(out.splitlines()[-1]) == rep
    assert [p.read_bytes() for p in ckpts] == before


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "entsum.cli", "gen-data", "--n-docs", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "entsum.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1
