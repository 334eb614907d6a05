import json
from pathlib import Path

import numpy as np
import pytest

from seqattn import data as D
from seqattn.cli import main
from seqattn.reader import ReaderConfig, count_parameters, load_checkpoint

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def synthetic(tmp_path):
    for name, seed in (("train", 1), ("dev", 2)):
        assert main(["gen-synthetic", "--num-examples", "40", "--num-entities", "3", "--seed", str(seed),
                     "--out", str(tmp_path / f"{name}.jsonl")]) == 0
    return tmp_path


SMALL = ["--embed-dim", "6", "--hidden", "4", "--vocab-size", "200", "--batch-size", "8"]


def test_count_params_paper_preset(capsys):
    assert main(["count-params", "--variant", "sa-elementwise", "--preset", "paper"]) == 0
    out = capsys.readouterr().out
    expected = count_parameters(ReaderConfig.paper("sa-elementwise"))
    assert f"{expected.total:,}" in out
    for group in expected.groups:
        assert group in out


def test_count_params_json(capsys):
    main(["count-params", "--variant", "sr-dot", "--preset", "paper", "--json"])
    rec = json.loads(capsys.readouterr().out)
    assert rec["total"] == 5_437_760 and sum(rec["groups"].values()) == rec["total"]


def test_import_validate_relabel(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["import", str(FIXTURES / "cnn_mixed"), "--out", str(out), "--validate", "--relabel"]) == 0
    assert json.loads(capsys.readouterr().out) == {"total": 10, "kept": 7, "dropped": 3}
    exs = D.read_dataset(out)
    assert len(exs) == 7 and exs[0].passage[0] == "@entity0"


def test_import_malformed_exits_nonzero(tmp_path, capsys):
    code = main(["import", str(FIXTURES / "malformed" / "missing_answer.question"), "--out", str(tmp_path / "x")])
    assert code != 0
    err = capsys.readouterr().err
    assert "line 7" in err and "answer" in err


def test_validate_command(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    main(["import", str(FIXTURES / "cnn_mixed"), "--out", str(raw)])
    capsys.readouterr()
    assert main(["validate", str(raw), "--out", str(tmp_path / "ok.jsonl"), "--relabel"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["dropped"] == 3 and rep["dropped_ids"] == [7, 8, 9]


def test_train_epochs_zero_writes_init_checkpoint(synthetic):
    ckpt = synthetic / "m.npz"
    code = main(["train", "--train", str(synthetic / "train.jsonl"), "--out", str(ckpt), "--epochs", "0", *SMALL])
    assert code == 0
    model, vocab, meta = load_checkpoint(ckpt)
    assert meta["extra"]["best_epoch"] == 0
    assert np.all(np.abs(model.output.data) <= 0.01)


def test_train_eval_dump_pipeline(synthetic, capsys):
    ckpt, metrics = synthetic / "m.npz", synthetic / "metrics.jsonl"
    args = ["train", "--train", str(synthetic / "train.jsonl"), "--dev", str(synthetic / "dev.jsonl"),
            "--out", str(ckpt), "--metrics", str(metrics), "--epochs", "2", "--variant", "sa-elementwise",
            "--random-embedding-std", "1.0", "--lr", "0.5", *SMALL]
    assert main(args) == 0
    lines = [json.loads(x) for x in metrics.read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2]

    preds = synthetic / "preds.jsonl"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(synthetic / "dev.jsonl"),
                 "--predictions", str(preds)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0 <= rep["accuracy"] <= 1 and rep["examples"] == 40
    assert len(preds.read_text().splitlines()) == 40

    dump = synthetic / "att.json"
    assert main(["dump-attention", "--checkpoint", str(ckpt), "--data", str(synthetic / "dev.jsonl"),
                 "--example-id", "3", "--out", str(dump)]) == 0
    rec = json.loads(dump.read_text())
    assert rec["example_id"] == 3 and abs(sum(rec["alpha"]) - 1) < 1e-9


def test_config_file_and_flag_override(synthetic, monkeypatch):
    cfg = synthetic / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "hidden": 3, "embed_dim": 5, "vocab_size": 100}))
    monkeypatch.setenv("SEQATTN_DATA_DIR", str(synthetic))
    ckpt = synthetic / "m.npz"
    assert main(["train", "--config", str(cfg), "--train", "train.jsonl", "--out", str(ckpt), "--hidden", "2"]) == 0
    model, _, _ = load_checkpoint(ckpt)
    assert (model.config.hidden, model.config.embed_dim) == (2, 5)


def test_config_unknown_key(synthetic, capsys):
    cfg = synthetic / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 1}))
    assert main(["count-params", "--config", str(cfg)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_grid_command(synthetic, capsys):
    out = synthetic / "grid.jsonl"
    assert main(["grid", "--train", str(synthetic / "train.jsonl"), "--dev", str(synthetic / "dev.jsonl"),
                 "--test", str(synthetic / "dev.jsonl"), "--epochs", "1", "--out", str(out), *SMALL]) == 0
    assert len(out.read_text().splitlines()) == 6
    assert "sa-partial-bilinear" in capsys.readouterr().out


def test_unknown_subcommand_and_flag(capsys):
    assert main(["frobnicate"]) != 0
    assert main(["count-params", "--bogus"]) != 0
    assert "usage" in capsys.readouterr().err


def test_missing_dataset(capsys):
    assert main(["validate", "/nonexistent/file.jsonl"]) == 1
    assert "no such dataset" in capsys.readouterr().err
