import json
from pathlib import Path

import pytest
import yaml

from castgraph.cli import main

GOLDEN = Path(__file__).parent / "data" / "golden.jsonl"


def small_config(tmp_path, data_dir, **model):
    cfg = {
        "dataset": str(data_dir / "dataset.jsonl"),
        "output_dir": str(tmp_path / "runs"),
        "seed": 2,
        "features": {"dim": 16, "source": "file", "embeddings_path": str(data_dir / "embeddings.jsonl")},
        "synth": {"n_tweets": 200, "dim": 16},
        "model": {"d_model": 8, "heads": 2, "max_epochs": 3, "patience": 2, **model},
    }
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    cfg = root / "s.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 2, "synth": {"n_tweets": 200, "dim": 16}}))
    assert main(["synth", "-c", str(cfg), "--out", str(root)]) == 0
    return root


def test_ingest_golden(capsys):
    assert main(["ingest", str(GOLDEN)]) == 0
    assert "records: 20" in capsys.readouterr().out


def test_ingest_bad_line(tmp_path, capsys):
    lines = GOLDEN.read_text().splitlines()
    lines[2] = '{"tweet_id": "x"'
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(lines) + "\n")
    assert main(["ingest", str(p)]) == 1
    assert "line 3" in capsys.readouterr().out


def test_ingest_empty(tmp_path, capsys):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert main(["ingest", str(p)]) == 0
    assert "records: 0" in capsys.readouterr().out


def test_synth_output_ingests(corpus, tmp_path, capsys):
    assert main(["ingest", str(corpus / "dataset.jsonl")]) == 0
    assert "records: 200" in capsys.readouterr().out
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 2, "synth": {"n_tweets": 200, "dim": 16}}))
    assert main(["synth", "-c", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dataset.jsonl").read_bytes() == (corpus / "dataset.jsonl").read_bytes()
    assert (tmp_path / "embeddings.jsonl").read_bytes() == (corpus / "embeddings.jsonl").read_bytes()


def test_build_graphs_dump(corpus, tmp_path, capsys):
    cfg = small_config(tmp_path, corpus)
    dump = tmp_path / "g.jsonl"
    assert main(["build-graphs", "-c", str(cfg), "--dump", str(dump)]) == 0
    stats = json.loads(capsys.readouterr().out.split("\nwrote")[0])
    assert stats["windows"] == len(dump.read_text().splitlines())
    assert stats["positive_pairs"] + stats["negative_pairs"] == 200 * 2


def test_train_eval_predict(corpus, tmp_path, capsys):
    cfg = small_config(tmp_path, corpus)
    assert main(["train", "-c", str(cfg)]) == 0
    (run,) = (tmp_path / "runs").iterdir()
    assert run.name.endswith("-seed2")
    assert {p.name for p in run.iterdir()} == {"config.json", "checkpoint.json", "curves.csv", "metrics.json"}
    metrics = json.loads((run / "metrics.json").read_text())
    capsys.readouterr()

    assert main(["eval", str(run / "checkpoint.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep == metrics["test"]
    assert main(["eval", str(run / "checkpoint.json")]) == 0
    assert json.loads(capsys.readouterr().out) == rep

    lo, hi = tmp_path / "lo.jsonl", tmp_path / "hi.jsonl"
    assert main(["predict", str(run / "checkpoint.json"), "--threshold", "0.5", "--out", str(lo)]) == 0
    assert main(["predict", str(run / "checkpoint.json"), "--threshold", "0.95", "--out", str(hi)]) == 0
    rows_lo = [json.loads(x) for x in lo.read_text().splitlines()]
    rows_hi = [json.loads(x) for x in hi.read_text().splitlines()]
    key = lambda r: (r["tweet_id"], r["cause"], r["effect"])  # noqa: E731
    assert {key(r) for r in rows_hi} <= {key(r) for r in rows_lo}
    assert all(0.0 <= r["score"] <= 1.0 for r in rows_lo)


def test_overrides_change_run_dir(corpus, tmp_path):
    cfg = small_config(tmp_path, corpus, max_epochs=1)
    assert main(["train", "-c", str(cfg)]) == 0
    assert main(["train", "-c", str(cfg), "--set", "model.lr=0.002"]) == 0
    assert len(list((tmp_path / "runs").iterdir())) == 2


def test_missing_embeddings_named(corpus, tmp_path, capsys):
    cfg = small_config(tmp_path, corpus)
    code = main(["train", "-c", str(cfg), "--set", "features.embeddings_path=/nowhere/emb.jsonl"])
    assert code == 2
    assert "/nowhere/emb.jsonl" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"model": {"depth": 3}}))
    assert main(["train", "-c", str(p)]) == 1
    assert "depth" in capsys.readouterr().err


def test_invalid_config_value(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"model": {"d_model": 30, "heads": 4}}))
    assert main(["train", "-c", str(p)]) == 1


def test_missing_dataset(tmp_path, capsys):
    assert main(["train", "--set", f"dataset={tmp_path / 'none.jsonl'}"]) == 1
    assert "none.jsonl" in capsys.readouterr().err
