import json

import pytest
import yaml

from persona_search.cli import evaluate_logs, main

SMALL = {"sim": {"n_docs": 150, "n_sessions": 2, "users": {"focused": 1, "explorer": 1}}}


@pytest.fixture(scope="module")
def logs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    out = root / "run"
    assert main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(out)]) == 0
    return out


def test_index(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    rows = [{"doc_id": "a", "text": "rust parser", "domain": "software"}, {"doc_id": "b", "text": "bond yields"}]
    corpus.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    assert main(["index", "--corpus", str(corpus)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_docs"] == 2


def test_eval_metrics(logs, capsys):
    for metric in ("ndcg", "err", "err_ia", "coverage", "utility_per_token"):
        assert main(["eval", "--logs", str(logs), "--metric", metric, "--k", "5"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["metric"] == metric and out["n"] > 0
        if metric != "utility_per_token":
            assert 0.0 <= out["mean"] <= 1.0


def test_eval_matches_session_log(logs):
    turns = [t for line in (logs / "sessions.jsonl").read_text().splitlines() for t in json.loads(line)["turns"]]
    res = evaluate_logs(logs, "ndcg", 5)
    assert res["mean"] == pytest.approx(sum(t["ndcg"] for t in turns) / len(turns))


@pytest.mark.parametrize("estimator", ["ips", "snips", "dr"])
def test_ope(logs, tmp_path, capsys, estimator):
    target = tmp_path / "t.yaml"
    target.write_text(yaml.safe_dump({"policy": "uniform"}))
    assert main(["ope", "--logs", str(logs), "--target", str(target), "--estimator", estimator]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["estimator"] == estimator and out["n"] > 0


def test_ablate(tmp_path, capsys):
    assert main(["ablate", "--experiment", "diversity", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["experiment"] == "diversity"


def test_errors_return_2(tmp_path, capsys):
    assert main(["ablate", "--experiment", "nope", "--out", str(tmp_path)]) == 2
    assert main(["index", "--corpus", str(tmp_path / "missing.jsonl")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("memory: {w_cap: -1}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
