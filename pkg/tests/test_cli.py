from __future__ import annotations

import hashlib
import json

import pytest

from fable.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "synth"), "--docs", "4", "--queries", "6", "--tokens-per-doc", "1500",
                 "--seed", "3"]) == 0
    assert main(["index", str(root / "synth" / "corpus"), str(root / "idx")]) == 0
    return root


def test_index_prints_stats(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "index", workspace / "synth" / "corpus", tmp_path / "i2", "--max-depth", "3")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 4
    assert all("depth=" in l and "leaves=" in l for l in lines)
    meta = json.loads((tmp_path / "i2" / "meta.json").read_text())
    assert meta["retrieval"]["max_depth"] == 3


def test_index_is_byte_stable(workspace, capsys, tmp_path):
    code, _, _ = run(capsys, "index", workspace / "synth" / "corpus", tmp_path / "again")
    assert code == 0
    for name in ("forest.jsonl", "vectors.fvs", "meta.json"):
        assert digest(tmp_path / "again" / name) == digest(workspace / "idx" / name)


def test_index_refuses_populated_dir(workspace, capsys):
    code, _, err = run(capsys, "index", workspace / "synth" / "corpus", workspace / "idx")
    assert code == 2 and "--force" in err


def test_index_empty_corpus(capsys, tmp_path):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "index", tmp_path / "empty", tmp_path / "out")
    assert code == 2 and "no documents" in err


def test_query_json(workspace, capsys):
    q = json.loads((workspace / "synth" / "queries.jsonl").read_text().splitlines()[0])
    code, out, err = run(capsys, "query", workspace / "idx", q["query"], "--budget", "512", "--json")
    assert code == 0
    res = json.loads(out)
    assert res["token_count"] <= 512
    assert set(res) >= {"stage", "status", "chunks", "audit"}
    assert "tokens=" in err


def test_query_text_and_llm_failure(workspace, capsys):
    code, out, _ = run(capsys, "query", workspace / "idx", "What about mk0000?", "--budget", "300",
                       "--inject-llm-failure")
    assert code == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["query", "IDX", "q", "--budget", "0"],
        ["query", "IDX", "q", "--mode", "magic"],
        ["query", "IDX", "q", "--hierarchy-threshold", "9"],
        ["eval", "IDX", "Q", "--modes", "nodes,magic"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors_exit_2(workspace, capsys, argv):
    subst = {"IDX": workspace / "idx", "Q": workspace / "synth" / "queries.jsonl"}
    code, _, _ = run(capsys, *[subst.get(a, a) for a in argv])
    assert code == 2


def test_missing_index_is_runtime_failure(capsys, tmp_path):
    code, _, err = run(capsys, "query", tmp_path / "nothing", "q")
    assert code == 1 and err


def test_eval_writes_tables(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "eval", workspace / "idx", workspace / "synth" / "queries.jsonl",
                       "--modes", "nodes,treexp", "--budgets", "256,1024", "--out", tmp_path / "m")
    assert code == 0
    assert out.splitlines()[0].endswith("latency_ms")
    assert len(out.strip().splitlines()) == 5
    first = (tmp_path / "m" / "metrics.tsv").read_bytes()
    run(capsys, "eval", workspace / "idx", workspace / "synth" / "queries.jsonl",
        "--modes", "nodes,treexp", "--budgets", "256,1024", "--out", tmp_path / "m2", "--workers", "3")
    assert (tmp_path / "m2" / "metrics.tsv").read_bytes() == first


def test_eval_gold_mismatch_exit_1(workspace, capsys, tmp_path):
    q = tmp_path / "q.jsonl"
    q.write_text(json.dumps({"query": "x", "gold": [{"doc_id": "doc_0001", "chunk_id": "c9999"}]}) + "\n")
    code, _, err = run(capsys, "eval", workspace / "idx", q)
    assert code == 1 and "mismatch" in err


def test_synth_refuses_populated_dir(workspace, capsys):
    code, _, _ = run(capsys, "synth", workspace / "synth")
    assert code == 2


def test_bad_config_exit_2(workspace, capsys, tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("[retrieval]\nwhat = 1\n")
    code, _, err = run(capsys, "index", workspace / "synth" / "corpus", tmp_path / "o", "--config", cfg)
    assert code == 2 and "what" in err
