import json
import subprocess
import sys

import pytest

from mmrag.cli import main
from mmrag.store import VectorStore

import synthetic


@pytest.fixture
def ws(tmp_path):
    return synthetic.write_workspace(tmp_path / "ws")


def run(*args):
    return main([str(a) for a in args])


def results(ws, name):
    return json.loads((ws.parent / "results" / name).read_text())


def test_ingest_smoke(ws, capsys):
    assert run("ingest", "--config", ws) == 0
    store = VectorStore.load(ws.parent / "index.mmrag")
    report = results(ws, "ingest_report.json")
    assert report["chunks"] == len(store) > 0
    assert report["documents"] == 79 and report["dim"] == 256


def test_ingest_missing_corpus(ws, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("ingest", "--config", ws, "--corpus", missing) == 2
    assert str(missing) in capsys.readouterr().err


def test_ingest_bad_record_exit_2(ws, capsys):
    corpus = ws.parent / "corpus.json"
    records = json.loads(corpus.read_text())
    del records[3]["source"]
    corpus.write_text(json.dumps(records))
    assert run("ingest", "--config", ws) == 2
    assert "record 3" in capsys.readouterr().err


def test_reingest_replaces_store(ws):
    assert run("ingest", "--config", ws) == 0
    corpus = ws.parent / "corpus.json"
    corpus.write_text(json.dumps(json.loads(corpus.read_text())[:5]))
    assert run("ingest", "--config", ws) == 0
    assert len(VectorStore.load(ws.parent / "index.mmrag")) == 5
    assert not list(ws.parent.glob("*.tmp"))


def test_extract_writes_table1_filters_and_warm_cache(ws):
    assert run("extract", "--config", ws) == 0
    lines = [json.loads(l) for l in (ws.parent / "filter_cache.jsonl").read_text().splitlines()]
    filters = {l["query_id"]: l["filter"] for l in lines}
    assert filters["q0"] == {"source": {"$in": ["TechCrunch", "Engadget"]}}
    assert filters["q1"] == {"source": {"$in": ["The Guardian", "Sporting News"]},
                             "published_at": {"$in": ["December 12, 2023"]}}
    assert filters["q2"] == {"source": {"$nin": ["TechCrunch"]}}
    stats = results(ws, "extraction_stats.json")
    assert stats["provider_calls"] == 4 and stats["pct_with_date"] == 25.0
    assert run("extract", "--config", ws) == 0
    assert results(ws, "extraction_stats.json")["provider_calls"] == 0
    assert len((ws.parent / "filter_cache.jsonl").read_text().splitlines()) == 4


def test_extract_empty_queries(ws):
    (ws.parent / "queries.json").write_text("[]")
    assert run("extract", "--config", ws) == 0
    stats = results(ws, "extraction_stats.json")
    assert stats["empty"] and stats["n_records"] == 0


def test_extract_all_provider_failures_exit_3(ws):
    (ws.parent / "extract_fixtures.jsonl").write_text("")
    assert run("extract", "--config", ws) == 3


def test_eval_retrieval_filtered_beats_baseline(ws):
    assert run("ingest", "--config", ws) == 0
    assert run("eval-retrieval", "--config", ws, "--compare-baseline") == 0
    report = results(ws, "retrieval_metrics.json")
    for key in ("mrr_at_10", "map_at_10", "hits_at_10", "hits_at_4"):
        assert key in report and key in report["baseline"]
    assert report["hits_at_4"] > report["baseline"]["hits_at_4"]
    assert report["hits_at_10"] >= report["hits_at_4"]
    assert report["baseline"]["hits_at_10"] >= report["baseline"]["hits_at_4"]
    assert report["n_queries"] == 3


def test_baseline_flag_before_subcommand(ws):
    assert run("--config", ws, "ingest") == 0
    assert run("--baseline", "--config", ws, "eval-retrieval") == 0
    assert results(ws, "retrieval_metrics.json")["mode"] == "baseline"


def test_retrieve_writes_jsonl(ws):
    assert run("ingest", "--config", ws) == 0
    assert run("retrieve", "--config", ws, "--final-k", 4) == 0
    rows = [json.loads(l) for l in (ws.parent / "results" / "retrieval_results.jsonl").read_text().splitlines()]
    assert [r["query_id"] for r in rows] == ["q0", "q1", "q2", "q3"]
    assert all(len(r["chunks"]) <= 4 for r in rows)
    assert rows[0]["filter"] == {"source": {"$in": ["TechCrunch", "Engadget"]}}


def test_eval_generation_echo_gold(ws):
    assert run("ingest", "--config", ws) == 0
    assert run("eval-generation", "--config", ws) == 0
    report = results(ws, "generation_accuracy.json")
    assert report["overall"] == 1.0
    assert set(report["by_type"]) == {"inference", "comparison", "temporal", "null"}
    rows = [json.loads(l) for l in (ws.parent / "results" / "generation_results.jsonl").read_text().splitlines()]
    assert all(len(r["chunks_used"]) <= 6 for r in rows)


def test_eval_generation_unknown_scores_zero(tmp_path):
    ws = synthetic.write_workspace(tmp_path / "ws", generator_fixtures=[{"contains": "Question:", "response": "unknown"}])
    assert run("ingest", "--config", ws) == 0
    assert run("eval-generation", "--config", ws) == 0
    assert results(ws, "generation_accuracy.json")["overall"] == 0.0


def test_generation_provider_failure_exit_3(tmp_path):
    ws = synthetic.write_workspace(tmp_path / "ws", generator_fixtures=[{"contains": synthetic.Q1, "response": "Yes"}])
    assert run("ingest", "--config", ws) == 0
    assert run("generate", "--config", ws) == 3


def test_bad_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("ingest", "--config", cfg) == 2
    cfg.write_text("{not json")
    assert run("ingest", "--config", cfg) == 2
    assert run("ingest", "--config", tmp_path / "missing.json") == 2


def test_module_entry_point(ws):
    proc = subprocess.run([sys.executable, "-m", "mmrag", "ingest", "--config", str(ws)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["documents"] == 79
