import json

import pytest

from mmrag.evaluation import load_queries
from mmrag.extractor import Extractor
from mmrag.ingest import chunk_corpus, load_corpus
from mmrag.providers import HashEmbedder, ScriptedChat
from mmrag.store import VectorStore, build_entries

import synthetic


@pytest.fixture
def synth(tmp_path):
    """In-memory index and queries for the synthetic filtered-vs-baseline corpus."""
    corpus, queries = synthetic.build()
    (tmp_path / "corpus.json").write_text(json.dumps(corpus))
    (tmp_path / "queries.json").write_text(json.dumps(queries))
    chunks = chunk_corpus(load_corpus(tmp_path / "corpus.json"))
    embedder = HashEmbedder()
    store = VectorStore()
    store.upsert(build_entries(chunks, embedder.embed_batch([c.text for c in chunks])))
    chat = ScriptedChat(model_name="scripted-extractor")
    for fx in synthetic.extraction_fixtures(queries):
        chat.by_hash[fx["prompt_hash"]] = fx["response"]
    return {
        "store": store,
        "embedder": embedder,
        "queries": load_queries(tmp_path / "queries.json"),
        "extractor": Extractor(chat),
        "chunks": chunks,
    }


# -- acceptance summary ---------------------------------------------------------

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.skipped and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], "skipped"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        label = {"passed": "PASS", "failed": "FAIL"}.get(outcome, "SKIP")
        terminalreporter.write_line(f"[{label}] {name}")
