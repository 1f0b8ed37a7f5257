"""Benchmark queries and scoring: MRR@K, MAP@K, Hit@K and answer accuracy."""
from __future__ import annotations

import json
import logging
import re
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import AlignmentError, EmptyQuerySet, SchemaError

log = logging.getLogger(__name__)

QUESTION_TYPES = ("inference", "comparison", "temporal", "null")
STOP_WORDS = frozenset({"a", "an", "the", "is", "are", "was", "were", "to", "of", "in", "on", "and", "or"})


@dataclass(frozen=True)
class Evidence:
    fact: str
    source: str
    title: str = ""
    published_at: str = ""


@dataclass(frozen=True)
class BenchmarkQuery:
    query_id: str
    query: str
    answer: str
    question_type: str
    evidence_list: tuple[Evidence, ...] = field(default_factory=tuple)

    @property
    def is_null(self) -> bool:
        return self.question_type == "null" or not self.evidence_list


def _question_type(raw: str) -> str:
    qt = raw.lower().strip()
    if qt.endswith("_query"):
        qt = qt[: -len("_query")]
    return qt


def load_queries(path: str | Path) -> list[BenchmarkQuery]:
    """Read a MultiHop-RAG style query file (JSON array).

    ``query_id`` defaults to ``q<index>``; ``question_type`` accepts both
    ``temporal`` and ``temporal_query``.
    """
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise SchemaError(-1, "<root>", f"{path}: expected a JSON array of queries")
    out = []
    for i, rec in enumerate(records):
        for name in ("query", "answer", "question_type"):
            if not isinstance(rec.get(name), str):
                raise SchemaError(i, name)
        qt = _question_type(rec["question_type"])
        if qt not in QUESTION_TYPES:
            raise SchemaError(i, "question_type", f"record {i}: unknown question_type {rec['question_type']!r}")
        evidence = []
        for j, ev in enumerate(rec.get("evidence_list") or []):
            if not ev.get("fact") or not ev.get("source"):
                raise SchemaError(i, f"evidence_list[{j}]")
            evidence.append(Evidence(ev["fact"], ev["source"], ev.get("title", ""), ev.get("published_at", "")))
        if qt != "null" and not evidence:
            raise SchemaError(i, "evidence_list", f"record {i}: non-null query without evidence")
        out.append(BenchmarkQuery(str(rec.get("query_id", f"q{i}")), rec["query"], rec["answer"], qt, tuple(evidence)))
    return out


# -- relevance -------------------------------------------------------------

def normalize_text(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    kept = "".join(ch for ch in text.lower() if not unicodedata.category(ch).startswith("P"))
    return " ".join(kept.split())


def is_relevant(chunk, ev: Evidence) -> bool:
    if chunk.metadata.source != ev.source:
        return False
    return normalize_text(ev.fact) in normalize_text(chunk.text)


def _match_sets(chunks, evidence, k):
    """For each of the top-k chunks, the indices of evidence items it matches."""
    facts = [normalize_text(ev.fact) for ev in evidence]
    out = []
    for chunk in list(chunks)[:k]:
        text = normalize_text(chunk.text)
        out.append({i for i, ev in enumerate(evidence)
                    if chunk.metadata.source == ev.source and facts[i] in text})
    return out


def _scored_queries(results: Mapping[str, Sequence], queries: Sequence[BenchmarkQuery]):
    scored = [q for q in queries if not q.is_null]
    if not scored:
        raise EmptyQuerySet("no non-null queries to score")
    return [(q, results.get(q.query_id, ())) for q in scored]


def reciprocal_rank(chunks, evidence, k) -> float:
    for rank, hits in enumerate(_match_sets(chunks, evidence, k), 1):
        if hits:
            return 1.0 / rank
    return 0.0


def average_precision(chunks, evidence, k) -> float:
    """AP@k with greedy first-match crediting; each evidence item counts once."""
    if k <= 0 or not evidence:
        return 0.0
    credited: set[int] = set()
    precision_sum = 0.0
    for rank, hits in enumerate(_match_sets(chunks, evidence, k), 1):
        fresh = sorted(hits - credited)
        if fresh:
            credited.add(fresh[0])
            precision_sum += len(credited) / rank
    return precision_sum / min(k, len(evidence))


def evidence_found(chunks, evidence, k) -> int:
    found = set()
    for hits in _match_sets(chunks, evidence, k):
        found |= hits
    return len(found)


def mrr_at_k(results, queries, k: int) -> float:
    pairs = _scored_queries(results, queries)
    return sum(reciprocal_rank(c, q.evidence_list, k) for q, c in pairs) / len(pairs)


def map_at_k(results, queries, k: int) -> float:
    pairs = _scored_queries(results, queries)
    return sum(average_precision(c, q.evidence_list, k) for q, c in pairs) / len(pairs)


def hit_at_k(results, queries, k: int) -> float:
    """Micro-average over (query, evidence) pairs."""
    pairs = _scored_queries(results, queries)
    total = sum(len(q.evidence_list) for q, _ in pairs)
    return sum(evidence_found(c, q.evidence_list, k) for q, c in pairs) / total


@dataclass(frozen=True)
class RetrievalMetrics:
    k: int
    n_queries: int
    mrr_at_k: float
    map_at_k: float
    hit_at_k: float
    hit_at_4: float

    def to_report(self) -> dict:
        k = self.k
        return {
            "n_queries": self.n_queries,
            f"mrr_at_{k}": self.mrr_at_k,
            f"map_at_{k}": self.map_at_k,
            f"hits_at_{k}": self.hit_at_k,
            "hits_at_4": self.hit_at_4,
        }


def retrieval_metrics(results, queries, k: int = 10) -> RetrievalMetrics:
    n = len(_scored_queries(results, queries))
    metrics = RetrievalMetrics(
        k=k,
        n_queries=n,
        mrr_at_k=mrr_at_k(results, queries, k),
        map_at_k=map_at_k(results, queries, k),
        hit_at_k=hit_at_k(results, queries, k),
        hit_at_4=hit_at_k(results, queries, 4),
    )
    if metrics.hit_at_k < metrics.map_at_k:
        # possible because Hit@K is micro-averaged over evidence and MAP@K macro-averaged over queries
        log.warning("hits@%d (%.4f) below map@%d (%.4f)", k, metrics.hit_at_k, k, metrics.map_at_k)
    return metrics


# -- generation accuracy ---------------------------------------------------

_PUNCT_RE = re.compile(f"[{re.escape(string.punctuation)}‘’“”–—…]")


def answer_words(text: str, strict: bool = False) -> set[str]:
    words = set(_PUNCT_RE.sub(" ", text.lower()).split())
    return words if strict else words - STOP_WORDS


def is_correct(response: str | None, gold: str, strict: bool = False) -> bool:
    """True iff any word of the response also occurs in the gold answer.

    A side made only of stop words is compared with its stop words kept.
    """
    if not response:
        return False
    said = answer_words(response, strict) or answer_words(response, True)
    expected = answer_words(gold, strict) or answer_words(gold, True)
    return bool(said & expected)


def accuracy(responses: Mapping[str, str | None], queries: Sequence[BenchmarkQuery],
             strict: bool = False) -> dict:
    """Overall and per-question-type accuracy.

    ``strict`` disables the stop-word filter, i.e. any shared word counts.
    """
    ids = [q.query_id for q in queries]
    if set(responses) != set(ids) or len(set(ids)) != len(ids):
        raise AlignmentError("responses and queries are not aligned by query_id")
    if not queries:
        return {"overall": 0.0, "by_type": {}}
    by_type: dict[str, list[bool]] = {}
    flags = []
    for q in queries:
        ok = is_correct(responses[q.query_id], q.answer, strict)
        flags.append(ok)
        by_type.setdefault(q.question_type, []).append(ok)
    return {
        "overall": sum(flags) / len(flags),
        "by_type": {t: sum(v) / len(v) for t, v in by_type.items()},
    }
