"""Query-time flow: filter -> embed -> filtered top-N search -> rerank -> top-K -> answer."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import MMRagError, ProviderError
from .evaluation import BenchmarkQuery
from .filters import FilterExpr
from .ingest import ChunkingConfig
from .providers import ChatModel, Embedder, Reranker
from .store import ScoredChunk, VectorStore

log = logging.getLogger(__name__)

QA_INSTRUCTION = ("Answer the question based only on the context below. If the context is "
                  "insufficient, answer 'Insufficient information.'")
NO_CONTEXT = "No context found."


@dataclass(frozen=True)
class PipelineConfig:
    prefilter_k: int = 20
    final_k: int = 10
    generation_k: int = 6
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)

    def __post_init__(self):
        for k in (self.final_k, self.generation_k):
            if not 0 < k <= self.prefilter_k:
                raise ValueError("need 0 < final_k <= prefilter_k")


@dataclass
class RetrievalResult:
    query_id: str
    filter: FilterExpr
    chunks: list[ScoredChunk]
    timings: dict[str, float] = field(default_factory=dict)
    degraded: bool = False
    candidate_ids: list[str] = field(default_factory=list)
    error: str | None = None

    def to_dict(self, with_timings: bool = True) -> dict:
        d = {
            "query_id": self.query_id,
            "filter": self.filter.to_raw(),
            "degraded": self.degraded,
            "error": self.error,
            "chunks": [c.to_dict() for c in self.chunks],
        }
        if with_timings:
            d["timings"] = self.timings
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalResult":
        return cls(
            query_id=d["query_id"],
            filter=FilterExpr.from_raw_normalized(d["filter"]),
            chunks=[ScoredChunk.from_dict(c) for c in d["chunks"]],
            timings=d.get("timings", {}),
            degraded=d.get("degraded", False),
            error=d.get("error"),
        )


@dataclass
class GenerationResult:
    query_id: str
    response: str | None
    chunks_used: list[str]
    model_name: str
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


FilterSource = Callable[[str, str], FilterExpr]


@dataclass
class Retriever:
    store: VectorStore
    embedder: Embedder
    reranker: Reranker
    filter_source: FilterSource | None = None  # None means baseline: no filtering
    cfg: PipelineConfig = field(default_factory=PipelineConfig)

    def retrieve(self, query: BenchmarkQuery, final_k: int | None = None) -> RetrievalResult:
        final_k = final_k or self.cfg.final_k
        timings = {}
        t0 = time.perf_counter()
        flt = FilterExpr()
        if self.filter_source is not None:
            flt = self.filter_source(query.query_id, query.query)
        t1 = time.perf_counter()
        timings["extract"] = t1 - t0
        (q_vec,) = self.embedder.embed_batch([query.query])
        t2 = time.perf_counter()
        timings["embed"] = t2 - t1
        candidates = self.store.search(q_vec, flt, self.cfg.prefilter_k)
        degraded = False
        if flt and not candidates:
            # over-restrictive filter: fall back once to unfiltered search
            degraded = True
            candidates = self.store.search(q_vec, FilterExpr(), self.cfg.prefilter_k)
        t3 = time.perf_counter()
        timings["search"] = t3 - t2
        reranked = self.reranker.rerank(query.query, candidates)
        timings["rerank"] = time.perf_counter() - t3
        return RetrievalResult(
            query_id=query.query_id,
            filter=flt,
            chunks=reranked[:final_k],
            timings=timings,
            degraded=degraded,
            candidate_ids=[c.chunk_id for c in candidates],
        )


def build_qa_prompt(question: str, chunks: Sequence[ScoredChunk]) -> str:
    parts = [QA_INSTRUCTION, "", "Context:"]
    if not chunks:
        parts.append(NO_CONTEXT)
    for i, c in enumerate(chunks, 1):
        parts.append(f"[{i}] Source: {c.metadata.source} | Published: {c.metadata.published_at or 'unknown'}")
        parts.append(c.text)
        parts.append("")
    parts += ["", f"Question: {question}", "Answer:"]
    return "\n".join(parts)


def generate(query: BenchmarkQuery, retrieval: RetrievalResult, llm: ChatModel,
             max_tokens: int = 256) -> GenerationResult:
    prompt = build_qa_prompt(query.query, retrieval.chunks)
    response = llm.complete(prompt, temperature=0.0, max_tokens=max_tokens)
    return GenerationResult(
        query_id=query.query_id,
        response=response,
        chunks_used=[c.chunk_id for c in retrieval.chunks],
        model_name=getattr(llm, "model_name", ""),
    )


def run_retrieval(retriever: Retriever, queries: Sequence[BenchmarkQuery], final_k: int | None = None,
                  workers: int = 4) -> list[RetrievalResult]:
    """Retrieve for every query; output order equals input order, failures are per query."""

    def one(q):
        try:
            return retriever.retrieve(q, final_k)
        except (MMRagError, ValueError) as exc:
            log.error("retrieval failed for %s: %s", q.query_id, exc)
            return RetrievalResult(q.query_id, FilterExpr(), [], error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, queries))


def run_generation(queries: Sequence[BenchmarkQuery], retrievals: Sequence[RetrievalResult],
                   llm: ChatModel, workers: int = 4) -> list[GenerationResult]:
    by_id = {r.query_id: r for r in retrievals}

    def one(q):
        r = by_id[q.query_id]
        try:
            return generate(q, r, llm)
        except ProviderError as exc:
            log.error("generation failed for %s: %s", q.query_id, exc)
            return GenerationResult(q.query_id, None, [c.chunk_id for c in r.chunks],
                                    getattr(llm, "model_name", ""), error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, queries))


def run_benchmark(retriever: Retriever, queries: Sequence[BenchmarkQuery], llm: ChatModel | None = None,
                  final_k: int | None = None, workers: int = 4):
    """Retrieval for all queries, plus generation when ``llm`` is given."""
    retrievals = run_retrieval(retriever, queries, final_k, workers)
    if llm is None:
        return retrievals
    return retrievals, run_generation(queries, retrievals, llm, workers)


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
