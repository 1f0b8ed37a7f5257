"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 provider failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, FormatError, ProviderError, SchemaError
from .evaluation import QUESTION_TYPES, accuracy, retrieval_metrics, load_queries
from .extractor import Extractor, FilterCache, filter_stats
from .ingest import ChunkingConfig, chunk_corpus, load_corpus
from .pipeline import PipelineConfig, Retriever, run_generation, run_retrieval, write_jsonl
from .providers import ProviderConfig, make_chat, make_embedder, make_reranker
from .store import VectorStore, build_entries

log = logging.getLogger("mmrag")

EXIT_INPUT = 2
EXIT_PROVIDER = 3
PROVIDER_ROLES = ("embedder", "reranker", "extractor_llm", "generator_llm")


class CommandFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    corpus: str | None = None
    queries: str | None = None
    store: str = "index.mmrag"
    filter_cache: str = "filter_cache.jsonl"
    results_dir: str = "results"
    body_key: str = "body"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    providers: dict[str, ProviderConfig] = field(default_factory=lambda: {r: ProviderConfig() for r in PROVIDER_ROLES})
    workers: int = 4
    baseline: bool = False
    compare_baseline: bool = False
    strict_accuracy: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        base = path.parent
        cfg = cls()
        for key in ("corpus", "queries", "store", "filter_cache", "results_dir"):
            if data.get(key):
                p = Path(data.pop(key))
                setattr(cfg, key, str(p if p.is_absolute() else base / p))
        for key in ("body_key", "workers", "baseline", "compare_baseline", "strict_accuracy"):
            if key in data:
                setattr(cfg, key, data.pop(key))
        pipe = data.pop("pipeline", {})
        try:
            chunking = ChunkingConfig(pipe.pop("chunk_size", 256), pipe.pop("chunk_overlap", 32))
            cfg.pipeline = PipelineConfig(chunking=chunking, **pipe)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad pipeline config: {exc}") from None
        providers = data.pop("providers", {})
        unknown = set(providers) - set(PROVIDER_ROLES)
        if unknown:
            raise ConfigError(f"unknown provider roles: {sorted(unknown)}")
        for role, pdata in providers.items():
            pdata = dict(pdata)
            if pdata.get("fixtures") and not Path(pdata["fixtures"]).is_absolute():
                pdata["fixtures"] = str(base / pdata["fixtures"])
            try:
                cfg.providers[role] = ProviderConfig.from_dict(pdata)
            except TypeError as exc:
                raise ConfigError(f"bad provider config for {role}: {exc}") from None
        if data:
            raise ConfigError(f"unknown config keys: {sorted(data)}")
        return cfg


def _require(path, what):
    if not path:
        raise CommandFailed(EXIT_INPUT, f"no {what} path configured")
    if not Path(path).exists():
        raise CommandFailed(EXIT_INPUT, f"{what} not found: {path}")
    return path


def _results_dir(cfg) -> Path:
    out = Path(cfg.results_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(cfg, name, report):
    path = _results_dir(cfg) / name
    path.write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(json.dumps(report, indent=2, ensure_ascii=False))
    return path


def cmd_ingest(cfg: RunConfig) -> dict:
    started = time.perf_counter()
    docs = load_corpus(_require(cfg.corpus, "corpus"), cfg.body_key)
    chunks = chunk_corpus(docs, cfg.pipeline.chunking)
    embedder = make_embedder(cfg.providers["embedder"])
    batch = cfg.providers["embedder"].batch_size
    vectors = []
    for i in range(0, len(chunks), batch):
        vectors.extend(embedder.embed_batch([c.text for c in chunks[i:i + batch]]))
    store = VectorStore()
    store.upsert(build_entries(chunks, vectors))
    Path(cfg.store).parent.mkdir(parents=True, exist_ok=True)
    store.persist(cfg.store)
    report = {
        "documents": len(docs),
        "chunks": len(chunks),
        "dim": store.dim,
        "store": str(cfg.store),
        "elapsed_seconds": time.perf_counter() - started,
    }
    _write_report(cfg, "ingest_report.json", report)
    return report


def _queries(cfg):
    return load_queries(_require(cfg.queries, "queries"))


def _extractor(cfg):
    return Extractor(make_chat(cfg.providers["extractor_llm"]), cache=FilterCache(cfg.filter_cache))


def cmd_extract(cfg: RunConfig) -> dict:
    queries = _queries(cfg)
    extractor = _extractor(cfg)
    records = extractor.extract_all(queries, cfg.workers)
    stats = filter_stats(records, queries).to_dict()
    stats["fallbacks"] = sum(r.fallback_used for r in records)
    stats["provider_calls"] = getattr(extractor.llm, "calls", None)
    _write_report(cfg, "extraction_stats.json", stats)
    provider_failed = [r for r in records if r.error and not r.error.startswith("ParseError")]
    if records and len(provider_failed) == len(records):
        raise CommandFailed(EXIT_PROVIDER, "extraction provider failed for every query")
    return stats


def _retriever(cfg, baseline):
    store = VectorStore.load(_require(cfg.store, "store"))
    filter_source = None
    if not baseline:
        extractor = _extractor(cfg)
        filter_source = lambda qid, q: extractor(qid, q).filter  # noqa: E731
    return Retriever(
        store=store,
        embedder=make_embedder(cfg.providers["embedder"]),
        reranker=make_reranker(cfg.providers["reranker"]),
        filter_source=filter_source,
        cfg=cfg.pipeline,
    )


def _retrieval_rows(results):
    return [r.to_dict() for r in results]


def cmd_retrieve(cfg: RunConfig) -> list:
    queries = _queries(cfg)
    results = run_retrieval(_retriever(cfg, cfg.baseline), queries, cfg.pipeline.final_k, cfg.workers)
    path = _results_dir(cfg) / "retrieval_results.jsonl"
    write_jsonl(path, _retrieval_rows(results))
    print(f"wrote {len(results)} retrieval results to {path}")
    return results


def _metrics_for(cfg, queries, baseline):
    k = cfg.pipeline.final_k
    results = run_retrieval(_retriever(cfg, baseline), queries, k, cfg.workers)
    failed = [r for r in results if r.error]
    if failed and len(failed) == len(results):
        raise CommandFailed(EXIT_PROVIDER, f"retrieval failed for every query: {failed[0].error}")
    metrics = retrieval_metrics({r.query_id: r.chunks for r in results}, queries, k)
    report = {"mode": "baseline" if baseline else "multi-meta-rag", "k": k, **metrics.to_report()}
    report["degraded_queries"] = sum(r.degraded for r in results)
    report["failed_queries"] = len(failed)
    return report, results


def cmd_eval_retrieval(cfg: RunConfig) -> dict:
    queries = [q for q in _queries(cfg) if not q.is_null]
    if not queries:
        raise CommandFailed(EXIT_INPUT, "no non-null queries to evaluate")
    report, results = _metrics_for(cfg, queries, cfg.baseline)
    write_jsonl(_results_dir(cfg) / "retrieval_results.jsonl", _retrieval_rows(results))
    if cfg.compare_baseline and not cfg.baseline:
        report["baseline"], _ = _metrics_for(cfg, queries, True)
    _write_report(cfg, "retrieval_metrics.json", report)
    return report


def _generate(cfg):
    queries = _queries(cfg)
    retriever = _retriever(cfg, cfg.baseline)
    retrievals = run_retrieval(retriever, queries, cfg.pipeline.generation_k, cfg.workers)
    llm = make_chat(cfg.providers["generator_llm"])
    generations = run_generation(queries, retrievals, llm, cfg.workers)
    write_jsonl(_results_dir(cfg) / "generation_results.jsonl", [g.to_dict() for g in generations])
    return queries, generations


def _generation_failure(generations):
    failed = [g for g in generations if g.error]
    if failed:
        raise CommandFailed(EXIT_PROVIDER, f"generation failed for {len(failed)} queries: {failed[0].error}")


def cmd_generate(cfg: RunConfig) -> list:
    _, generations = _generate(cfg)
    print(f"wrote {len(generations)} generation results")
    _generation_failure(generations)
    return generations


def cmd_eval_generation(cfg: RunConfig) -> dict:
    queries, generations = _generate(cfg)
    acc = accuracy({g.query_id: g.response for g in generations}, queries, cfg.strict_accuracy)
    report = {
        "mode": "baseline" if cfg.baseline else "multi-meta-rag",
        "model_name": cfg.providers["generator_llm"].model_name or "scripted",
        "k": cfg.pipeline.generation_k,
        "n_queries": len(queries),
        "strict_accuracy": cfg.strict_accuracy,
        "overall": acc["overall"],
        "by_type": {t: acc["by_type"].get(t) for t in QUESTION_TYPES},
        "failed_queries": sum(g.error is not None for g in generations),
    }
    _write_report(cfg, "generation_accuracy.json", report)
    _generation_failure(generations)
    return report


COMMANDS = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "retrieve": cmd_retrieve,
    "eval-retrieval": cmd_eval_retrieval,
    "generate": cmd_generate,
    "eval-generation": cmd_eval_generation,
}


def _common_options(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON run configuration")
    p.add_argument("--workers", type=int, default=default, help="parallel queries (default 4)")
    p.add_argument("--baseline", action="store_true", default=default, help="disable metadata filtering")
    p.add_argument("--strict-accuracy", action="store_true", default=default,
                   help="count any shared word, stop words included")
    p.add_argument("--compare-baseline", action="store_true", default=default,
                   help="eval-retrieval: also report baseline metrics side by side")
    for name in ("corpus", "queries", "store", "filter-cache", "results-dir"):
        p.add_argument(f"--{name}", default=default)
    p.add_argument("--final-k", type=int, default=default)
    p.add_argument("--prefilter-k", type=int, default=default)
    p.add_argument("-v", "--verbose", action="store_true", default=default)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmrag", parents=[_common_options(False)],
                                     description="Metadata-filtered RAG retrieval and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[_common_options(True)])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in ("corpus", "queries", "store", "filter_cache", "results_dir", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    for flag in ("baseline", "strict_accuracy", "compare_baseline"):
        if getattr(args, flag, None):
            setattr(cfg, flag, True)
    overrides = {k: getattr(args, k) for k in ("final_k", "prefilter_k") if getattr(args, k, None) is not None}
    if overrides:
        try:
            cfg.pipeline = replace(cfg.pipeline, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, SchemaError, FormatError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    return 0


if __name__ == "__main__":
    sys.exit(main())
