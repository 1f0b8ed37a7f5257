"""Few-shot metadata extraction: prompt, LLM call, parse, normalize, cache."""
from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import AlignmentError, ParseError, ProviderError
from .filters import FilterExpr, RawFilter, normalize_filter, parse_filter
from .providers import ChatModel, prompt_hash

log = logging.getLogger(__name__)

SOURCE_CATALOG = (
    "Yardbarker", "The Guardian", "Revyuh Media", "The Independent - Sports", "Wired",
    "Sport Grill", "Hacker News", "Iot Business News", "Insidesport", "Sporting News",
    "Seeking Alpha", "The Age", "CBSSports.com", "The Sydney Morning Herald",
    "FOX News - Health", "Science News For Students", "Polygon",
    "The Independent - Life and Style", "FOX News - Entertainment", "The Verge",
    "Business Line", "The New York Times", "The Roar | Sports Writers Blog", "Sportskeeda",
    "BBC News - Entertainment & Arts", "Business World", "BBC News - Technology",
    "Essentially Sports", "Mashable", "Advanced Science News", "TechCrunch",
    "Financial Times", "Music Business Worldwide", "The Independent - Travel",
    "FOX News - Lifestyle", "TalkSport", "Yahoo News",
    "Scitechdaily | Science Space And Technology News 2017",
    "Globes English | Israel Business Arena", "Wide World Of Sports", "Rivals", "Fortune",
    "Zee Business", "Business Today | Latest Stock Market And Economy News India",
    "Sky Sports", "Cnbc | World Business News Leader", "Eos: Earth And Space Science News",
    "Live Science: The Most Interesting Articles", "Engadget",
)

DEFAULT_EXAMPLES = (
    (
        "Who is the individual associated with the cryptocurrency industry facing a criminal "
        "trial on fraud and conspiracy charges, as reported by both The Verge and TechCrunch, "
        "and is accused by prosecutors of committing fraud for personal gain?",
        "{'source': {'$in': ['The Verge', 'TechCrunch']}}",
    ),
    (
        "After the TechCrunch report on October 7, 2023, concerning Dave Clark's comments on "
        "Flexport, and the subsequent TechCrunch article on October 30, 2023, regarding Ryan "
        "Petersen's actions at Flexport, was there a change in the nature of the events reported?",
        "{'source': {'$in': ['TechCrunch']}, 'published_at': {'$in': ['October 7, 2023', 'October 30, 2023']}}",
    ),
    (
        "Which company, known for its dominance in the e-reader space and for offering exclusive "
        "invite-only deals during sales events, faced a stock decline due to an antitrust lawsuit "
        "reported by 'The Sydney Morning Herald' and discussed by sellers in a 'Cnbc | World "
        "Business News Leader' article?",
        "{'source': {'$in': ['The Sydney Morning Herald', 'Cnbc | World Business News Leader']}}",
    ),
)

RULE = "-" * 40


@dataclass(frozen=True)
class PromptTemplate:
    instruction: str = ("Given the question, extract the metadata to filter the database about "
                        "article sources. Avoid stopwords.")
    source_catalog: tuple[str, ...] = SOURCE_CATALOG
    examples: tuple[tuple[str, str], ...] = DEFAULT_EXAMPLES
    suffix: str = "If you detect multiple queries, return the answer for the first. Now it is your turn:"

    def __post_init__(self):
        if not self.examples:
            raise ValueError("prompt template needs at least one example")

    def catalog_line(self) -> str:
        return "The sources can only be from the list: [" + ", ".join(f"'{s}'" for s in self.source_catalog) + "]"


DEFAULT_TEMPLATE = PromptTemplate()


def build_prompt(tmpl: PromptTemplate, query: str) -> str:
    if not query:
        raise ValueError("query must be non-empty")
    lines = [tmpl.instruction, RULE, tmpl.catalog_line(), RULE, "Examples to follow:"]
    for question, answer in tmpl.examples:
        lines.append(f"Question: {question}")
        lines.append(f"Answer: {answer}")
    lines += [RULE, tmpl.suffix, f"Question: {query}", "Answer:"]
    return "\n".join(lines)


@dataclass
class ExtractionRecord:
    query_id: str
    raw_response: str
    raw_filter: RawFilter
    filter: FilterExpr
    latency: float
    fallback_used: bool
    model_name: str = ""
    prompt_hash: str = ""
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "query_id": self.query_id,
            "model_name": self.model_name,
            "prompt_hash": self.prompt_hash,
            "raw_response": self.raw_response,
            "raw_filter": self.raw_filter,
            "filter": self.filter.to_raw(),
            "latency": self.latency,
            "fallback_used": self.fallback_used,
            "error": self.error,
        }, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "ExtractionRecord":
        d = json.loads(line)
        return cls(
            query_id=d["query_id"],
            raw_response=d["raw_response"],
            raw_filter=d["raw_filter"],
            filter=FilterExpr.from_raw_normalized(d["filter"]),
            latency=d["latency"],
            fallback_used=d["fallback_used"],
            model_name=d.get("model_name", ""),
            prompt_hash=d.get("prompt_hash", ""),
            error=d.get("error"),
        )


def extract(query_id: str, query: str, llm: ChatModel, tmpl: PromptTemplate = DEFAULT_TEMPLATE,
            catalog: Sequence[str] | None = None) -> ExtractionRecord:
    """Run one extraction. Provider and parse failures yield an empty filter, never an exception."""
    catalog = tmpl.source_catalog if catalog is None else catalog
    prompt = build_prompt(tmpl, query)
    started = time.perf_counter()
    raw_response, raw, error = "", {}, None
    try:
        raw_response = llm.complete(prompt, temperature=0.0, max_tokens=256)
        raw = parse_filter(raw_response)
    except (ProviderError, ParseError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        log.warning("extraction fallback for %s: %s", query_id, error)
    latency = time.perf_counter() - started
    flt = normalize_filter(raw, catalog)
    if isinstance(raw, dict) and "source" in raw and "source" not in flt.clauses:
        log.info("query %s: no extracted source matched the catalog", query_id)
    return ExtractionRecord(
        query_id=query_id,
        raw_response=raw_response,
        raw_filter=raw,
        filter=flt,
        latency=latency,
        fallback_used=error is not None,
        model_name=getattr(llm, "model_name", ""),
        prompt_hash=prompt_hash(prompt),
        error=error,
    )


class FilterCache:
    """Append-only JSONL of extraction records keyed by (model name, prompt hash)."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], ExtractionRecord] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = ExtractionRecord.from_json(line)
                        self._records[(rec.model_name, rec.prompt_hash)] = rec

    def __len__(self):
        return len(self._records)

    def get(self, model_name: str, phash: str) -> ExtractionRecord | None:
        return self._records.get((model_name, phash))

    def put(self, rec: ExtractionRecord) -> None:
        with self._lock:
            self._records[(rec.model_name, rec.prompt_hash)] = rec
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")


@dataclass
class Extractor:
    """Cached extraction bound to one LLM and template."""

    llm: ChatModel
    tmpl: PromptTemplate = DEFAULT_TEMPLATE
    cache: FilterCache = field(default_factory=FilterCache)
    catalog: Sequence[str] | None = None

    def __call__(self, query_id: str, query: str) -> ExtractionRecord:
        model = getattr(self.llm, "model_name", "")
        phash = prompt_hash(build_prompt(self.tmpl, query))
        hit = self.cache.get(model, phash)
        if hit is not None:
            return ExtractionRecord(query_id, hit.raw_response, hit.raw_filter, hit.filter, hit.latency,
                                    hit.fallback_used, hit.model_name, hit.prompt_hash, hit.error)
        rec = extract(query_id, query, self.llm, self.tmpl, self.catalog)
        # provider outages are not cached so a later run can retry them
        if not (rec.error and rec.error.startswith(("ProviderError", "FixtureMiss"))):
            self.cache.put(rec)
        return rec

    def extract_all(self, queries, workers: int = 4) -> list[ExtractionRecord]:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            return list(pool.map(lambda q: self(q.query_id, q.query), queries))


@dataclass(frozen=True)
class FilterStats:
    n_records: int
    pct_with_source: float
    pct_with_date: float
    pct_temporal_queries: float
    mean_latency: float
    empty: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def filter_stats(records: Sequence[ExtractionRecord], queries: Sequence) -> FilterStats:
    rec_ids = [r.query_id for r in records]
    q_ids = [q.query_id for q in queries]
    if sorted(rec_ids) != sorted(q_ids):
        raise AlignmentError("extraction records and queries have different query ids")
    n = len(records)
    if n == 0:
        return FilterStats(0, 0.0, 0.0, 0.0, 0.0, empty=True)
    return FilterStats(
        n_records=n,
        pct_with_source=100.0 * sum("source" in r.filter.clauses for r in records) / n,
        pct_with_date=100.0 * sum("published_at" in r.filter.clauses for r in records) / n,
        pct_temporal_queries=100.0 * sum(q.question_type == "temporal" for q in queries) / n,
        mean_latency=sum(r.latency for r in records) / n,
        empty=False,
    )
