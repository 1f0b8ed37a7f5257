"""Corpus loading and sentence-aligned, token-bounded chunking."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import DateFormatError, SchemaError
from .filters import ChunkMetadata, normalize_date
from .providers import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("title", "source", "published_at")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    source: str
    published_at: str
    body: str
    category: str = ""
    url: str = ""


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    token_count: int
    metadata: ChunkMetadata


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 256
    chunk_overlap: int = 32

    def __post_init__(self):
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ValueError("need 0 <= chunk_overlap < chunk_size")


def synth_doc_id(title, source, published_at, body):
    h = hashlib.sha256("\x1f".join((title, source, published_at, body)).encode("utf-8"))
    return h.hexdigest()[:16]


def load_corpus(path: str | Path, body_key: str = "body") -> list[Document]:
    """Read a JSON array of article records.

    ``published_at`` is canonicalized (ISO timestamps included); values that
    cannot be read as dates are kept as empty strings.
    """
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise SchemaError(-1, "<root>", f"{path}: expected a JSON array of articles")

    docs = []
    seen: dict[str, int] = {}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise SchemaError(i, "<record>", f"record {i}: expected an object")
        for name in (*REQUIRED_FIELDS, body_key):
            if not isinstance(rec.get(name), str):
                raise SchemaError(i, name)
        if not rec[body_key].strip():
            raise SchemaError(i, body_key, f"record {i}: empty {body_key!r}")
        if not rec["source"].strip():
            raise SchemaError(i, "source", f"record {i}: empty 'source'")
        try:
            published = normalize_date(rec["published_at"]) if rec["published_at"].strip() else ""
        except DateFormatError:
            log.warning("record %d: unreadable published_at %r", i, rec["published_at"])
            published = ""
        doc_id = rec.get("doc_id") or synth_doc_id(rec["title"], rec["source"], published, rec[body_key])
        # identical duplicate articles exist in scraped corpora
        if doc_id in seen:
            seen[doc_id] += 1
            doc_id = f"{doc_id}-{seen[doc_id]}"
        else:
            seen[doc_id] = 0
        docs.append(Document(
            doc_id=str(doc_id),
            title=rec["title"],
            source=rec["source"],
            published_at=published,
            body=rec[body_key],
            category=rec.get("category") or "",
            url=rec.get("url") or "",
        ))
    return docs


# -- sentence splitting ----------------------------------------------------

_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "e.g", "i.e",
    "u.s", "u.k", "u.n", "e.u", "inc", "ltd", "co", "corp", "no", "gen",
    "gov", "sen", "rep", "lt", "col", "capt", "mt", "jan", "feb", "mar",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
}
# terminator, optional closing quotes/brackets, whitespace, then a sentence opener
_BOUNDARY = re.compile(r"[.!?]+[\"'”’)\]]*(\s+)(?=[A-Z0-9\"'“‘(\[])")


def _ends_with_abbreviation(text: str) -> bool:
    word = text.rsplit(None, 1)[-1] if text.strip() else ""
    word = word.lstrip("\"'“‘([").rstrip(".").lower()
    if word in _ABBREVIATIONS:
        return True
    # single initials such as "J." in "J. K. Rowling"
    return len(word) == 1 and word.isalpha()


def split_sentences(text: str) -> list[str]:
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        candidate = text[start:m.start(1)]
        if m.group().startswith(".") and _ends_with_abbreviation(candidate):
            continue
        if candidate.strip():
            sentences.append(candidate.strip())
        start = m.end(1)
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# -- chunking --------------------------------------------------------------

def _hard_split(sentence: str, limit: int, tok: Tokenizer) -> list[tuple[str, int]]:
    """Cut an oversized sentence into pieces of at most ``limit`` tokens at word boundaries."""
    pieces = []
    words: list[str] = []
    count = 0
    for word in sentence.split():
        n = tok.count(word)
        if words and count + n > limit:
            pieces.append((" ".join(words), count))
            words, count = [], 0
        words.append(word)
        count += n
    if words:
        pieces.append((" ".join(words), count))
    return pieces


def _units(sentences, cfg, tok):
    units = []
    for s in sentences:
        n = tok.count(s)
        if n > cfg.chunk_size:
            units.extend(_hard_split(s, cfg.chunk_size, tok))
        else:
            units.append((s, n))
    return units


def _carry(window, counts, overlap, next_count, limit):
    """Trailing units to repeat at the start of the next window."""
    if overlap == 0:
        return []
    total = 0
    for j in range(len(window) - 1, 0, -1):
        total += counts[window[j]]
        if total >= overlap:
            if total + next_count > limit:
                return []
            return window[j:]
    return []


def pack_units(counts: list[int], cfg: ChunkingConfig) -> list[list[int]]:
    """Greedy packing of unit indices into windows; pure function of the counts."""
    windows = []
    i = 0
    window: list[int] = []
    total = 0
    while i < len(counts):
        if not window or total + counts[i] <= cfg.chunk_size:
            window.append(i)
            total += counts[i]
            i += 1
            continue
        windows.append(window)
        window = _carry(window, counts, cfg.chunk_overlap, counts[i], cfg.chunk_size)
        total = sum(counts[j] for j in window)
    if window:
        windows.append(window)
    return windows


def chunk_document(doc: Document, cfg: ChunkingConfig = ChunkingConfig(),
                   tok: Tokenizer = DEFAULT_TOKENIZER) -> list[Chunk]:
    units = _units(split_sentences(doc.body), cfg, tok)
    meta = ChunkMetadata(source=doc.source, published_at=doc.published_at, title=doc.title)
    chunks = []
    for ordinal, window in enumerate(pack_units([n for _, n in units], cfg)):
        text = " ".join(units[j][0] for j in window)
        chunks.append(Chunk(
            chunk_id=f"{doc.doc_id}:{ordinal}",
            doc_id=doc.doc_id,
            ordinal=ordinal,
            text=text,
            token_count=tok.count(text),
            metadata=meta,
        ))
    return chunks


def chunk_corpus(docs, cfg: ChunkingConfig = ChunkingConfig(), tok: Tokenizer = DEFAULT_TOKENIZER) -> list[Chunk]:
    return [c for d in docs for c in chunk_document(d, cfg, tok)]
