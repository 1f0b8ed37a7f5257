"""Metadata filter expressions: parsing, normalization and evaluation.

Filters use the MongoDB operator surface emitted by the extraction LLM::

    {"source": {"$in": ["TechCrunch", "Engadget"]}, "published_at": {"$in": ["December 12, 2023"]}}

Only ``$in`` and ``$nin`` survive normalization, and only the ``source`` and
``published_at`` fields are kept.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Iterable, Mapping

from .errors import DateFormatError, ParseError

FILTER_FIELDS = ("source", "published_at")

RawFilter = dict  # field name -> bare scalar | {operator: scalar | list}


class Op(str, enum.Enum):
    IN = "$in"
    NIN = "$nin"


@dataclass(frozen=True)
class OperatorClause:
    op: Op
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("operator clause needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError("operator clause values must be unique")

    def admits(self, value: str) -> bool:
        inside = value in self.values
        return inside if self.op is Op.IN else not inside


@dataclass(frozen=True)
class FilterExpr:
    clauses: Mapping[str, OperatorClause] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.clauses) - set(FILTER_FIELDS)
        if unknown:
            raise ValueError(f"unsupported filter fields: {sorted(unknown)}")

    def __bool__(self):
        return bool(self.clauses)

    def __eq__(self, other):
        if not isinstance(other, FilterExpr):
            return NotImplemented
        return dict(self.clauses) == dict(other.clauses)

    def __hash__(self):
        return hash(frozenset(self.clauses.items()))

    @classmethod
    def of(cls, **clauses: tuple[str, Iterable[str]]) -> "FilterExpr":
        """Shorthand: ``FilterExpr.of(source=("$in", ["TechCrunch"]))``."""
        built = {}
        for name in FILTER_FIELDS:
            if name in clauses:
                op, values = clauses[name]
                built[name] = OperatorClause(Op(op), tuple(values))
        return cls(built)

    def to_raw(self) -> RawFilter:
        return {
            name: {clause.op.value: list(clause.values)}
            for name, clause in self.clauses.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_raw(), ensure_ascii=False)

    @classmethod
    def from_raw_normalized(cls, raw: Mapping[str, Any]) -> "FilterExpr":
        """Rebuild a filter already in normalized form (e.g. read back from a cache)."""
        clauses = {}
        for name in FILTER_FIELDS:
            if name in raw:
                ((op, values),) = raw[name].items()
                clauses[name] = OperatorClause(Op(op), tuple(values))
        return cls(clauses)


@dataclass(frozen=True)
class ChunkMetadata:
    source: str
    published_at: str = ""
    title: str = ""

    def get(self, name: str) -> str:
        return getattr(self, name)


# -- parsing ---------------------------------------------------------------

_BARE_WORD = re.compile(r"[A-Za-z_$][\w$.-]*")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_LITERALS = {
    "true": True, "True": True,
    "false": False, "False": False,
    "null": None, "None": None,
}
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "/": "/"}


class _Reader:
    """Tolerant reader for JSON and Python-style dictionary literals."""

    def __init__(self, text: str, pos: int):
        self.text = text
        self.pos = pos

    def fail(self, message):
        raise ParseError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def value(self):
        ch = self.peek()
        if ch == "{":
            return self.mapping()
        if ch == "[":
            return self.sequence()
        if ch and ch in "'\"":
            return self.string()
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            num = m.group()
            return float(num) if any(c in num for c in ".eE") else int(num)
        m = _BARE_WORD.match(self.text, self.pos)
        if m and m.group() in _LITERALS:
            self.pos = m.end()
            return _LITERALS[m.group()]
        self.fail("expected a value")

    def key(self):
        ch = self.peek()
        if ch and ch in "'\"":
            return self.string()
        m = _BARE_WORD.match(self.text, self.pos)
        if not m:
            self.fail("expected a key")
        self.pos = m.end()
        return m.group()

    def string(self):
        quote = self.text[self.pos]
        self.pos += 1
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\" and self.pos + 1 < len(self.text):
                nxt = self.text[self.pos + 1]
                if nxt == "u" and re.fullmatch(r"[0-9a-fA-F]{4}", self.text[self.pos + 2:self.pos + 6]):
                    out.append(chr(int(self.text[self.pos + 2:self.pos + 6], 16)))
                    self.pos += 6
                    continue
                out.append(_ESCAPES.get(nxt, nxt))
                self.pos += 2
                continue
            if ch == quote:
                self.pos += 1
                return "".join(out)
            if ch == "\n":
                self.fail("unterminated string")
            out.append(ch)
            self.pos += 1
        self.fail("unterminated string")

    def _items(self, close, item):
        out = []
        while True:
            if self.peek() == close:
                self.pos += 1
                return out
            out.append(item())
            ch = self.peek()
            if ch == ",":
                self.pos += 1
            elif ch != close:
                self.fail(f"expected ',' or {close!r}")

    def sequence(self):
        self.expect("[")
        return self._items("]", self.value)

    def mapping(self):
        self.expect("{")

        def pair():
            k = self.key()
            self.expect(":")
            return k, self.value()

        return dict(self._items("}", pair))


def _parse_bare(text):
    reader = _Reader("{" + text.strip() + "}", 0)
    parsed = reader.mapping()
    if reader.peek():
        raise ParseError("trailing text after bare dictionary body", reader.pos)
    return parsed


def parse_filter(text: str) -> RawFilter:
    """Return the first well-formed dictionary literal found in ``text``.

    Accepts strict JSON as well as single-quoted Python-style dictionaries,
    optionally surrounded by prose or code fences. Operator structure is kept
    verbatim. Text that starts with a quoted key is also tried as a bare
    ``"field": {...}`` body without outer braces.
    """
    if text.lstrip()[:1] in ("'", '"'):
        try:
            return _parse_bare(text)
        except ParseError:
            pass
    furthest = ParseError("no dictionary literal found", len(text))
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            return _Reader(text, start).mapping()
        except ParseError as exc:
            if furthest.reason.startswith("no dictionary") or exc.offset >= furthest.offset:
                furthest = exc
    # report a UTF-8 byte offset
    raise ParseError(furthest.reason, len(text[:furthest.offset].encode("utf-8")))


# -- normalization ---------------------------------------------------------

_DATE_LAYOUTS = ("%B %d, %Y", "%b %d, %Y", "%B %d %Y", "%Y-%m-%d")


def canonical_date(d: date) -> str:
    return f"{d:%B} {d.day}, {d.year}"


def normalize_date(text: str) -> str:
    """Render a date as ``"December 2, 2023"`` (strftime ``%B %-d, %Y``).

    Accepts the canonical layout, zero-padded days, abbreviated month names,
    ISO dates and ISO timestamps.
    """
    cleaned = " ".join(str(text).split())
    for layout in _DATE_LAYOUTS:
        try:
            return canonical_date(datetime.strptime(cleaned, layout))
        except ValueError:
            continue
    try:
        return canonical_date(datetime.fromisoformat(cleaned.replace("Z", "+00:00")))
    except ValueError:
        raise DateFormatError(f"unrecognized date: {text!r}") from None


def _dedupe(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def _split_clause(clause):
    """Return (operator, values) for a raw clause, or None if unusable."""
    if isinstance(clause, dict):
        if len(clause) != 1:
            return None
        ((op, values),) = clause.items()
    else:
        op, values = Op.IN.value, clause
    if op not in (Op.IN.value, Op.NIN.value):
        return None
    if not isinstance(values, list):
        values = [values]
    return Op(op), values


def normalize_filter(raw: RawFilter, source_catalog: Iterable[str]) -> FilterExpr:
    """Reduce an LLM-emitted filter to the supported ``$in``/``$nin`` subset.

    Never raises. Unknown fields, unsupported operators, sources outside the
    catalog and unparseable dates are dropped; clauses left without values
    disappear.
    """
    by_lower = {}
    for name in source_catalog:
        by_lower.setdefault(name.casefold(), name)

    clauses = {}
    for name in FILTER_FIELDS:
        if not isinstance(raw, dict) or name not in raw:
            continue
        split = _split_clause(raw[name])
        if split is None:
            continue
        op, values = split
        kept = []
        for v in values:
            if not isinstance(v, str):
                continue
            if name == "source":
                canon = by_lower.get(v.strip().casefold())
                if canon is not None:
                    kept.append(canon)
            else:
                try:
                    kept.append(normalize_date(v))
                except DateFormatError:
                    pass
        kept = _dedupe(kept)
        if kept:
            clauses[name] = OperatorClause(op, tuple(kept))
    return FilterExpr(clauses)


def matches(flt: FilterExpr, meta: ChunkMetadata) -> bool:
    """Conjunction over fields; an empty filter matches everything."""
    return all(clause.admits(meta.get(name)) for name, clause in flt.clauses.items())
