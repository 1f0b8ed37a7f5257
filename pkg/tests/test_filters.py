import json

import pytest
from hypothesis import given, settings, strategies as st

from mmrag.errors import DateFormatError, ParseError
from mmrag.filters import (ChunkMetadata, FilterExpr, Op, OperatorClause, matches, normalize_date,
                           normalize_filter, parse_filter)
from mmrag.extractor import SOURCE_CATALOG

from oracles import admissible_tuples

CATALOG = list(SOURCE_CATALOG)


# -- parse_filter ------------------------------------------------------------

def test_parse_strict_json():
    raw = parse_filter('{"source": {"$in": ["TechCrunch", "Engadget"]}}')
    assert raw == {"source": {"$in": ["TechCrunch", "Engadget"]}}


def test_parse_single_quoted():
    assert parse_filter("{'source': {'$nin': ['TechCrunch']}}") == {"source": {"$nin": ["TechCrunch"]}}


def test_parse_empty_dict():
    assert parse_filter("{}") == {}


def test_parse_inside_prose_and_fences():
    text = "Sure! Here it is:\n```json\n{'source': {'$in': ['The Verge', 'TechCrunch']}}\n```\nDone."
    assert parse_filter(text) == {"source": {"$in": ["The Verge", "TechCrunch"]}}


def test_parse_answer_prefix():
    assert parse_filter("Answer: {'source': {'$in': ['Wired']}}") == {"source": {"$in": ["Wired"]}}


def test_parse_bare_body_without_braces():
    text = '"published_at": {\n "$in": ["December 12, 2023"]\n},\n"source": {\n "$in": ["The Guardian"]\n}'
    assert parse_filter(text) == {"published_at": {"$in": ["December 12, 2023"]}, "source": {"$in": ["The Guardian"]}}


def test_parse_keeps_unsupported_operators_verbatim():
    raw = parse_filter("{'published_at': {'$gt': 'November 1, 2023'}, 'x': 3, 'y': [True, None, 1.5]}")
    assert raw == {"published_at": {"$gt": "November 1, 2023"}, "x": 3, "y": [True, None, 1.5]}


def test_parse_escapes_and_apostrophes():
    assert parse_filter(r"""{"source": ["it\"s", 'Guardian\'s']}""") == {"source": ['it"s', "Guardian's"]}


def test_parse_trailing_commas():
    assert parse_filter("{'source': {'$in': ['Wired',],},}") == {"source": {"$in": ["Wired"]}}


def test_parse_skips_malformed_then_finds_next():
    # the first literal is broken; the inner one is the first well-formed dictionary
    assert parse_filter("{'source': {'$in': ['A']}, 'published_at': '$in': {['x']}}") == {"$in": ["A"]}


@pytest.mark.parametrize("text", ["", "no filter here", "{'source': ", "{'a' 'b'}", "[1, 2]"])
def test_parse_error(text):
    with pytest.raises(ParseError) as info:
        parse_filter(text)
    assert 0 <= info.value.offset <= len(text.encode())


def test_parse_error_offset_is_bytes():
    text = "é{'a': }"
    with pytest.raises(ParseError) as info:
        parse_filter(text)
    assert info.value.offset == len("é{'a': ".encode())


# -- normalize_date ------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("December 12, 2023", "December 12, 2023"),
    ("2023-12-02", "December 2, 2023"),
    ("December 02, 2023", "December 2, 2023"),
    ("Dec 2, 2023", "December 2, 2023"),
    ("  october 7,   2023 ", "October 7, 2023"),
    ("2023-11-27T08:45:59+00:00", "November 27, 2023"),
])
def test_normalize_date(text, expected):
    assert normalize_date(text) == expected


@pytest.mark.parametrize("text", ["Decembruary 5", "", "12/02/2023", "2023-13-01"])
def test_normalize_date_rejects(text):
    with pytest.raises(DateFormatError):
        normalize_date(text)


# -- normalize_filter ----------------------------------------------------------

def test_normalize_table1_row2():
    raw = {"source": {"$in": ["The Guardian", "Sporting News"]}, "published_at": {"$in": ["December 12, 2023"]}}
    assert normalize_filter(raw, CATALOG) == FilterExpr.of(
        source=("$in", ["The Guardian", "Sporting News"]),
        published_at=("$in", ["December 12, 2023"]),
    )


def test_normalize_drops_range_date_operator():
    assert normalize_filter({"published_at": {"$gt": ["November 1, 2023"]}}, CATALOG) == FilterExpr()


def test_normalize_bare_scalar_case_insensitive():
    assert normalize_filter({"source": "techcrunch"}, CATALOG) == FilterExpr.of(source=("$in", ["TechCrunch"]))


def test_normalize_drops_unknown_sources_and_fields():
    raw = {"source": {"$in": ["Nowhere Times", "wired", "WIRED"]}, "category": {"$in": ["tech"]}}
    assert normalize_filter(raw, CATALOG) == FilterExpr.of(source=("$in", ["Wired"]))


def test_normalize_all_sources_unmatched_gives_empty():
    assert normalize_filter({"source": {"$in": ["Nowhere"]}}, CATALOG) == FilterExpr()


def test_normalize_dates_canonicalized_and_bad_dropped():
    raw = {"published_at": {"$nin": ["2023-10-07", "October 07, 2023", "someday"]}}
    assert normalize_filter(raw, CATALOG) == FilterExpr.of(published_at=("$nin", ["October 7, 2023"]))


@pytest.mark.parametrize("raw", [
    {}, [], "x", {"source": {}}, {"source": {"$in": []}}, {"source": {"$in": ["Wired"], "$nin": ["Fortune"]}},
    {"source": {"$eq": "Wired"}}, {"source": {"$in": [1, None]}},
])
def test_normalize_total_on_junk(raw):
    assert normalize_filter(raw, CATALOG) == FilterExpr()


def test_normalize_scalar_operand():
    assert normalize_filter({"source": {"$nin": "Wired"}}, CATALOG) == FilterExpr.of(source=("$nin", ["Wired"]))


def test_operator_clause_invariants():
    with pytest.raises(ValueError):
        OperatorClause(Op.IN, ())
    with pytest.raises(ValueError):
        OperatorClause(Op.IN, ("a", "a"))
    with pytest.raises(ValueError):
        FilterExpr({"title": OperatorClause(Op.IN, ("a",))})


# -- matches -------------------------------------------------------------------

def test_matches_examples():
    m = ChunkMetadata("Engadget", "October 3, 2023", "t")
    assert matches(FilterExpr.of(source=("$in", ["TechCrunch", "Engadget"])), m)
    assert matches(FilterExpr(), m)
    assert not matches(FilterExpr.of(source=("$nin", ["TechCrunch"])), ChunkMetadata("TechCrunch"))


def test_matches_empty_date():
    m = ChunkMetadata("Wired", "")
    assert not matches(FilterExpr.of(published_at=("$in", ["October 3, 2023"])), m)
    assert matches(FilterExpr.of(published_at=("$nin", ["October 3, 2023"])), m)


def test_matches_conjunction():
    f = FilterExpr.of(source=("$in", ["Wired"]), published_at=("$in", ["May 1, 2023"]))
    assert matches(f, ChunkMetadata("Wired", "May 1, 2023"))
    assert not matches(f, ChunkMetadata("Wired", "May 2, 2023"))
    assert not matches(f, ChunkMetadata("Fortune", "May 1, 2023"))


# -- properties ----------------------------------------------------------------

SOURCES = ["Wired", "Fortune", "TechCrunch", "Engadget", "Polygon"]
DATES = ["", "October 1, 2023", "October 2, 2023", "December 12, 2023"]


@st.composite
def filter_exprs(draw):
    clauses = {}
    for name, universe in (("source", SOURCES), ("published_at", DATES[1:])):
        if draw(st.booleans()):
            values = draw(st.lists(st.sampled_from(universe), min_size=1, max_size=3, unique=True))
            clauses[name] = OperatorClause(draw(st.sampled_from(list(Op))), tuple(values))
    return FilterExpr(clauses)


metas = st.builds(ChunkMetadata, st.sampled_from(SOURCES), st.sampled_from(DATES), st.text(max_size=5))


@settings(max_examples=300)
@given(filter_exprs(), metas)
def test_matches_agrees_with_set_expansion(f, m):
    assert matches(f, m) == ((m.source, m.published_at) in admissible_tuples(f.to_raw(), SOURCES, DATES))


@given(st.lists(st.sampled_from(SOURCES), min_size=1, unique=True), metas)
def test_in_nin_complement(values, m):
    in_f = FilterExpr.of(source=("$in", values))
    nin_f = FilterExpr.of(source=("$nin", values))
    assert matches(in_f, m) != matches(nin_f, m)


@given(filter_exprs())
def test_normalize_idempotent(f):
    catalog = SOURCES + CATALOG
    once = normalize_filter(f.to_raw(), catalog)
    assert once == f
    assert normalize_filter(once.to_raw(), catalog) == once


@given(filter_exprs())
def test_json_round_trip(f):
    raw = parse_filter(f.to_json())
    assert raw == f.to_raw()
    assert FilterExpr.from_raw_normalized(json.loads(f.to_json())) == f
