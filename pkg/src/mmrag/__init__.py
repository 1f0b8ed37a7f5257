"""Metadata-filtered retrieval-augmented generation with benchmark evaluation."""
from .errors import (AlignmentError, DateFormatError, DimensionMismatch, EmptyQuerySet, FixtureMiss,
                     FormatError, ParseError, ProviderError, SchemaError)
from .filters import ChunkMetadata, FilterExpr, Op, OperatorClause, matches, normalize_date, normalize_filter, parse_filter
from .store import IndexEntry, ScoredChunk, VectorStore

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ChunkMetadata", "DateFormatError", "DimensionMismatch", "EmptyQuerySet",
    "FilterExpr", "FixtureMiss", "FormatError", "IndexEntry", "Op", "OperatorClause", "ParseError",
    "ProviderError", "SchemaError", "ScoredChunk", "VectorStore", "matches", "normalize_date",
    "normalize_filter", "parse_filter",
]
