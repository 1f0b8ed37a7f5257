"""Exact cosine top-K search over chunk embeddings with metadata pre-filtering.

Binary file layout (all integers little-endian)::

    magic    9 bytes  b"MMRAG-VS1"
    dim      uint32
    count    uint64
    count x entry:
        chunk_id, source, published_at, title, text   (uint32 length + UTF-8 bytes each)
        embedding                                      (dim x float64)
"""
from __future__ import annotations

import os
import struct
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, FormatError
from .filters import ChunkMetadata, FilterExpr, matches

MAGIC = b"MMRAG-VS1"
_HEADER = struct.Struct("<IQ")
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    embedding: np.ndarray
    metadata: ChunkMetadata
    text: str


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    score: float
    text: str
    metadata: ChunkMetadata

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "score": self.score,
            "source": self.metadata.source,
            "published_at": self.metadata.published_at,
            "title": self.metadata.title,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredChunk":
        meta = ChunkMetadata(d["source"], d.get("published_at", ""), d.get("title", ""))
        return cls(d["chunk_id"], float(d["score"]), d["text"], meta)


_BLOCK = 4096


def _row_dots(matrix, idx, q):
    """Row-wise dot products; identical rows give bit-identical results (BLAS gemv does not)."""
    out = np.empty(idx.size)
    for start in range(0, idx.size, _BLOCK):
        sel = idx[start:start + _BLOCK]
        out[start:start + sel.size] = (matrix[sel] * q).sum(axis=1)
    return out


class _Snapshot:
    """Immutable view of the store; searches run against one snapshot."""

    __slots__ = ("ids", "metas", "texts", "matrix", "norms", "position")

    def __init__(self, ids, metas, texts, matrix):
        self.ids = ids
        self.metas = metas
        self.texts = texts
        self.matrix = matrix
        self.norms = np.linalg.norm(matrix, axis=1) if len(ids) else np.zeros(0)
        self.position = {cid: i for i, cid in enumerate(ids)}


class VectorStore:
    """Many concurrent readers, writes serialized; readers never see half a batch."""

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._write_lock = threading.Lock()
        self._snap = _Snapshot([], [], [], np.zeros((0, dim or 0)))

    def __len__(self):
        return len(self._snap.ids)

    def __contains__(self, chunk_id):
        return chunk_id in self._snap.position

    def _check_vector(self, vec, dim):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise DimensionMismatch(dim, arr.shape[-1] if arr.ndim else 0)
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite values")
        return arr

    def upsert(self, entries: Sequence[IndexEntry]) -> int:
        if not entries:
            return 0
        with self._write_lock:
            dim = self.dim or len(np.asarray(entries[0].embedding))
            if dim <= 0:
                raise ValueError("embedding dim must be positive")
            vectors = [self._check_vector(e.embedding, dim) for e in entries]
            old = self._snap
            ids, metas, texts = list(old.ids), list(old.metas), list(old.texts)
            rows = list(old.matrix) if len(old.ids) else []
            position = dict(old.position)
            for e, vec in zip(entries, vectors):
                at = position.get(e.chunk_id)
                if at is None:
                    position[e.chunk_id] = len(ids)
                    ids.append(e.chunk_id)
                    metas.append(e.metadata)
                    texts.append(e.text)
                    rows.append(vec)
                else:
                    metas[at], texts[at], rows[at] = e.metadata, e.text, vec
            self.dim = dim
            self._snap = _Snapshot(ids, metas, texts, np.vstack(rows))
            return len(entries)

    def entries(self) -> list[IndexEntry]:
        s = self._snap
        return [IndexEntry(cid, s.matrix[i].copy(), s.metas[i], s.texts[i]) for i, cid in enumerate(s.ids)]

    def search(self, query, flt: FilterExpr = FilterExpr(), k: int = 10) -> list[ScoredChunk]:
        if k < 0:
            raise ValueError("k must be non-negative")
        s = self._snap
        if not s.ids or k == 0:
            if s.ids:
                self._check_vector(query, self.dim)
            return []
        q = self._check_vector(query, self.dim)
        if flt:
            candidates = np.fromiter((matches(flt, m) for m in s.metas), dtype=bool, count=len(s.ids))
            idx = np.flatnonzero(candidates)
        else:
            idx = np.arange(len(s.ids))
        if idx.size == 0:
            return []
        qnorm = np.linalg.norm(q)
        dots = _row_dots(s.matrix, idx, q)
        denom = s.norms[idx] * qnorm
        scores = np.zeros(idx.size)
        ok = denom > 0
        scores[ok] = np.clip(dots[ok] / denom[ok], -1.0, 1.0)
        pool = np.arange(idx.size)
        if idx.size > k:
            # keep everything tied with the k-th best so the id tie-break stays exact
            kth = np.partition(scores, idx.size - k)[idx.size - k]
            pool = np.flatnonzero(scores >= kth)
        order = sorted(pool, key=lambda j: (-scores[j], s.ids[idx[j]]))[:k]
        return [
            ScoredChunk(s.ids[idx[j]], float(scores[j]), s.texts[idx[j]], s.metas[idx[j]])
            for j in order
        ]

    # -- persistence -------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        """Write atomically: temp file in the target directory, then rename."""
        path = Path(path)
        s = self._snap
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MAGIC)
                fh.write(_HEADER.pack(self.dim or 0, len(s.ids)))
                for i, cid in enumerate(s.ids):
                    m = s.metas[i]
                    for field in (cid, m.source, m.published_at, m.title, s.texts[i]):
                        raw = field.encode("utf-8")
                        fh.write(_LEN.pack(len(raw)))
                        fh.write(raw)
                    fh.write(s.matrix[i].astype("<f8").tobytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        data = Path(path).read_bytes()
        if data[:len(MAGIC)] != MAGIC:
            raise FormatError(f"{path}: bad magic")
        pos = len(MAGIC)

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise FormatError(f"{path}: truncated at byte {pos}")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        dim, count = _HEADER.unpack(take(_HEADER.size))
        if count and not dim:
            raise FormatError(f"{path}: non-empty store with dim 0")
        entries = []
        for _ in range(count):
            fields = []
            for _f in range(5):
                (n,) = _LEN.unpack(take(_LEN.size))
                try:
                    fields.append(take(n).decode("utf-8"))
                except UnicodeDecodeError as exc:
                    raise FormatError(f"{path}: invalid UTF-8: {exc}") from None
            vec = np.frombuffer(take(8 * dim), dtype="<f8").astype(np.float64)
            cid, source, published_at, title, text = fields
            entries.append(IndexEntry(cid, vec, ChunkMetadata(source, published_at, title), text))
        if pos != len(data):
            raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
        store = cls(dim or None)
        store.upsert(entries)
        return store


def build_entries(chunks: Iterable, embeddings: Iterable) -> list[IndexEntry]:
    return [IndexEntry(c.chunk_id, np.asarray(e, dtype=np.float64), c.metadata, c.text)
            for c, e in zip(chunks, embeddings)]
