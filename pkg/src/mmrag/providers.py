"""Model providers: tokenizer, embedder, chat completion and reranker.

Each role has a deterministic local implementation (used by the test suite
and for offline runs) and an HTTP adapter for hosted models.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import string
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .errors import ConfigError, FixtureMiss, ProviderError

log = logging.getLogger(__name__)

_PUNCT = string.punctuation + "‘’“”–—…«»"


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def count(self, text: str) -> int: ...


class SimpleTokenizer:
    """Lowercase, split on whitespace, strip surrounding punctuation.

    Whitespace-separated words yield at most one token each, so token counts
    are additive over whitespace-joined text.
    """

    def tokenize(self, text: str) -> list[str]:
        tokens = []
        for word in text.lower().split():
            word = word.strip(_PUNCT)
            if word:
                tokens.append(word)
        return tokens

    def count(self, text: str) -> int:
        return len(self.tokenize(text))


DEFAULT_TOKENIZER = SimpleTokenizer()


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "local"  # "local" | "http"
    model_name: str = ""
    endpoint: str | None = None
    api_key_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    batch_size: int = 32
    max_in_flight: int = 4
    dim: int = 256  # local embedder only
    fixtures: str | None = None  # scripted chat only

    def __post_init__(self):
        if self.kind not in ("local", "http"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.api_key_env):
            raise ConfigError("http providers need both endpoint and api_key_env")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown provider config keys: {sorted(extra)}")
        return cls(**data)


# -- HTTP plumbing ---------------------------------------------------------

class HttpClient:
    """JSON POST with bounded concurrency and retry on timeout/429/5xx."""

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        key = os.environ.get(cfg.api_key_env or "")
        if not key:
            raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self._client = httpx.Client(
            timeout=cfg.timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}"},
        )
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._sleep = sleep

    def post(self, payload: dict) -> dict:
        attempt = 0
        while True:
            try:
                with self._slots:
                    resp = self._client.post(self.cfg.endpoint, json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise ProviderError(resp.text[:200], retryable=True, status=resp.status_code)
                if resp.status_code >= 400:
                    raise ProviderError(resp.text[:200], retryable=False, status=resp.status_code)
                return resp.json()
            except httpx.TimeoutException as exc:
                err = ProviderError(f"timeout: {exc}", retryable=True)
            except httpx.HTTPError as exc:
                err = ProviderError(f"transport error: {exc}", retryable=False)
            except ProviderError as exc:
                err = exc
            except ValueError as exc:
                err = ProviderError(f"invalid JSON response: {exc}", retryable=False)
            if not err.retryable or attempt >= self.cfg.max_retries:
                raise err
            delay = min(30.0, 0.5 * 2 ** attempt) * (0.5 + random.random() / 2)
            log.warning("retrying %s after %s (attempt %d)", self.cfg.endpoint, err, attempt + 1)
            self._sleep(delay)
            attempt += 1


# -- embedders -------------------------------------------------------------

class Embedder(Protocol):
    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


class HashEmbedder:
    """Signed feature hashing of tokens, L2-normalized."""

    def __init__(self, dim: int = 256, tokenizer: Tokenizer = DEFAULT_TOKENIZER):
        if dim <= 0:
            raise ConfigError("embedding dim must be positive")
        self.dim = dim
        self.tokenizer = tokenizer

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        # all-punctuation text still needs a unit vector
        tokens = self.tokenizer.tokenize(text) or [text.strip()]
        for tok in tokens:
            h = _token_hash(tok)
            vec[h % self.dim] += -1.0 if (h >> 63) & 1 else 1.0
        norm = np.linalg.norm(vec)
        if norm == 0:
            # every token cancelled out; fall back to the first token's bucket
            vec[_token_hash(tokens[0]) % self.dim] = 1.0
            norm = 1.0
        return vec / norm

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed_batch needs at least one text")
        return [self.embed(t) for t in texts]


class HttpEmbedder:
    """OpenAI-style ``/embeddings`` endpoint: ``{"model", "input"} -> {"data": [{"embedding"}]}``."""

    def __init__(self, cfg: ProviderConfig, transport=None, sleep=time.sleep):
        self.cfg = cfg
        self.http = HttpClient(cfg, transport, sleep)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed_batch needs at least one text")
        out: list[np.ndarray] = []
        for i in range(0, len(texts), self.cfg.batch_size):
            batch = list(texts[i:i + self.cfg.batch_size])
            body = self.http.post({"model": self.cfg.model_name, "input": batch})
            try:
                rows = sorted(body["data"], key=lambda r: r.get("index", 0))
                vecs = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed embedding response: {exc}") from None
            if len(vecs) != len(batch):
                raise ProviderError("embedding response length does not match request")
            out.extend(vecs)
        return out


# -- chat completion -------------------------------------------------------

class ChatModel(Protocol):
    model_name: str

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 256) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class ScriptedChat:
    """Replays canned responses.

    Lookup is by SHA-256 of the exact prompt first, then by the first
    ``contains`` fixture whose needle occurs in the prompt.
    """

    by_hash: dict[str, str] = field(default_factory=dict)
    by_substring: list[tuple[str, str]] = field(default_factory=list)
    model_name: str = "scripted"
    calls: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def add(self, prompt: str, response: str) -> None:
        self.by_hash[prompt_hash(prompt)] = response

    def add_contains(self, needle: str, response: str) -> None:
        self.by_substring.append((needle, response))

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 256) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        with self._lock:
            self.calls += 1
        h = prompt_hash(prompt)
        if h in self.by_hash:
            return self.by_hash[h]
        for needle, response in self.by_substring:
            if needle in prompt:
                return response
        raise FixtureMiss(h)

    @classmethod
    def from_file(cls, path: str | Path, model_name: str = "scripted") -> "ScriptedChat":
        """Load fixtures from JSONL lines ``{"prompt_hash"|"prompt"|"contains": ..., "response": ...}``."""
        chat = cls(model_name=model_name)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "response" not in rec:
                    raise ConfigError(f"{path}:{lineno}: fixture without 'response'")
                if "prompt_hash" in rec:
                    chat.by_hash[rec["prompt_hash"]] = rec["response"]
                elif "prompt" in rec:
                    chat.add(rec["prompt"], rec["response"])
                elif "contains" in rec:
                    chat.add_contains(rec["contains"], rec["response"])
                else:
                    raise ConfigError(f"{path}:{lineno}: fixture needs prompt_hash, prompt or contains")
        return chat


class HttpChat:
    """OpenAI-style chat completions endpoint."""

    def __init__(self, cfg: ProviderConfig, transport=None, sleep=time.sleep):
        self.cfg = cfg
        self.model_name = cfg.model_name
        self.http = HttpClient(cfg, transport, sleep)

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 256) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        body = self.http.post({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        })
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError("malformed chat completion response") from None


# -- rerankers -------------------------------------------------------------

class Reranker(Protocol):
    def rerank(self, query: str, chunks: list) -> list: ...


def _sorted_chunks(chunks):
    return sorted(chunks, key=lambda c: (-c.score, c.chunk_id))


class IdentityReranker:
    """Keeps first-stage scores; useful to isolate the retrieval stage."""

    def rerank(self, query, chunks):
        return _sorted_chunks(chunks)


class LexicalReranker:
    """IDF-weighted overlap between query tokens and chunk tokens.

    IDF is computed over the candidate set only:
    ``idf(t) = ln((n + 1) / (df(t) + 1)) + 1``.
    """

    def __init__(self, tokenizer: Tokenizer = DEFAULT_TOKENIZER):
        self.tokenizer = tokenizer

    def rerank(self, query, chunks):
        if not chunks:
            return []
        token_sets = [set(self.tokenizer.tokenize(c.text)) for c in chunks]
        df = Counter(t for ts in token_sets for t in ts)
        n = len(chunks)
        q_tokens = set(self.tokenizer.tokenize(query))
        rescored = []
        for chunk, toks in zip(chunks, token_sets):
            score = math.fsum(math.log((n + 1) / (df[t] + 1)) + 1.0 for t in sorted(q_tokens & toks))
            rescored.append(replace(chunk, score=score))
        return _sorted_chunks(rescored)


class HttpReranker:
    """Cohere/Jina-style rerank endpoint: ``{"model", "query", "documents"} -> {"results": [{"index", "relevance_score"}]}``."""

    def __init__(self, cfg: ProviderConfig, transport=None, sleep=time.sleep):
        self.cfg = cfg
        self.http = HttpClient(cfg, transport, sleep)

    def rerank(self, query, chunks):
        if not chunks:
            return []
        body = self.http.post({
            "model": self.cfg.model_name,
            "query": query,
            "documents": [c.text for c in chunks],
        })
        try:
            scores = {int(r["index"]): float(r["relevance_score"]) for r in body["results"]}
        except (KeyError, TypeError, ValueError):
            raise ProviderError("malformed rerank response") from None
        if set(scores) != set(range(len(chunks))):
            raise ProviderError("rerank response does not cover every document")
        return _sorted_chunks([replace(c, score=scores[i]) for i, c in enumerate(chunks)])


# -- factories -------------------------------------------------------------

def make_embedder(cfg: ProviderConfig) -> Embedder:
    if cfg.kind == "http":
        return HttpEmbedder(cfg)
    return HashEmbedder(dim=cfg.dim)


def make_chat(cfg: ProviderConfig) -> ChatModel:
    if cfg.kind == "http":
        return HttpChat(cfg)
    if cfg.fixtures:
        return ScriptedChat.from_file(cfg.fixtures, model_name=cfg.model_name or "scripted")
    return ScriptedChat(model_name=cfg.model_name or "scripted")


def make_reranker(cfg: ProviderConfig) -> Reranker:
    if cfg.kind == "http":
        return HttpReranker(cfg)
    if cfg.model_name == "identity":
        return IdentityReranker()
    if cfg.model_name not in ("", "lexical"):
        raise ConfigError(f"unknown local reranker {cfg.model_name!r}")
    return LexicalReranker()
