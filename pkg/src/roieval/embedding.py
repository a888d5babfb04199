"""Text embedders behind one interface, plus cosine similarity.

Providers:

``local-hash``
    Character n-grams of the NFC-normalized, lowercased, whitespace-collapsed
    text, hashed with 64-bit FNV-1a (offset basis 0xcbf29ce484222325, prime
    0x100000001b3, over the UTF-8 bytes of the gram) into ``dimension``
    count buckets, then L2-normalized. Texts shorter than ``ngram_size`` form
    a single gram.
``remote``
    HTTP service: ``POST {"model": ..., "texts": [...]}`` returning
    ``{"vectors": [[...], ...]}``.
``one-hot``
    Test embedder: each distinct normalized text gets its own basis vector,
    so equal texts score 1 and different texts score 0.
"""

from __future__ import annotations

import os
import threading
import time
import unicodedata
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import httpx
import numpy as np

from ._kernels import fnv1a64
from .errors import ConfigError, ExternalServiceError, SchemaError

PROVIDERS = ("local-hash", "remote", "one-hot")


@dataclass(frozen=True)
class EmbedderConfig:
    provider: str = "local-hash"
    endpoint: Optional[str] = None
    model_name: str = ""
    dimension: Optional[int] = None
    ngram_size: int = 3
    cache_capacity: int = 100_000
    batch_size: int = 64
    timeout: float = 30.0
    max_retries: int = 3

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise ConfigError(f"unknown embedding provider {self.provider!r}")
        if self.dimension is not None and self.dimension < 2:
            raise ConfigError("dimension must be >= 2")
        if self.ngram_size < 1:
            raise ConfigError("ngram_size must be >= 1")
        if self.batch_size < 1 or self.cache_capacity < 0 or self.max_retries < 0:
            raise ConfigError("batch_size, cache_capacity and max_retries must be non-negative")


def normalize_text(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise ExternalServiceError("embedding is a zero or non-finite vector")
    out = vec / norm
    out.setflags(write=False)
    return out


class Embedder:
    """Base class: validation, LRU cache and in-flight coalescing.

    Subclasses implement ``_compute(texts) -> list of vectors``. Concurrent
    callers asking for the same key wait on a single computation.
    """

    provider = "abstract"

    def __init__(self, model_name: str = "", dimension: Optional[int] = None,
                 cache_capacity: int = 100_000):
        self.model_name = model_name
        self.dimension = dimension
        self.cache_capacity = cache_capacity
        self._cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._inflight: dict[tuple, Future] = {}
        self._lock = threading.Lock()
        self.computed = 0  # number of texts actually computed (cache misses)

    def descriptor(self) -> dict:
        return {"provider": self.provider, "model": self.model_name, "dimension": self.dimension}

    def _key(self, text: str) -> tuple:
        return (self.provider, self.model_name, text)

    def _compute(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        cleaned = []
        for t in texts:
            if not isinstance(t, str) or not t.strip():
                raise SchemaError("empty text")
            cleaned.append(t)
        results: dict[str, np.ndarray] = {}
        waits: dict[str, Future] = {}
        owned: dict[str, Future] = {}
        with self._lock:
            for t in dict.fromkeys(cleaned):
                key = self._key(t)
                hit = self._cache.get(key)
                if hit is not None:
                    self._cache.move_to_end(key)
                    results[t] = hit
                elif key in self._inflight:
                    waits[t] = self._inflight[key]
                else:
                    fut: Future = Future()
                    self._inflight[key] = fut
                    owned[t] = fut
        if owned:
            todo = list(owned)
            try:
                vectors = self._compute(todo)
                if len(vectors) != len(todo):
                    raise ExternalServiceError(
                        f"expected {len(todo)} vectors, got {len(vectors)}")
                vectors = [self._check(v) for v in vectors]
            except BaseException as exc:
                with self._lock:
                    for t, fut in owned.items():
                        self._inflight.pop(self._key(t), None)
                        fut.set_exception(exc)
                raise
            with self._lock:
                self.computed += len(todo)
                for t, vec in zip(todo, vectors):
                    key = self._key(t)
                    self._inflight.pop(key, None)
                    if self.cache_capacity:
                        self._cache[key] = vec
                        while len(self._cache) > self.cache_capacity:
                            self._cache.popitem(last=False)
                    owned[t].set_result(vec)
                    results[t] = vec
        for t, fut in waits.items():
            results[t] = fut.result()
        return [results[t] for t in cleaned]

    def _check(self, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1:
            raise ExternalServiceError("embedding must be a flat vector")
        if self.dimension is None:
            self.dimension = arr.shape[0]
        elif arr.shape[0] != self.dimension:
            raise ExternalServiceError(
                f"dimension mismatch: got {arr.shape[0]}, configured {self.dimension}")
        return _unit(arr)


class HashEmbedder(Embedder):
    provider = "local-hash"

    def __init__(self, dimension: int = 256, ngram_size: int = 3, cache_capacity: int = 100_000):
        if dimension < 2:
            raise ConfigError("dimension must be >= 2")
        super().__init__(f"fnv1a64-char{ngram_size}", dimension, cache_capacity)
        self.ngram_size = ngram_size

    def descriptor(self) -> dict:
        return {**super().descriptor(), "ngram_size": self.ngram_size, "hash": "fnv1a64"}

    def ngrams(self, text: str) -> list[str]:
        norm = normalize_text(text)
        n = self.ngram_size
        if len(norm) <= n:
            return [norm]
        return [norm[i:i + n] for i in range(len(norm) - n + 1)]

    def bucket(self, gram: str) -> int:
        return fnv1a64(gram.encode("utf-8")) % self.dimension

    def raw_counts(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dimension, dtype=np.float64)
        for gram in self.ngrams(text):
            counts[self.bucket(gram)] += 1.0
        return counts

    def _compute(self, texts):
        return [self.raw_counts(t) for t in texts]


class OneHotEmbedder(Embedder):
    """Distinct normalized texts map to distinct basis vectors.

    Index assignment depends on first-seen order, but cosines do not: equal
    texts give 1, unequal texts 0.
    """

    provider = "one-hot"

    def __init__(self, dimension: int = 4096, cache_capacity: int = 100_000):
        super().__init__("one-hot", dimension, cache_capacity)
        self._index: dict[str, int] = {}
        self._index_lock = threading.Lock()

    def _key(self, text):
        return (self.provider, self.model_name, normalize_text(text))

    def _compute(self, texts):
        out = []
        for t in texts:
            key = normalize_text(t)
            with self._index_lock:
                if key not in self._index:
                    if len(self._index) >= self.dimension:
                        raise ConfigError(
                            f"one-hot embedder exhausted its {self.dimension} dimensions")
                    self._index[key] = len(self._index)
                idx = self._index[key]
            vec = np.zeros(self.dimension)
            vec[idx] = 1.0
            out.append(vec)
        return out


class RemoteEmbedder(Embedder):
    """Client for an HTTP embedding service.

    The API key comes from ``EMBEDDER_API_KEY`` and is sent as a bearer
    token. Requests are batched; transport errors, timeouts and 5xx replies
    are retried up to ``max_retries`` times.
    """

    provider = "remote"

    def __init__(self, endpoint: Optional[str] = None, model_name: str = "",
                 dimension: Optional[int] = None, batch_size: int = 64,
                 timeout: float = 30.0, max_retries: int = 3,
                 cache_capacity: int = 100_000, api_key: Optional[str] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 retry_backoff: float = 0.5):
        endpoint = endpoint or os.environ.get("EMBEDDER_ENDPOINT")
        if not endpoint:
            raise ConfigError("remote embedder needs an endpoint (or EMBEDDER_ENDPOINT)")
        if not model_name:
            raise ConfigError("remote embedder needs a model name")
        super().__init__(model_name, dimension, cache_capacity)
        self.endpoint = endpoint
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        key = api_key if api_key is not None else os.environ.get("EMBEDDER_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def descriptor(self) -> dict:
        return {**super().descriptor(), "endpoint": self.endpoint}

    def close(self):
        self._client.close()

    def _post(self, batch: list[str]) -> list:
        body = post_json_with_retries(
            self._client, self.endpoint, {"model": self.model_name, "texts": batch},
            self.max_retries, self.retry_backoff, what="embedding")
        vectors = body.get("vectors") if isinstance(body, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(batch):
            raise ExternalServiceError("malformed embedding response: expected 'vectors' list")
        return vectors

    def _compute(self, texts):
        out = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._post(texts[start:start + self.batch_size]))
        return out


def post_json_with_retries(client: httpx.Client, url: str, payload: dict, max_retries: int,
                           backoff: float, what: str = "service"):
    """POST JSON and decode the reply; transport errors and 5xx are retried."""
    for attempt in range(max_retries + 1):
        try:
            resp = client.post(url, json=payload)
        except httpx.TransportError as exc:
            problem = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code < 400:
                try:
                    return resp.json()
                except ValueError:
                    raise ExternalServiceError(f"{what} reply is not JSON") from None
            if resp.status_code < 500:
                raise ExternalServiceError(f"{what} request rejected: HTTP {resp.status_code}")
            problem = f"HTTP {resp.status_code}"
        if attempt < max_retries:
            time.sleep(backoff * (2 ** attempt))
    raise ExternalServiceError(f"{what} request failed after {max_retries + 1} attempts: {problem}")


def make_embedder(config: EmbedderConfig, **kwargs) -> Embedder:
    if config.provider == "local-hash":
        return HashEmbedder(config.dimension or 256, config.ngram_size, config.cache_capacity)
    if config.provider == "one-hot":
        return OneHotEmbedder(config.dimension or 4096, config.cache_capacity)
    return RemoteEmbedder(
        config.endpoint, config.model_name, config.dimension, config.batch_size,
        config.timeout, config.max_retries, config.cache_capacity, **kwargs)


_shared: dict[EmbedderConfig, Embedder] = {}
_shared_lock = threading.Lock()


def embed_text(text: str, config: EmbedderConfig | Embedder = EmbedderConfig()) -> np.ndarray:
    """Embed one text; configs share one cached embedder per distinct config."""
    if isinstance(config, Embedder):
        return config.embed(text)
    with _shared_lock:
        emb = _shared.get(config)
        if emb is None:
            emb = _shared[config] = make_embedder(config)
    return emb.embed(text)


def cosine(u: Iterable[float], v: Iterable[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ConfigError("cosine of a zero vector is undefined")
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))
