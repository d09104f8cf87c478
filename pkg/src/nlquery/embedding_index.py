"""Text vectorization and exact cosine top-k search over context chunks.

The built-in embedder is fully deterministic: bag-of-tokens hashed into a
fixed number of slots with FNV-1a, signed by the hash's top bit, then
L2-normalized. That makes retrieval reproducible across runs and platforms,
which the whole pipeline's test story leans on. A remote embedding service
can be plugged in instead; its results are cached by text hash so repeated
runs stay deterministic and cheap.

The store itself is brute-force cosine over an in-memory table. At this
corpus size (tables plus rules, hundreds of chunks) exact search beats any
approximate index and is reproducible by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
from dataclasses import dataclass, field

import httpx

DEFAULT_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DimensionMismatch(Exception):
    """Embedding length differs from the index dimension."""


class NotFound(Exception):
    """No chunk with the given id."""


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_text(text: str, dim: int = DEFAULT_DIM) -> list[float]:
    """Deterministic built-in embedder.

    Lowercase, split on non-alphanumeric; each token contributes +1 or -1
    (sign from bit 63 of its 64-bit FNV-1a hash) to slot hash mod dim; the
    result is L2-normalized unless it is all zero. Zero happens for empty
    text and, vanishingly rarely, when signed token counts cancel; zero
    vectors score 0 against everything.
    """
    slots = [0.0] * dim
    for token in _TOKEN_RE.findall(text.lower()):
        h = _fnv1a64(token.encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        slots[h % dim] += sign
    norm = math.sqrt(sum(v * v for v in slots))
    if norm == 0.0:
        return slots
    return [v / norm for v in slots]


def cosine(a: list[float], b: list[float]) -> float:
    """Cosine similarity; 0.0 by definition when either vector is zero."""
    norm_a = math.sqrt(sum(v * v for v in a))
    norm_b = math.sqrt(sum(v * v for v in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)


def chunk_id(kind: str, source_ref: str, text: str) -> str:
    """Stable content-addressed chunk id."""
    digest = hashlib.sha256(f"{kind}\x00{source_ref}\x00{text}".encode("utf-8"))
    return digest.hexdigest()[:24]


@dataclass
class ContextChunk:
    """A retrievable text unit: a table doc or a business rule.

    embedding may be None before the chunk reaches an index; upsert fills it
    in with the index's embedder.
    """

    id: str
    kind: str  # "table_doc" | "rule"
    text: str
    source_ref: str
    embedding: list[float] | None = None
    active: bool = True

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "text": self.text,
            "source_ref": self.source_ref,
            "embedding": self.embedding,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContextChunk":
        return cls(
            id=data["id"],
            kind=data["kind"],
            text=data["text"],
            source_ref=data["source_ref"],
            embedding=list(data["embedding"]) if data.get("embedding") is not None else None,
            active=bool(data.get("active", True)),
        )


@dataclass
class BusinessRule:
    """A domain constraint or definition applied during SQL generation and
    validation (for example, how a metric is computed)."""

    rule_id: str
    text: str
    tags: list[str] = field(default_factory=list)
    created_at: str = ""
    updated_at: str = ""
    active: bool = True

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("rule text must be non-empty")

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "text": self.text,
            "tags": self.tags,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BusinessRule":
        return cls(
            rule_id=data["rule_id"],
            text=data["text"],
            tags=list(data.get("tags", [])),
            created_at=data.get("created_at", ""),
            updated_at=data.get("updated_at", ""),
            active=bool(data.get("active", True)),
        )


def rule_chunk(rule: BusinessRule) -> ContextChunk:
    """The indexable form of a rule."""
    return ContextChunk(
        id=chunk_id("rule", rule.rule_id, rule.text),
        kind="rule",
        text=rule.text,
        source_ref=rule.rule_id,
        embedding=None,
        active=rule.active,
    )


@dataclass
class SearchHit:
    chunk: ContextChunk
    score: float


class VectorIndex:
    """Exact-search vector store over context chunks.

    Concurrency: many readers or one writer. search never mutates; upsert
    and deactivate serialize through an internal lock.
    """

    def __init__(self, dim: int = DEFAULT_DIM, embedder=None):
        self.dim = dim
        self._embedder = embedder or (lambda text: embed_text(text, dim))
        self._chunks: dict[str, ContextChunk] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._chunks)

    def embed(self, text: str) -> list[float]:
        return self._embedder(text)

    def upsert(self, chunk: ContextChunk) -> None:
        """Insert or replace the chunk with the same id.

        A chunk arriving without an embedding gets one from the index's
        embedder; one arriving with an embedding must match the index
        dimension (non-zero vectors are re-normalized).
        """
        if chunk.embedding is None:
            embedding = self._embedder(chunk.text)
        else:
            embedding = list(chunk.embedding)
        if len(embedding) != self.dim:
            raise DimensionMismatch(
                f"embedding has {len(embedding)} dimensions, index expects {self.dim}"
            )
        norm = math.sqrt(sum(v * v for v in embedding))
        if norm > 0.0 and abs(norm - 1.0) > 1e-9:
            embedding = [v / norm for v in embedding]
        stored = ContextChunk(
            id=chunk.id,
            kind=chunk.kind,
            text=chunk.text,
            source_ref=chunk.source_ref,
            embedding=embedding,
            active=chunk.active,
        )
        with self._lock:
            self._chunks[chunk.id] = stored

    def upsert_text(self, kind: str, source_ref: str, text: str) -> ContextChunk:
        """Convenience: build a content-addressed chunk from text and upsert it."""
        chunk = ContextChunk(
            id=chunk_id(kind, source_ref, text),
            kind=kind,
            text=text,
            source_ref=source_ref,
        )
        self.upsert(chunk)
        return self._chunks[chunk.id]

    def get(self, chunk_id_: str) -> ContextChunk | None:
        with self._lock:
            return self._chunks.get(chunk_id_)

    def deactivate(self, chunk_id_: str) -> None:
        """Exclude a chunk from future searches; it stays stored for audit."""
        with self._lock:
            if chunk_id_ not in self._chunks:
                raise NotFound(f"no chunk with id {chunk_id_!r}")
            self._chunks[chunk_id_].active = False

    def has_kind(self, kind: str) -> bool:
        with self._lock:
            return any(c.kind == kind and c.active for c in self._chunks.values())

    def search(self, query_text: str, top_k: int, kind_filter: str | None = None) -> list[SearchHit]:
        """Top-k active chunks by cosine score, ties broken by id ascending.

        Scores against a zero query vector (or zero stored vector) are 0 by
        definition. An empty index yields an empty list.
        """
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        query = self._embedder(query_text)
        if len(query) != self.dim:
            raise DimensionMismatch(
                f"query embedding has {len(query)} dimensions, index expects {self.dim}"
            )
        q_norm = math.sqrt(sum(v * v for v in query))
        with self._lock:
            candidates = [
                c
                for c in self._chunks.values()
                if c.active and (kind_filter is None or c.kind == kind_filter)
            ]
        scored = []
        for chunk in candidates:
            vec = chunk.embedding
            if q_norm == 0.0 or not any(vec):
                score = 0.0
            else:
                # Stored vectors and the query are unit length, so the dot
                # product is the cosine.
                score = sum(x * y for x, y in zip(vec, query))
            scored.append((score, chunk))
        scored.sort(key=lambda pair: (-pair[0], pair[1].id))
        return [SearchHit(chunk=c, score=s) for s, c in scored[:top_k]]

    def save(self, path: str) -> None:
        """Persist as JSON lines, one chunk per line, via write-temp-then-rename."""
        tmp = f"{path}.tmp"
        with self._lock:
            chunks = [self._chunks[cid] for cid in sorted(self._chunks)]
        with open(tmp, "w", encoding="utf-8") as fh:
            for chunk in chunks:
                fh.write(json.dumps(chunk.to_dict(), ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str, dim: int | None = None, embedder=None) -> "VectorIndex":
        chunks = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    chunks.append(ContextChunk.from_dict(json.loads(line)))
        if dim is None:
            dim = len(chunks[0].embedding) if chunks else DEFAULT_DIM
        index = cls(dim=dim, embedder=embedder)
        for chunk in chunks:
            index.upsert(chunk)
        return index


class RemoteEmbedder:
    """Adapter for an HTTP embedding service, with a persistent cache keyed by
    text hash so identical texts never hit the network twice."""

    def __init__(
        self,
        url: str,
        model: str,
        dim: int = DEFAULT_DIM,
        auth_env_var: str | None = None,
        cache_path: str | None = None,
        client: httpx.Client | None = None,
        timeout_s: float = 30.0,
    ):
        self.url = url
        self.model = model
        self.dim = dim
        self.auth_env_var = auth_env_var
        self.cache_path = cache_path
        self._client = client or httpx.Client(timeout=timeout_s)
        self._cache: dict[str, list[float]] = {}
        if cache_path and os.path.exists(cache_path):
            with open(cache_path, "r", encoding="utf-8") as fh:
                self._cache = json.load(fh)

    def __call__(self, text: str) -> list[float]:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if key in self._cache:
            return list(self._cache[key])
        headers = {}
        if self.auth_env_var and os.environ.get(self.auth_env_var):
            headers["Authorization"] = f"Bearer {os.environ[self.auth_env_var]}"
        response = self._client.post(
            self.url, json={"model": self.model, "input": text}, headers=headers
        )
        response.raise_for_status()
        values = response.json()["data"][0]["embedding"]
        if len(values) != self.dim:
            raise DimensionMismatch(
                f"remote embedder returned {len(values)} dimensions, expected {self.dim}"
            )
        norm = math.sqrt(sum(v * v for v in values))
        if norm > 0.0:
            values = [v / norm for v in values]
        self._cache[key] = list(values)
        self._persist_cache()
        return list(values)

    def _persist_cache(self) -> None:
        if not self.cache_path:
            return
        tmp = f"{self.cache_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self._cache, fh)
        os.replace(tmp, self.cache_path)
