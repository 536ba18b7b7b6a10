"""Embedding providers and exact k-nearest-neighbor search.

Search is brute force by design: the pipeline's conclusions depend on
exact top-k sets, so an accelerated structure would have to be
behaviorally identical anyway at the corpus sizes involved.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import httpx
import numpy as np

from .corpus import AuthorProfile, PaperRecord, _paper_from_json, _paper_json, _profile_from_json, _profile_json, profile_text
from .errors import TransportError, VectorStoreError
from .util import sha256_text, stable_json

log = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class EmbeddingVector:
    model_id: str
    values: tuple[float, ...]

    @property
    def dims(self) -> int:
        return len(self.values)

    def __post_init__(self):
        if not self.values:
            raise VectorStoreError("embedding vector must not be empty")
        if not all(math.isfinite(v) for v in self.values):
            raise VectorStoreError("embedding vector contains non-finite values")


class MockEmbeddingProvider:
    """Deterministic text embedder for tests and offline runs.

    A seeded hash of the text drives a PRNG that fills a fixed-dims
    vector with values in [0, 1); identical (text, seed) pairs always map
    to identical vectors.
    """

    def __init__(self, dims: int = 32, seed: int = 0, model_id: str = "mock-embed"):
        if dims < 1:
            raise VectorStoreError("dims must be positive")
        self.dims = dims
        self.seed = seed
        self.model_id = model_id

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise VectorStoreError("cannot embed empty text")
        digest = sha256_text(f"{self.seed}:{self.dims}:{text}")
        rng = np.random.default_rng(int(digest[:16], 16))
        values = rng.random(self.dims)
        return EmbeddingVector(model_id=self.model_id, values=tuple(float(v) for v in values))


class HttpEmbeddingProvider:
    """Client for the JSON embedding protocol: POST {model, input} -> {embedding}."""

    def __init__(
        self,
        base_url: str,
        model_id: str,
        dims: int | None = None,
        api_key_env: str = "SCITEAM_EMBED_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.dims = dims
        self._max_attempts = max_attempts
        headers = {}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise VectorStoreError("cannot embed empty text")
        payload = {"model": self.model_id, "input": text}
        last: Exception | None = None
        for attempt in range(self._max_attempts):
            try:
                resp = self._client.post(self.base_url, json=payload)
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise TransportError(f"embedding server returned {resp.status_code}")
                if resp.status_code >= 400:
                    raise VectorStoreError(f"embedding request rejected: {resp.status_code} {resp.text[:200]}")
                values = resp.json()["embedding"]
                break
            except (httpx.TransportError, TransportError) as exc:
                last = exc
                time.sleep(0.25 * 2**attempt)
        else:
            raise TransportError(f"embedding request failed after {self._max_attempts} attempts: {last}")
        vec = EmbeddingVector(model_id=self.model_id, values=tuple(float(v) for v in values))
        if self.dims is not None and vec.dims != self.dims:
            raise VectorStoreError(f"embedding server returned {vec.dims} dims, expected {self.dims}")
        return vec


def embed_text(provider, text: str) -> EmbeddingVector:
    """Embed one non-empty text through the given provider."""
    if not text:
        raise VectorStoreError("cannot embed empty text")
    return provider.embed(text)


class VectorIndex:
    """Exact Euclidean k-NN over id -> (vector, payload) entries.

    Single-writer: populate with `add`, then treat as immutable; queries
    are read-only and safe to issue concurrently once building stops.
    """

    def __init__(self, dims: int, model_id: str):
        if dims < 1:
            raise VectorStoreError("dims must be positive")
        self.dims = dims
        self.model_id = model_id
        self.metric = EUCLIDEAN
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._payloads: dict[str, dict] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._id_array: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def add(self, entry_id: str, vector: EmbeddingVector, payload: dict | None = None) -> None:
        if entry_id in self._pos:
            raise VectorStoreError(f"duplicate index id {entry_id!r}")
        if vector.dims != self.dims:
            raise VectorStoreError(f"vector has {vector.dims} dims, index expects {self.dims}")
        if vector.model_id != self.model_id:
            raise VectorStoreError(
                f"vector from model {vector.model_id!r} cannot enter an index built for {self.model_id!r}"
            )
        self._pos[entry_id] = len(self._ids)
        self._ids.append(entry_id)
        self._payloads[entry_id] = payload or {}
        self._rows.append(np.asarray(vector.values, dtype=np.float64))
        self._matrix = None
        self._id_array = None

    def payload(self, entry_id: str) -> dict:
        return self._payloads[entry_id]

    def vector(self, entry_id: str) -> np.ndarray:
        return self._rows[self._pos[entry_id]]

    def _dense(self) -> np.ndarray:
        if self._matrix is None or len(self._matrix) != len(self._rows):
            self._matrix = np.vstack(self._rows) if self._rows else np.zeros((0, self.dims))
            self._id_array = np.asarray(self._ids)
        return self._matrix

    def knn(self, query: EmbeddingVector | np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k entries by ascending Euclidean distance, ties by id.

        Returns min(k, size) results; empty index yields an empty list.
        """
        if k < 1:
            raise VectorStoreError("k must be positive")
        q = np.asarray(query.values if isinstance(query, EmbeddingVector) else query, dtype=np.float64)
        if q.shape != (self.dims,):
            raise VectorStoreError(f"query has shape {q.shape}, index expects ({self.dims},)")
        if not self._ids:
            return []
        m = self._dense()
        dists = np.sqrt(((m - q) ** 2).sum(axis=1))
        # lexsort orders by distance, then id, so ranking is total and
        # deterministic even among exact ties
        order = np.lexsort((self._id_array, dists))
        return [(self._ids[i], float(dists[i])) for i in order[:k]]

    def save(self, path: str | Path) -> None:
        doc = {
            "version": 1,
            "header": {
                "dims": self.dims,
                "metric": self.metric,
                "model_id": self.model_id,
                "count": len(self),
            },
            "entries": [
                {"id": eid, "vector": [float(v) for v in self._rows[i]], "payload": self._payloads[eid]}
                for i, eid in enumerate(self._ids)
            ],
        }
        Path(path).write_text(stable_json(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, expect_model_id: str | None = None) -> "VectorIndex":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != 1:
            raise VectorStoreError(f"unsupported index file version {doc.get('version')!r}")
        header = doc["header"]
        if header["metric"] != EUCLIDEAN:
            raise VectorStoreError(f"unsupported metric {header['metric']!r}")
        if expect_model_id is not None and header["model_id"] != expect_model_id:
            raise VectorStoreError(
                f"index at {path} was built with model {header['model_id']!r}, expected {expect_model_id!r}"
            )
        index = cls(dims=header["dims"], model_id=header["model_id"])
        for entry in doc["entries"]:
            index.add(
                entry["id"],
                EmbeddingVector(model_id=header["model_id"], values=tuple(entry["vector"])),
                entry["payload"],
            )
        if len(index) != header["count"]:
            raise VectorStoreError(f"index at {path} declares {header['count']} entries, found {len(index)}")
        return index


def build_paper_index(papers: Sequence[PaperRecord], provider) -> VectorIndex:
    """Embed paper abstracts into a fresh index, payload = paper fields."""
    index = VectorIndex(dims=provider.dims, model_id=provider.model_id)
    for p in papers:
        index.add(p.id, embed_text(provider, p.abstract), _paper_json(p))
    return index


@dataclass
class KnowledgeBank:
    """Vector index over serialized scientist profiles."""

    index: VectorIndex

    def __len__(self) -> int:
        return len(self.index)


def build_knowledge_bank(scientists: Sequence[AuthorProfile], provider, name_by_id: Mapping[str, str] | None = None) -> KnowledgeBank:
    index = VectorIndex(dims=provider.dims, model_id=provider.model_id)
    for s in scientists:
        index.add(s.id, embed_text(provider, profile_text(s, name_by_id)), _profile_json(s))
    return KnowledgeBank(index=index)


def retrieve_papers(db: VectorIndex, query_text: str, k: int, provider) -> list[tuple[PaperRecord, float]]:
    """Nearest papers to a query text, decoded from payloads, with distances."""
    query = embed_text(provider, query_text)
    return [(_paper_from_json(db.payload(eid)), dist) for eid, dist in db.knn(query, k)]


def retrieve_profiles(bank: KnowledgeBank, query_text: str, k: int, provider) -> list[tuple[AuthorProfile, float]]:
    """Nearest scientist profiles to a query text."""
    query = embed_text(provider, query_text)
    return [(_profile_from_json(bank.index.payload(eid)), dist) for eid, dist in bank.index.knn(query, k)]
