"""Embedding providers and the distance functions used for reasoning selection."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import DegenerateVector, DimensionError, ProviderError
from .teacher import ContentCache, sha256_hex


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    dim: int
    norm: float

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise DimensionError("embedding must have at least one component")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite entries")
        arr.setflags(write=False)
        return cls(arr, int(arr.size), float(np.linalg.norm(arr)))

    def __eq__(self, other):
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    __hash__ = None


def _as_array(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def _check_dims(u: np.ndarray, v: np.ndarray):
    if u.shape != v.shape:
        raise DimensionError(f"dimension mismatch: {u.shape} vs {v.shape}")


def euclidean(u, v) -> float:
    a, b = _as_array(u), _as_array(v)
    _check_dims(a, b)
    return float(np.linalg.norm(a - b))


def cosine_distance(u, v) -> float:
    a, b = _as_array(u), _as_array(v)
    _check_dims(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine distance undefined for a zero vector")
    # Rounding can push the cosine a hair past 1.
    return float(max(0.0, 1.0 - np.dot(a, b) / (na * nb)))


METRICS = {"euclidean": euclidean, "cosine": cosine_distance}


# ------------------------------------------------------------- providers


class FileEmbeddingProvider:
    """Precomputed vectors from JSONL rows ``{"text_hash": sha256(text), "vector": [...]}``."""

    def __init__(self, path):
        self.path = Path(path)
        self.provider_id = f"file:{self.path.name}"
        self.table = {}
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    self.table[row["text_hash"]] = row["vector"]
        self.calls = 0

    def embed_batch(self, texts: Sequence[str]) -> list:
        self.calls += 1
        out = []
        for t in texts:
            h = sha256_hex(t)
            if h not in self.table:
                raise ProviderError(f"no precomputed embedding for text hash {h}")
            out.append(self.table[h])
        return out


class HttpEmbeddingProvider:
    def __init__(self, url: str, api_key: str | None = None, model: str = "all-mpnet-base-v2",
                 timeout: float = 60.0, session=None):
        if not url:
            raise ProviderError("embedding endpoint URL is not configured")
        self.url, self.api_key, self.model, self.timeout = url, api_key, model, timeout
        self.session = session or requests.Session()
        self.provider_id = f"http:{model}@{url}"

    @classmethod
    def from_env(cls, **kw) -> "HttpEmbeddingProvider":
        return cls(os.environ.get("ROS_EMBED_URL", ""), os.environ.get("ROS_EMBED_KEY"),
                   os.environ.get("ROS_EMBED_MODEL", "all-mpnet-base-v2"), **kw)

    def embed_batch(self, texts: Sequence[str]) -> list:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.session.post(self.url, json={"input": list(texts), "model": self.model},
                                     headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()["data"]
        except (requests.RequestException, ValueError, KeyError) as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if len(data) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(data)}")
        return [row["embedding"] for row in data]


class HashingEmbeddingProvider:
    """Feature-hashed bag of words. Offline stand-in for demos, not a semantic encoder."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.provider_id = f"hashing:{dim}"

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in re.findall(r"\w+", text.lower()):
            h = int(sha256_hex(tok)[:16], 16)
            v[h % self.dim] += 1.0 if (h >> 20) & 1 else -1.0
        return v

    def embed_batch(self, texts: Sequence[str]) -> list:
        return [self.vector(t).tolist() for t in texts]


def embed(texts: Sequence[str], provider, cache: ContentCache | None = None) -> list:
    """One vector per text; duplicates and cached texts are not sent to the provider."""
    pid = provider.provider_id
    keyed = {}
    for t in texts:
        keyed.setdefault(t, sha256_hex(f"{pid}\x00{t}"))
    found = {}
    missing = []
    for t, key in keyed.items():
        hit = cache.get(key) if cache is not None else None
        if hit is None:
            missing.append(t)
        else:
            found[t] = hit
    if missing:
        vectors = provider.embed_batch(missing)
        for t, vec in zip(missing, vectors):
            vec = [float(x) for x in vec]
            found[t] = vec
            if cache is not None:
                cache.put(keyed[t], vec)
    out = [EmbeddingVector.of(found[t]) for t in texts]
    dims = {v.dim for v in out}
    if len(dims) > 1:
        raise DimensionError(f"embedding batch mixes dimensions {sorted(dims)}")
    return out


def write_embeddings_file(path, texts: Sequence[str], vectors) -> Path:
    """Write a precomputed-vector file readable by :class:`FileEmbeddingProvider`."""
    path = Path(path)
    seen = set()
    with open(path, "w", encoding="utf-8") as fh:
        for t, v in zip(texts, vectors):
            h = sha256_hex(t)
            if h in seen:
                continue
            seen.add(h)
            fh.write(json.dumps({"text_hash": h, "vector": [float(x) for x in v]}) + "\n")
    return path
