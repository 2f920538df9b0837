"""Embedding providers, intent centroids and cosine retrieval."""

from __future__ import annotations

import hashlib
import json
import os
import threading
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests

from .lm_gateway import TransportError

MOCK_DIM = 256
NGRAM = 3


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalise a zero vector")
    return mat / norms


class MockEmbeddingProvider:
    """Feature-hashed character trigrams, L2-normalised. Deterministic and offline."""

    def __init__(self, dim: int = MOCK_DIM, n: int = NGRAM):
        self.dim = dim
        self.n = n
        self.id = f"mock-char{n}-{dim}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            padded = "#" * (self.n - 1) + unicodedata.normalize("NFC", text).lower() + "#" * (self.n - 1)
            for i in range(len(padded) - self.n + 1):
                out[row, self._bucket(padded[i : i + self.n])] += 1.0
        return normalize_rows(out) if len(texts) else out


class HttpEmbeddingProvider:
    """POSTs ``{"model", "input": [...]}``; expects ``{"data": [{"embedding": [...]}]}``.

    The key comes from ``XQL_EMBED_KEY``.
    """

    def __init__(self, url: str, model: str = "default", key_env: str = "XQL_EMBED_KEY",
                 timeout: float = 60.0, batch_size: int = 64, session: requests.Session | None = None):
        self.url = url
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self.batch_size = batch_size
        self.session = session or requests.Session()
        self.id = f"http:{model}@{url}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            try:
                resp = self.session.post(self.url, json={"model": self.model, "input": batch},
                                         headers=headers, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
            rows.extend(d["embedding"] for d in data)
        return normalize_rows(np.array(rows)) if rows else np.zeros((0, 0))


class SentenceTransformerProvider:
    """Local sentence-transformers model (optional dependency)."""

    def __init__(self, model_name: str = "sentence-transformers/paraphrase-multilingual-MiniLM-L12-v2"):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_name)
        self.id = f"st:{model_name}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0))
        return normalize_rows(self.model.encode(list(texts), convert_to_numpy=True))


class CachedProvider:
    """Disk-backed cache keyed by (provider id, text hash); JSON lines on disk."""

    def __init__(self, provider, path: str | Path):
        self.provider = provider
        self.id = provider.id
        self.path = Path(path)
        self._lock = threading.Lock()
        self._mem: dict[str, np.ndarray] = {}
        if self.path.exists():
            for line in self.path.read_text("utf-8").splitlines():
                if not line.strip():
                    continue
                row = json.loads(line)
                if row["provider"] == self.id:
                    self._mem[row["text_hash"]] = np.array(row["vector"])

    @staticmethod
    def text_hash(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        keys = [self.text_hash(t) for t in texts]
        missing = sorted({k: t for k, t in zip(keys, texts) if k not in self._mem}.items())
        if missing:
            vecs = self.provider.embed([t for _, t in missing])
            with self._lock:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    for (key, _), vec in zip(missing, vecs):
                        self._mem[key] = np.asarray(vec)
                        fh.write(json.dumps({"provider": self.id, "text_hash": key,
                                             "vector": [float(x) for x in vec]}) + "\n")
        if not texts:
            return np.zeros((0, 0))
        return np.stack([self._mem[k] for k in keys])


def load_provider(spec: str, cache: str | Path | None = None):
    """``mock``, ``st:<model>`` or an HTTP URL; wrapped in a disk cache when given."""
    if spec == "mock":
        provider = MockEmbeddingProvider()
    elif spec.startswith("st:"):
        provider = SentenceTransformerProvider(spec[3:])
    elif spec.startswith(("http://", "https://")):
        provider = HttpEmbeddingProvider(spec)
    else:
        raise ValueError(f"unrecognised embedding provider {spec!r}")
    return CachedProvider(provider, cache) if cache else provider


def embed(texts: Sequence[str], provider) -> np.ndarray:
    """One unit vector per text, in order (rows of the returned array)."""
    if not texts:
        return np.zeros((0, 0))
    return provider.embed(list(texts))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass(frozen=True)
class IntentCentroid:
    intent: str
    vector: np.ndarray
    support_count: int


@dataclass(frozen=True)
class NeighborHit:
    example_ref: int
    score: float
    intent: str


def build_centroids(examples: Sequence[tuple[str, str]], provider, vectors: np.ndarray | None = None) -> list[IntentCentroid]:
    """Normalised mean embedding per intent, sorted by intent name.

    ``vectors`` may carry precomputed embeddings aligned with ``examples``.
    """
    if not examples:
        raise ValueError("cannot build centroids from an empty example list")
    if vectors is None:
        vectors = embed([t for t, _ in examples], provider)
    groups: dict[str, list[int]] = {}
    for i, (_, intent) in enumerate(examples):
        groups.setdefault(intent, []).append(i)
    out = []
    for intent in sorted(groups):
        idx = groups[intent]
        mean = vectors[idx].mean(axis=0)
        out.append(IntentCentroid(intent, normalize_rows(mean)[0], len(idx)))
    return out


def topk_intents(query: str, centroids: Sequence[IntentCentroid], k: int, provider,
                 query_vector: np.ndarray | None = None) -> list[tuple[str, float]]:
    """Top ``k`` intents by cosine similarity; ties broken by intent name."""
    if not 1 <= k <= len(centroids):
        raise ValueError(f"k={k} out of range 1..{len(centroids)}")
    q = embed([query], provider)[0] if query_vector is None else query_vector
    scores = np.stack([c.vector for c in centroids]) @ q
    ranked = sorted(zip(centroids, scores), key=lambda cs: (-cs[1], cs[0].intent))
    return [(c.intent, float(s)) for c, s in ranked[:k]]


def topk_examples(query: str, pool: Sequence[tuple[str, str]], k: int, provider,
                  intent_filter: Iterable[str] | None = None, pool_vectors: np.ndarray | None = None,
                  query_vector: np.ndarray | None = None) -> list[NeighborHit]:
    """Most similar pool entries (text, intent); ties broken by ascending index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    wanted = None if intent_filter is None else set(intent_filter)
    idx = [i for i, (_, intent) in enumerate(pool) if wanted is None or intent in wanted]
    if not idx:
        raise ValueError("empty pool after filtering")
    if pool_vectors is None:
        pool_vectors = embed([pool[i][0] for i in idx], provider)
        sub = pool_vectors
    else:
        sub = pool_vectors[idx]
    q = embed([query], provider)[0] if query_vector is None else query_vector
    scores = sub @ q
    order = sorted(range(len(idx)), key=lambda j: (-scores[j], idx[j]))[:k]
    return [NeighborHit(idx[j], float(scores[j]), pool[idx[j]][1]) for j in order]


def corpus_similarity_report(parallel_pairs: Sequence[tuple[str, str]], provider) -> float:
    """Mean cosine similarity of (source, translation) pairs as a percentage, 2 decimals."""
    if not parallel_pairs:
        raise ValueError("no pairs to compare")
    src = embed([a for a, _ in parallel_pairs], provider)
    tgt = embed([b for _, b in parallel_pairs], provider)
    sims = np.sum(normalize_rows(src) * normalize_rows(tgt), axis=1)
    return round(float(np.mean(sims)) * 100, 2)
