"""Text embedding backends: deterministic local hashing, remote API, disk cache.

The remote protocol is the OpenAI-compatible embeddings endpoint:
POST {"model": ..., "input": [...]} -> {"data": [{"embedding": [...]}, ...]}.
Cache layout: <cache_dir>/emb/<model>/<sha256-of-text>.json.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import EmbeddingServiceError


class Embedder(Protocol):
    model_id: str

    def embed(self, texts: list[str]) -> np.ndarray:
        """Return one fixed-dimension float vector per input text."""
        ...


class HashEmbedder:
    """Deterministic offline embedder: hashed bag of word unigrams and bigrams.

    Texts sharing vocabulary land near each other in cosine space, which is
    enough structure for retrieval tests and smoke runs without any model.
    """

    def __init__(self, dim: int = 64, model_id: str = "hash-64"):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.model_id = model_id

    def _tokens(self, text: str) -> list[str]:
        words = text.lower().split()
        if not words:
            words = list(text.lower()) or [""]
        bigrams = [f"{a} {b}" for a, b in zip(words, words[1:])]
        return words + bigrams

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            for tok in self._tokens(text):
                digest = hashlib.sha256(tok.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "big") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                out[i, bucket] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
            else:
                out[i, 0] = 1.0
        return out


class CallableEmbedder:
    """Wrap a plain function text -> vector; used by scripted tests."""

    def __init__(self, fn: Callable[[str], list[float]], model_id: str = "scripted"):
        self.fn = fn
        self.model_id = model_id

    def embed(self, texts: list[str]) -> np.ndarray:
        rows = [np.asarray(self.fn(t), dtype=np.float64) for t in texts]
        if rows and any(r.shape != rows[0].shape for r in rows):
            raise EmbeddingServiceError("scripted embedder returned mixed dimensions")
        return np.vstack(rows) if rows else np.zeros((0, 1))


class RemoteEmbedder:
    """OpenAI-compatible embeddings endpoint client with bounded parallelism."""

    def __init__(self, base_url: str, model_id: str, api_key: str = "",
                 timeout: float = 60.0, batch_size: int = 64, max_workers: int = 4):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.timeout = timeout
        self.batch_size = batch_size
        self.max_workers = max_workers

    def _post_batch(self, batch: list[str]) -> list[list[float]]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(f"{self.base_url}/embeddings",
                                 json={"model": self.model_id, "input": batch},
                                 headers=headers, timeout=self.timeout)
        except Exception as exc:
            raise EmbeddingServiceError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise EmbeddingServiceError(
                f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()["data"]
            return [row["embedding"] for row in data]
        except Exception as exc:
            raise EmbeddingServiceError(f"malformed embedding response: {exc}") from exc

    def embed(self, texts: list[str]) -> np.ndarray:
        batches = [texts[i:i + self.batch_size]
                   for i in range(0, len(texts), self.batch_size)]
        if not batches:
            return np.zeros((0, 1))
        if len(batches) == 1:
            vectors = self._post_batch(batches[0])
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                results = list(pool.map(self._post_batch, batches))
            vectors = [v for batch in results for v in batch]
        return np.asarray(vectors, dtype=np.float64)


class CachedEmbedder:
    """Disk cache keyed by (model id, sha256 of text) around any embedder."""

    def __init__(self, inner: Embedder, cache_dir: str | Path):
        self.inner = inner
        self.model_id = inner.model_id
        self.cache_dir = Path(cache_dir) / "emb" / _safe_name(inner.model_id)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _path(self, text: str) -> Path:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{key}.json"

    def embed(self, texts: list[str]) -> np.ndarray:
        cached: dict[int, list[float]] = {}
        missing: list[int] = []
        for i, text in enumerate(texts):
            path = self._path(text)
            if path.exists():
                cached[i] = json.loads(path.read_text(encoding="utf-8"))["embedding"]
                self.hits += 1
            else:
                missing.append(i)
                self.misses += 1
        if missing:
            fresh = self.inner.embed([texts[i] for i in missing])
            for slot, i in enumerate(missing):
                vec = [float(x) for x in fresh[slot]]
                payload = {"model": self.model_id, "embedding": vec}
                self._path(texts[i]).write_text(json.dumps(payload), encoding="utf-8")
                cached[i] = vec
        if not texts:
            return np.zeros((0, 1))
        return np.asarray([cached[i] for i in range(len(texts))], dtype=np.float64)


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in name)


def embed_one(embedder: Embedder, text: str) -> np.ndarray:
    rows = embedder.embed([text])
    return np.asarray(rows[0], dtype=np.float64)
