"""Demonstration retrieval and ICL prompt assembly.

Three paradigms select k demos from an embedded pool of annotated docs:
  - semantic_knn: cosine similarity between query and candidate embeddings;
  - type_overlap: size of the intersection between the query's gold typeset
    and each candidate's typeset (oracle-only: needs the query's gold);
  - entity_density: candidates with the most gold mentions, query-independent.

All paradigms rank by (score desc, pool index asc) and return demos in
reverse rank order, i.e. ascending score with the strongest demo last, so
the rendered prompt places the best demo adjacent to the query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import AnnotatedDoc, sorted_mentions, typeset
from .embeddings import Embedder, embed_one
from .errors import EmbeddingServiceError

PARADIGMS = ("semantic_knn", "type_overlap", "entity_density")


@dataclass(frozen=True)
class PoolEntry:
    doc: AnnotatedDoc
    vector: tuple[float, ...]
    types: frozenset[str]
    entity_count: int


@dataclass
class EmbeddedPool:
    """Demonstration pool with precomputed embeddings, typesets and counts.

    Entry order is the dataset order and is the tie-break for every ranking.
    """

    entries: list[PoolEntry]
    embedding_model_id: str

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 1))
        return np.asarray([e.vector for e in self.entries], dtype=np.float64)


@dataclass
class DemoSet:
    """Ranked demos in prompt order (ascending score, strongest last)."""

    demos: list[tuple[AnnotatedDoc, float]]
    paradigm: str
    k: int

    def doc_ids(self) -> list[str]:
        return [doc.id for doc, _ in self.demos]

    def type_union(self) -> set[str]:
        out: set[str] = set()
        for doc, _ in self.demos:
            out |= typeset(doc.gold)
        return out


def build_pool(docs: list[AnnotatedDoc], embedder: Embedder) -> EmbeddedPool:
    """Embed every doc once and cache its typeset and mention count."""
    if not docs:
        return EmbeddedPool(entries=[], embedding_model_id=embedder.model_id)
    try:
        vectors = embedder.embed([d.text for d in docs])
    except EmbeddingServiceError:
        raise
    except Exception as exc:
        raise EmbeddingServiceError(f"pool embedding failed: {exc}") from exc
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(docs):
        raise EmbeddingServiceError(
            f"embedder returned shape {vectors.shape} for {len(docs)} docs")
    entries = [
        PoolEntry(doc=doc, vector=tuple(float(x) for x in vectors[i]),
                  types=frozenset(typeset(doc.gold)), entity_count=len(doc.gold))
        for i, doc in enumerate(docs)
    ]
    return EmbeddedPool(entries=entries, embedding_model_id=embedder.model_id)


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of each matrix row against the query vector."""
    if matrix.shape[0] == 0:
        return np.zeros(0)
    q = np.asarray(query, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    qnorm = np.linalg.norm(q)
    scores = np.zeros(matrix.shape[0], dtype=np.float64)
    valid = norms > 0
    if qnorm > 0:
        scores[valid] = (matrix[valid] @ q) / (norms[valid] * qnorm)
    return scores


def _select(pool: EmbeddedPool, scores, k: int, paradigm: str,
            exclude_doc_id: str | None = None) -> DemoSet:
    """Shared ranking: (score desc, index asc), then reversed into prompt order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = [
        (float(scores[i]), i) for i, entry in enumerate(pool.entries)
        if exclude_doc_id is None or entry.doc.id != exclude_doc_id
    ]
    ranked.sort(key=lambda pair: (-pair[0], pair[1]))
    picked = ranked[:k]
    picked.reverse()
    demos = [(pool.entries[i].doc, s) for s, i in picked]
    return DemoSet(demos=demos, paradigm=paradigm, k=k)


def retrieve_semantic_knn(pool: EmbeddedPool, query_text: str, k: int,
                          embedder: Embedder,
                          exclude_doc_id: str | None = None) -> DemoSet:
    """Top-k pool docs by cosine similarity to the embedded query text."""
    if embedder.model_id != pool.embedding_model_id:
        raise EmbeddingServiceError(
            f"pool built with {pool.embedding_model_id!r}, "
            f"query embedder is {embedder.model_id!r}")
    query_vec = embed_one(embedder, query_text)
    scores = cosine_scores(pool.matrix(), query_vec)
    return _select(pool, scores, k, "semantic_knn", exclude_doc_id)


def retrieve_type_overlap(pool: EmbeddedPool, query_gold, k: int,
                          exclude_doc_id: str | None = None) -> DemoSet:
    """Top-k by |query gold typeset ∩ candidate typeset|. Oracle setting:
    it consumes the query's ground-truth types, so callers must gate it
    behind an explicit oracle acknowledgment."""
    query_types = typeset(query_gold) if not isinstance(query_gold, set) else query_gold
    scores = [len(query_types & entry.types) for entry in pool.entries]
    return _select(pool, scores, k, "type_overlap", exclude_doc_id)


def retrieve_entity_density(pool: EmbeddedPool, k: int,
                            exclude_doc_id: str | None = None) -> DemoSet:
    """Top-k by gold mention count; ignores the query entirely."""
    scores = [entry.entity_count for entry in pool.entries]
    return _select(pool, scores, k, "entity_density", exclude_doc_id)


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    """Versioned rendering template for demos and the query block."""

    name: str
    version: int
    demo_block: str
    query_block: str
    separator: str

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(name=raw["name"], version=int(raw["version"]),
                   demo_block=raw["demo_block"], query_block=raw["query_block"],
                   separator=raw["separator"])

    @classmethod
    def default(cls) -> "PromptTemplate":
        raw = json.loads(
            resources.files("ctiner.templates").joinpath("icl_default.json")
            .read_text(encoding="utf-8"))
        return cls(name=raw["name"], version=int(raw["version"]),
                   demo_block=raw["demo_block"], query_block=raw["query_block"],
                   separator=raw["separator"])


def entities_json(entities) -> str:
    """Serialize an entity set exactly as the model is asked to answer."""
    return json.dumps(
        [{"span": m.span, "type": m.entity_type} for m in sorted_mentions(entities)],
        ensure_ascii=False)


@dataclass
class IclPrompt:
    """Assembled prompt: instruction, rendered demo blocks, query block."""

    instruction_text: str
    demo_blocks: list[str]
    query_text: str
    template: PromptTemplate

    def render(self) -> str:
        parts = [self.instruction_text]
        parts.extend(self.demo_blocks)
        parts.append(self.template.query_block.format(text=self.query_text))
        return self.template.separator.join(parts)


def assemble_prompt(instruction_text: str, demos: DemoSet, query_text: str,
                    template: PromptTemplate | None = None) -> IclPrompt:
    """Render demos in their stored order (ascending score) ahead of the query.

    Demo gold entities are serialized in full; nothing is truncated. Callers
    monitor prompt length via len(prompt.render()).
    """
    template = template or PromptTemplate.default()
    if demos.paradigm == "semantic_knn":
        scores = [s for _, s in demos.demos]
        if any(a > b + 1e-12 for a, b in zip(scores, scores[1:])):
            raise ValueError("semantic_knn demos must be in ascending score order")
    blocks = [
        template.demo_block.format(text=doc.text, entities=entities_json(doc.gold))
        for doc, _ in demos.demos
    ]
    return IclPrompt(instruction_text=instruction_text, demo_blocks=blocks,
                     query_text=query_text, template=template)
