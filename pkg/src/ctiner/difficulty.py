"""Six-dimension dataset difficulty profiling.

Raw dimensions (all oriented harder-is-larger): mean document length in
tokens, number of observed entity types, imbalance of the type distribution
(Gini), mean entity span length in tokens, semantic confusability between
types (mean pairwise cosine of per-type mention centroids), and the share of
test entity surfaces never seen in training. Each dimension is min-max
normalized across a collection of datasets and the difficulty index is their
weighted sum (equal weights by default).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DatasetBundle, sorted_mentions
from .embeddings import Embedder
from .errors import EmbeddingServiceError

DIMENSIONS = (
    "doc_length",
    "type_count",
    "type_imbalance",
    "entity_length",
    "type_confusability",
    "entity_novelty",
)

EQUAL_WEIGHTS = {dim: 1.0 / len(DIMENSIONS) for dim in DIMENSIONS}


@dataclass
class DifficultyProfile:
    """Raw and normalized dimension values plus the aggregate index."""

    dataset: str
    raw: dict[str, float]
    flags: dict[str, str] = field(default_factory=dict)
    normalized: dict[str, float] | None = None
    omega: float | None = None
    weights: dict[str, float] = field(default_factory=lambda: dict(EQUAL_WEIGHTS))

    def as_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "raw": {dim: self.raw.get(dim) for dim in DIMENSIONS},
            "normalized": (None if self.normalized is None else
                           {dim: self.normalized[dim] for dim in DIMENSIONS}),
            "omega": self.omega,
            "weights": {dim: self.weights[dim] for dim in DIMENSIONS},
            "flags": dict(sorted(self.flags.items())),
        }


def gini(counts) -> float:
    """Mean-absolute-difference Gini over non-negative counts.

    Equals sum_i sum_j |x_i - x_j| / (2 n sum(x)); 0 for perfectly equal
    counts, approaching 1 as one class dominates.
    """
    values = [float(c) for c in counts]
    if not values:
        raise ValueError("counts must be non-empty")
    if any(v < 0 for v in values):
        raise ValueError("counts must be non-negative")
    total = sum(values)
    if total <= 0:
        raise ValueError("at least one count must be positive")
    n = len(values)
    values.sort()
    weighted = sum((2 * i - n - 1) * v for i, v in enumerate(values, start=1))
    return weighted / (n * total)


def dataset_uses_character_tokens(docs) -> bool:
    """True when most docs carry no whitespace (unspaced scripts like zh)."""
    if not docs:
        return False
    spaced = sum(1 for d in docs if any(ch.isspace() for ch in d.text))
    return spaced * 2 < len(docs)


def token_count(text: str, char_tokens: bool = False) -> int:
    """Whitespace tokens, or characters for datasets in unspaced scripts."""
    if not text:
        return 0
    if char_tokens:
        return len(text)
    return len(text.split())


def compute_raw_dimensions(bundle: DatasetBundle, embedder: Embedder
                           ) -> tuple[dict[str, float], dict[str, str]]:
    """Measure the six raw dimensions for one dataset bundle.

    An embedding failure leaves type_confusability absent (None) with a flag
    instead of failing the whole profile.
    """
    docs = bundle.all_docs()
    if not docs:
        raise ValueError(f"bundle {bundle.name!r} has no documents")
    flags: dict[str, str] = {}
    char_tokens = dataset_uses_character_tokens(docs)
    if char_tokens:
        flags["tokenizer"] = "character (unspaced script)"

    doc_length = float(np.mean([token_count(d.text, char_tokens) for d in docs]))

    type_counts: dict[str, int] = {}
    span_lengths: list[int] = []
    surfaces_by_type: dict[str, set[str]] = {}
    for doc in docs:
        for m in sorted_mentions(doc.gold):
            type_counts[m.entity_type] = type_counts.get(m.entity_type, 0) + 1
            span_lengths.append(token_count(m.span, char_tokens))
            surfaces_by_type.setdefault(m.entity_type, set()).add(m.span)

    type_count = float(len(type_counts))
    if type_counts:
        type_imbalance = gini(list(type_counts.values()))
        entity_length = float(np.mean(span_lengths))
    else:
        type_imbalance = 0.0
        entity_length = 0.0
        flags["type_imbalance"] = "no gold mentions"

    confusability: float | None
    if len(surfaces_by_type) < 2:
        confusability = 0.0
        flags["type_confusability"] = "fewer than two observed types"
    else:
        try:
            confusability = _mean_centroid_cosine(surfaces_by_type, embedder)
        except EmbeddingServiceError as exc:
            confusability = None
            flags["type_confusability"] = f"embedding failed: {exc}"

    train_surfaces = {m.span.lower() for d in bundle.train for m in d.gold}
    test_surfaces = {m.span.lower() for d in bundle.test for m in d.gold}
    if test_surfaces:
        novelty = len(test_surfaces - train_surfaces) / len(test_surfaces)
    else:
        novelty = 0.0
        flags["entity_novelty"] = "no test mentions"

    raw = {
        "doc_length": doc_length,
        "type_count": type_count,
        "type_imbalance": type_imbalance,
        "entity_length": entity_length,
        "type_confusability": confusability,
        "entity_novelty": novelty,
    }
    return raw, flags


def _mean_centroid_cosine(surfaces_by_type: dict[str, set[str]],
                          embedder: Embedder) -> float:
    types = sorted(surfaces_by_type)
    all_surfaces = sorted({s for surfaces in surfaces_by_type.values()
                           for s in surfaces})
    vectors = np.asarray(embedder.embed(all_surfaces), dtype=np.float64)
    index = {s: i for i, s in enumerate(all_surfaces)}
    centroids = {}
    for etype in types:
        rows = vectors[[index[s] for s in sorted(surfaces_by_type[etype])]]
        centroid = rows.mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm > 0:
            centroids[etype] = centroid / norm
    pairs = [
        float(np.dot(centroids[a], centroids[b]))
        for a, b in itertools.combinations(sorted(centroids), 2)
    ]
    return float(np.mean(pairs)) if pairs else 0.0


def profile_bundle(bundle: DatasetBundle, embedder: Embedder) -> DifficultyProfile:
    raw, flags = compute_raw_dimensions(bundle, embedder)
    return DifficultyProfile(dataset=bundle.name, raw=raw, flags=flags)


def normalize_and_aggregate(profiles: list[DifficultyProfile],
                            weights: dict[str, float] | None = None
                            ) -> list[DifficultyProfile]:
    """Min-max normalize each dimension across the collection, then aggregate.

    Needs at least two datasets. A dimension that is constant across the
    collection normalizes to 0 for everyone (flagged); an absent raw value is
    treated as 0 (already flagged by the measurement step).
    """
    if len(profiles) < 2:
        raise ValueError("min-max normalization needs at least 2 datasets")
    weights = dict(weights) if weights else dict(EQUAL_WEIGHTS)
    if set(weights) != set(DIMENSIONS):
        raise ValueError(f"weights must cover exactly {DIMENSIONS}")
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {total}")

    filled = {
        p.dataset: {dim: (p.raw.get(dim) if p.raw.get(dim) is not None else 0.0)
                    for dim in DIMENSIONS}
        for p in profiles
    }
    out = []
    for profile in profiles:
        normalized = {}
        flags = dict(profile.flags)
        for dim in DIMENSIONS:
            values = [filled[p.dataset][dim] for p in profiles]
            lo, hi = min(values), max(values)
            if hi > lo:
                normalized[dim] = (filled[profile.dataset][dim] - lo) / (hi - lo)
            else:
                normalized[dim] = 0.0
                flags.setdefault(dim, "constant across collection")
        omega = sum(weights[dim] * normalized[dim] for dim in DIMENSIONS)
        out.append(DifficultyProfile(
            dataset=profile.dataset, raw=dict(profile.raw), flags=flags,
            normalized=normalized, omega=omega, weights=dict(weights)))
    return out


def render_difficulty_table(profiles: list[DifficultyProfile]) -> str:
    """Aligned text table of normalized values and the aggregate index."""
    headers = ["dataset", *DIMENSIONS, "omega"]
    rows = []
    for p in sorted(profiles, key=lambda q: -(q.omega or 0.0)):
        norm = p.normalized or {}
        rows.append([p.dataset,
                     *(f"{norm.get(dim, float('nan')):.2f}" for dim in DIMENSIONS),
                     f"{(p.omega if p.omega is not None else float('nan')):.2f}"])
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) if rows
              else len(headers[i]) for i in range(len(headers))]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def save_profiles(profiles: list[DifficultyProfile], path: str | Path) -> None:
    payload = {"datasets": [p.as_dict() for p in profiles]}
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                          encoding="utf-8")


def load_profiles(path: str | Path) -> list[DifficultyProfile]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    profiles = []
    for entry in raw["datasets"]:
        profiles.append(DifficultyProfile(
            dataset=entry["dataset"], raw=entry.get("raw", {}),
            flags=entry.get("flags", {}), normalized=entry.get("normalized"),
            omega=entry.get("omega"),
            weights=entry.get("weights", dict(EQUAL_WEIGHTS))))
    return profiles
