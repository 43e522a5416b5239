"""Canonical data model for annotated NER corpora, plus loading and sampling.

A document's annotation is a set of (span, type) mentions where each span is
a verbatim substring of the document text. The canonical on-disk format is
JSONL with span-text entities; a BIO/CoNLL converter normalizes token-tagged
data into the same shape.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, SchemaViolation, SpanNotFound

GUIDELINE_SUBSECTIONS = ("definition_and_description", "notes_and_exceptions")


@dataclass(frozen=True)
class EntityMention:
    """One annotated mention: the verbatim span text and its entity type."""

    span: str
    entity_type: str

    def __post_init__(self):
        if not self.span:
            raise ValueError("mention span must be non-empty")


# An annotation is a set: duplicate (span, type) pairs collapse to one mention.
EntitySet = frozenset  # frozenset[EntityMention]


def entity_set(mentions) -> frozenset[EntityMention]:
    """Build an EntitySet from an iterable of EntityMention or (span, type) pairs."""
    out = set()
    for m in mentions:
        if not isinstance(m, EntityMention):
            m = EntityMention(m[0], m[1])
        out.add(m)
    return frozenset(out)


def typeset(entities: frozenset[EntityMention]) -> set[str]:
    """Set of distinct entity types present in an entity set."""
    return {m.entity_type for m in entities}


def sorted_mentions(entities: frozenset[EntityMention]) -> list[EntityMention]:
    """Canonical mention order used everywhere we serialize an entity set."""
    return sorted(entities, key=lambda m: (m.span, m.entity_type))


@dataclass(frozen=True)
class LabelSchema:
    """The predefined set of entity types, with optional free-text descriptions."""

    name: str
    types: tuple[str, ...]
    descriptions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.types) < 1:
            raise SchemaViolation("schema must declare at least one type")
        if len(set(self.types)) != len(self.types):
            raise SchemaViolation("schema type names must be unique")
        if any(not t for t in self.types):
            raise SchemaViolation("schema type names must be non-empty")
        unknown = set(self.descriptions) - set(self.types)
        if unknown:
            raise SchemaViolation(f"descriptions for unknown types: {sorted(unknown)}")

    def __contains__(self, type_name: str) -> bool:
        return type_name in self.types


@dataclass(frozen=True)
class AnnotatedDoc:
    """A document paired with its gold entity set."""

    id: str
    text: str
    gold: frozenset[EntityMention]

    def __post_init__(self):
        for m in self.gold:
            if m.span not in self.text:
                raise SpanNotFound(
                    f"doc {self.id!r}: span {m.span!r} not found in text"
                )


@dataclass
class DatasetBundle:
    """A named dataset: schema plus train/test splits (dev optional)."""

    name: str
    schema: LabelSchema
    train: list[AnnotatedDoc]
    test: list[AnnotatedDoc]
    dev: list[AnnotatedDoc] | None = None

    def splits(self) -> dict[str, list[AnnotatedDoc]]:
        out = {"train": self.train, "test": self.test}
        if self.dev is not None:
            out["dev"] = self.dev
        return out

    def all_docs(self) -> list[AnnotatedDoc]:
        docs = list(self.train)
        if self.dev:
            docs.extend(self.dev)
        docs.extend(self.test)
        return docs

    def validate(self) -> None:
        seen_per_split: dict[str, set[str]] = {}
        for split_name, docs in self.splits().items():
            ids = [d.id for d in docs]
            if len(set(ids)) != len(ids):
                raise ParseError(f"duplicate doc ids within split {split_name!r}")
            seen_per_split[split_name] = set(ids)
        names = list(seen_per_split)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                overlap = seen_per_split[a] & seen_per_split[b]
                if overlap:
                    raise ParseError(
                        f"splits {a!r} and {b!r} share doc ids: {sorted(overlap)[:5]}"
                    )
        for split_name, docs in self.splits().items():
            for doc in docs:
                for m in doc.gold:
                    if m.entity_type not in self.schema:
                        raise SchemaViolation(
                            f"{split_name}/{doc.id}: unknown type {m.entity_type!r}"
                        )


# ---------------------------------------------------------------------------
# JSONL (de)serialization
# ---------------------------------------------------------------------------

def record_to_json(doc: AnnotatedDoc) -> str:
    """Canonical single-line JSON for one document record."""
    record = {
        "id": doc.id,
        "text": doc.text,
        "entities": [
            {"span": m.span, "type": m.entity_type} for m in sorted_mentions(doc.gold)
        ],
    }
    return json.dumps(record, ensure_ascii=False)


def doc_from_record(record: dict, schema: LabelSchema | None = None,
                    line: int | None = None) -> AnnotatedDoc:
    """Validate one parsed JSONL record and build an AnnotatedDoc."""
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", line)
    for key in ("id", "text", "entities"):
        if key not in record:
            raise ParseError(f"record missing {key!r}", line)
    if not isinstance(record["id"], str) or not isinstance(record["text"], str):
        raise ParseError("id and text must be strings", line)
    if not isinstance(record["entities"], list):
        raise ParseError("entities must be a list", line)
    mentions = set()
    for ent in record["entities"]:
        if not isinstance(ent, dict) or "span" not in ent or "type" not in ent:
            raise ParseError("entity must be an object with span and type", line)
        span, etype = ent["span"], ent["type"]
        if not isinstance(span, str) or not isinstance(etype, str) or not span:
            raise ParseError(f"bad entity {ent!r}", line)
        if schema is not None and etype not in schema:
            raise SchemaViolation(
                f"line {line}: unknown type {etype!r} (schema {schema.name!r})"
                if line is not None else f"unknown type {etype!r}"
            )
        if span not in record["text"]:
            raise SpanNotFound(
                f"line {line}: span {span!r} not in text of doc {record['id']!r}"
                if line is not None else f"span {span!r} not in doc text"
            )
        mentions.add(EntityMention(span, etype))
    return AnnotatedDoc(id=record["id"], text=record["text"], gold=frozenset(mentions))


def load_split(path: str | Path, schema: LabelSchema | None = None) -> list[AnnotatedDoc]:
    """Parse one JSONL file into a list of documents, validating each record."""
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            docs.append(doc_from_record(record, schema, lineno))
    return docs


def save_split(docs: list[AnnotatedDoc], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(record_to_json(doc) + "\n")


def load_schema(path: str | Path) -> LabelSchema:
    """Load a schema file: {"name": str, "types": [{"name": str, "description"?}]}."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"schema file {path}: invalid JSON ({exc.msg})") from exc
    if "types" not in raw or not isinstance(raw["types"], list):
        raise ParseError(f"schema file {path}: missing 'types' list")
    names, descriptions = [], {}
    for entry in raw["types"]:
        if isinstance(entry, str):
            names.append(entry)
            continue
        if not isinstance(entry, dict) or "name" not in entry:
            raise ParseError(f"schema file {path}: bad type entry {entry!r}")
        names.append(entry["name"])
        if entry.get("description"):
            descriptions[entry["name"]] = entry["description"]
    return LabelSchema(name=raw.get("name", path.stem), types=tuple(names),
                       descriptions=descriptions)


def save_schema(schema: LabelSchema, path: str | Path) -> None:
    payload = {
        "name": schema.name,
        "types": [
            {"name": t, **({"description": schema.descriptions[t]}
                           if t in schema.descriptions else {})}
            for t in schema.types
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                          encoding="utf-8")


def infer_schema(docs: list[AnnotatedDoc], name: str = "inferred") -> LabelSchema:
    """Schema from observed gold types, ordered by first appearance."""
    seen: list[str] = []
    for doc in docs:
        for m in sorted_mentions(doc.gold):
            if m.entity_type not in seen:
                seen.append(m.entity_type)
    if not seen:
        seen = ["Entity"]
    return LabelSchema(name=name, types=tuple(seen))


def load_dataset(path: str | Path, format: str = "jsonl") -> DatasetBundle:
    """Load a dataset bundle.

    `path` is either a bundle directory (schema.json + train.jsonl +
    test.jsonl [+ dev.jsonl]) or a single JSONL file, which becomes a
    train-only bundle with the schema inferred from its gold types.
    """
    if format != "jsonl":
        raise ParseError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"dataset path does not exist: {path}")
    if path.is_file():
        docs = load_split(path)
        schema = infer_schema(docs, name=path.stem)
        bundle = DatasetBundle(name=path.stem, schema=schema, train=docs, test=[])
        bundle.validate()
        return bundle
    schema_path = path / "schema.json"
    if not schema_path.exists():
        raise ParseError(f"bundle dir {path} missing schema.json")
    schema = load_schema(schema_path)
    train_path, test_path, dev_path = (path / "train.jsonl", path / "test.jsonl",
                                       path / "dev.jsonl")
    if not train_path.exists():
        raise ParseError(f"bundle dir {path} missing train.jsonl")
    train = load_split(train_path, schema)
    test = load_split(test_path, schema) if test_path.exists() else []
    dev = load_split(dev_path, schema) if dev_path.exists() else None
    bundle = DatasetBundle(name=schema.name, schema=schema, train=train,
                           test=test, dev=dev)
    bundle.validate()
    return bundle


def save_bundle(bundle: DatasetBundle, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_schema(bundle.schema, out_dir / "schema.json")
    save_split(bundle.train, out_dir / "train.jsonl")
    save_split(bundle.test, out_dir / "test.jsonl")
    if bundle.dev is not None:
        save_split(bundle.dev, out_dir / "dev.jsonl")


# ---------------------------------------------------------------------------
# BIO / CoNLL conversion
# ---------------------------------------------------------------------------

def from_conll(lines, doc_id: str, delimiter: str | None = None) -> AnnotatedDoc:
    """Convert one BIO-tagged token sequence into a span-text document.

    Each non-blank line is "token TAG"; tokens join with single spaces, so
    every decoded span is a verbatim substring of the rebuilt text.
    """
    tokens, tags = [], []
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        parts = raw.split(delimiter)
        if len(parts) < 2:
            raise ParseError(f"expected 'token TAG', got {raw!r}", lineno)
        tokens.append(parts[0])
        tags.append(parts[-1])
    text = " ".join(tokens)
    mentions = set()
    current_tokens: list[str] = []
    current_type: str | None = None

    def flush():
        if current_tokens and current_type:
            mentions.add(EntityMention(" ".join(current_tokens), current_type))

    for token, tag in zip(tokens, tags):
        if tag == "O" or tag == "o":
            flush()
            current_tokens, current_type = [], None
        elif tag.startswith("B-"):
            flush()
            current_tokens, current_type = [token], tag[2:]
        elif tag.startswith("I-") and current_type == tag[2:]:
            current_tokens.append(token)
        elif tag.startswith("I-"):
            # Dangling I- tag starts a fresh entity rather than being dropped.
            flush()
            current_tokens, current_type = [token], tag[2:]
        else:
            raise ParseError(f"unrecognized BIO tag {tag!r}")
    flush()
    return AnnotatedDoc(id=doc_id, text=text, gold=frozenset(mentions))


# ---------------------------------------------------------------------------
# Stratified subsampling
# ---------------------------------------------------------------------------

def _doc_type_counts(doc: AnnotatedDoc) -> dict[str, int]:
    counts: dict[str, int] = {}
    for m in doc.gold:
        counts[m.entity_type] = counts.get(m.entity_type, 0) + 1
    return counts


def stratified_subsample(docs: list[AnnotatedDoc], fraction: float, seed: int,
                         rounding: str = "ceil") -> list[AnnotatedDoc]:
    """Pick a fraction of docs while preserving per-type mention frequencies.

    Greedy iterative stratification: repeatedly take the rarest entity type
    whose mention quota (fraction x pool count) is unmet, and among available
    docs containing it pick the one that best fills remaining quotas with the
    least overshoot. Deterministic for a fixed seed; sample size is
    ceil(fraction * n) by default (rounding="floor" gives floor), minimum 1.
    """
    if not docs:
        raise ValueError("docs must be non-empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if rounding not in ("ceil", "floor"):
        raise ValueError(f"rounding must be 'ceil' or 'floor', got {rounding!r}")

    n = len(docs)
    rounder = math.ceil if rounding == "ceil" else math.floor
    target = max(1, rounder(fraction * n))
    if target >= n:
        return list(docs)

    per_doc = [_doc_type_counts(d) for d in docs]
    totals: dict[str, int] = {}
    for counts in per_doc:
        for t, c in counts.items():
            totals[t] = totals.get(t, 0) + c
    need = {t: fraction * c for t, c in totals.items()}

    # Seeded shuffle fixes the tie-break order; the greedy itself is
    # deterministic given that order.
    order = list(range(n))
    random.Random(seed).shuffle(order)
    rank = {idx: pos for pos, idx in enumerate(order)}

    available = set(range(n))
    docs_with: dict[str, set[int]] = {t: set() for t in totals}
    for idx, counts in enumerate(per_doc):
        for t in counts:
            docs_with[t].add(idx)

    def fit_score(idx: int) -> float:
        gain = overshoot = 0.0
        for t, c in per_doc[idx].items():
            remaining = max(need[t], 0.0)
            gain += min(c, remaining)
            overshoot += max(c - remaining, 0.0)
        return gain - 2.0 * overshoot

    selected: list[int] = []
    while len(selected) < target and available:
        open_types = [t for t in totals
                      if need[t] > 0.5 and docs_with[t] & available]
        if open_types:
            # Rarest first: fewest remaining candidate docs, then pool count.
            focus = min(open_types,
                        key=lambda t: (len(docs_with[t] & available), totals[t], t))
            candidates = docs_with[focus] & available
        else:
            candidates = available
        best = max(candidates, key=lambda i: (fit_score(i), -rank[i]))
        selected.append(best)
        available.discard(best)
        for t, c in per_doc[best].items():
            need[t] -= c

    selected_set = set(selected)
    return [docs[i] for i in range(n) if i in selected_set]
