"""Deterministic offline stand-in for every chat agent role.

Dispatches on the role prefix of ChatRequest.request_tag and answers from
the loaded corpus: the executor echoes a document's gold annotation
(deliberately dropping one mention on a deterministic subset of docs so the
refinement loop has real errors to chew on), the reflector and editor emit
well-formed structured responses, and the generator roles produce parseable
strategies and guideline sections. Everything is a pure function of the
request plus the corpus, so whole pipeline runs replay byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import re

from .corpus import AnnotatedDoc, LabelSchema, sorted_mentions
from .gateway import ChatRequest

_COUNT_RE = re.compile(r"exactly (\d+)")
_TYPE_RE = re.compile(r'entity type "([^"]+)"')
_PROPOSAL_RE = re.compile(r"Proposed change: (.+)")

STRATEGY_STEMS = (
    "Scan for proper nouns and filenames first, then classify each against the type list.",
    "Read the full sentence before labeling so modifiers are not split from their heads.",
    "Prefer the most specific applicable type when two types could fit a span.",
    "Label every concrete indicator such as hashes, domains, and IPs before prose entities.",
    "Treat quoted or capitalized tool names as candidate entities and verify against context.",
    "Work clause by clause and resolve pronouns to earlier entities before deciding types.",
    "Mark malware family names even on first mention, but skip generic words like 'virus'.",
    "Check each candidate span's boundaries: include version suffixes, exclude articles.",
    "Compare each candidate against the exclusion notes before committing to a label.",
    "After a first pass, re-scan for entities embedded inside longer noun phrases.",
    "Annotate organization names only when they act as threat actors or victims in context.",
    "Use verbs like 'exploits' or 'drops' as cues for the object's entity type.",
)


def _doc_is_flaky(doc_id: str, modulus: int) -> bool:
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % modulus == 0


class OfflineWorkbenchBackend:
    """Scripted backend answering all roles for a fixed document collection.

    `miss_modulus` controls how often the executor misses a mention: docs
    whose id hashes to 0 mod `miss_modulus` lose their first gold mention
    (a false negative). Use 0 to make the executor perfect.
    """

    def __init__(self, docs: list[AnnotatedDoc], schema: LabelSchema,
                 miss_modulus: int = 4):
        self.schema = schema
        self.miss_modulus = miss_modulus
        # Longest text first so substring lookup prefers the most specific doc.
        self.docs = sorted(docs, key=lambda d: len(d.text), reverse=True)
        self.calls = 0

    def _find_query_doc(self, content: str) -> AnnotatedDoc | None:
        """The query block is rendered last, so take the latest text match."""
        best, best_pos = None, -1
        for doc in self.docs:
            pos = content.rfind(doc.text)
            if pos > best_pos:
                best, best_pos = doc, pos
        return best

    def _executor_entities(self, doc: AnnotatedDoc) -> list[dict]:
        mentions = sorted_mentions(doc.gold)
        if mentions and self.miss_modulus and _doc_is_flaky(doc.id, self.miss_modulus):
            mentions = mentions[1:]
        return [{"span": m.span, "type": m.entity_type} for m in mentions]

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        role = request.request_tag.split(":", 1)[0]
        content = request.content()
        if role == "strategy_generator":
            return self._strategies(content)
        if role == "guideline_generator":
            return self._guideline_section(content)
        if role == "reflector":
            return self._gradient(content)
        if role == "editor":
            return self._edit(content)
        return self._extraction(content)

    def _extraction(self, content: str) -> str:
        doc = self._find_query_doc(content)
        if doc is None:
            return "[]"
        return json.dumps(self._executor_entities(doc), ensure_ascii=False)

    def _strategies(self, content: str) -> str:
        match = _COUNT_RE.search(content)
        n = int(match.group(1)) if match else 10
        # Offset by a content hash so follow-up requests yield fresh items.
        offset = int(hashlib.sha256(content.encode("utf-8")).hexdigest()[:4], 16)
        lines = []
        for i in range(n):
            stem = STRATEGY_STEMS[(offset + i) % len(STRATEGY_STEMS)]
            lines.append(f"{i + 1}. {stem}")
        return "\n".join(lines)

    def _guideline_section(self, content: str) -> str:
        match = _TYPE_RE.search(content)
        etype = match.group(1) if match else self.schema.types[0]
        return (
            f"Definition and Description: A {etype} mention is the exact name of a "
            f"{etype.lower()} as written in the text; spans start at the first token "
            f"of the name and end before any trailing punctuation.\n"
            f"Notes and Exceptions: Do not label generic references; when a "
            f"{etype.lower()} name is part of a longer phrase, label only the name."
        )

    def _gradient(self, content: str) -> str:
        doc = self._find_query_doc(content)
        etype = self.schema.types[0]
        span = "the missing mention"
        if doc is not None and doc.gold:
            first = sorted_mentions(doc.gold)[0]
            etype, span = first.entity_type, first.span
        gradient = {
            "error_class": "FN",
            "what": f"The prediction misses the {etype} mention {span!r}.",
            "why": "The notes subsection tells the annotator to skip short or "
                   "first-time mentions, which suppressed this entity.",
            "where": {"entity_type": etype, "subsection": "notes_and_exceptions"},
            "how": f"State that {etype} names must be labeled even when mentioned "
                   f"only once, including short names like {span!r}.",
        }
        return json.dumps(gradient, ensure_ascii=False)

    def _edit(self, content: str) -> str:
        match = _PROPOSAL_RE.search(content)
        proposal = match.group(1).strip() if match else "Apply the reviewer proposal."
        revised = ("Do not label generic references. " + proposal).strip()
        return json.dumps({"revised_text": revised}, ensure_ascii=False)
