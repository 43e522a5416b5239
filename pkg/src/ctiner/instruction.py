"""The three-layer instruction hierarchy: task instruction, guiding strategy,
per-type annotation guidelines.

Strategies come from a generate-then-select step (the generator proposes n
candidates, each is scored by running the executor over a small labeled
subset, and the best one wins). Guidelines are generated one section per
entity type, each with a definition subsection and a notes subsection, and
are the object the refinement loop later edits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import GUIDELINE_SUBSECTIONS, AnnotatedDoc, LabelSchema
from .errors import GenerationShortfall, MalformedGuidelineResponse
from .gateway import Role, parse_entities
from .metrics import score
from .retrieval import PromptTemplate

VARIANTS = ("base", "plus_strategy", "plus_guideline", "full")


@dataclass(frozen=True)
class TaskInstruction:
    """Top-level task statement, including the output-format contract."""

    text: str


def build_task_instruction(schema: LabelSchema) -> TaskInstruction:
    type_lines = []
    for t in schema.types:
        desc = schema.descriptions.get(t)
        type_lines.append(f"- {t}: {desc}" if desc else f"- {t}")
    text = (
        "You are an annotator for cyber threat intelligence reports. "
        "Extract every entity mention from the input text.\n"
        "Entity types:\n" + "\n".join(type_lines) + "\n"
        "Answer with a JSON array of objects, one per mention, each shaped "
        '{"span": "<verbatim text from the input>", "type": "<one of the types above>"}. '
        "Copy spans exactly as they appear. Output the JSON array only, with no "
        "commentary. If the text contains no entities, answer []."
    )
    return TaskInstruction(text=text)


@dataclass
class GuidingStrategy:
    """One candidate strategy with its measured micro-F1 score, if evaluated."""

    id: str
    text: str
    origin_model_id: str
    score: float | None = None
    macro_score: float | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("strategy text must be non-empty")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"strategy score out of range: {self.score}")


@dataclass(frozen=True)
class GuidelineSection:
    definition_and_description: str
    notes_and_exceptions: str

    def get(self, subsection: str) -> str:
        if subsection not in GUIDELINE_SUBSECTIONS:
            raise KeyError(subsection)
        return getattr(self, subsection)

    def with_text(self, subsection: str, text: str) -> "GuidelineSection":
        if subsection not in GUIDELINE_SUBSECTIONS:
            raise KeyError(subsection)
        return replace(self, **{subsection: text})


@dataclass(frozen=True)
class AnnotationGuideline:
    """Versioned per-type guidelines; new versions are new values.

    changelog holds one (version, gradient_id) entry per applied edit, so
    versions run contiguously from 0.
    """

    sections: dict[str, GuidelineSection]
    version: int = 0
    changelog: tuple[tuple[int, str], ...] = ()

    def section(self, entity_type: str) -> GuidelineSection:
        return self.sections[entity_type]

    def has_target(self, entity_type: str, subsection: str) -> bool:
        return entity_type in self.sections and subsection in GUIDELINE_SUBSECTIONS

    def with_section(self, entity_type: str, section: GuidelineSection,
                     gradient_id: str) -> "AnnotationGuideline":
        if entity_type not in self.sections:
            raise KeyError(entity_type)
        new_sections = dict(self.sections)
        new_sections[entity_type] = section
        new_version = self.version + 1
        return AnnotationGuideline(
            sections=new_sections, version=new_version,
            changelog=self.changelog + ((new_version, gradient_id),))

    def render(self) -> str:
        blocks = []
        for etype, sec in self.sections.items():
            blocks.append(
                f"### {etype}\n"
                f"Definition and description: {sec.definition_and_description}\n"
                f"Notes and exceptions: {sec.notes_and_exceptions}")
        return "\n\n".join(blocks)

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "sections": {
                etype: {"definition_and_description": sec.definition_and_description,
                        "notes_and_exceptions": sec.notes_and_exceptions}
                for etype, sec in self.sections.items()
            },
            "changelog": [list(entry) for entry in self.changelog],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AnnotationGuideline":
        sections = {
            etype: GuidelineSection(
                definition_and_description=sec["definition_and_description"],
                notes_and_exceptions=sec["notes_and_exceptions"])
            for etype, sec in raw["sections"].items()
        }
        changelog = tuple(tuple(entry) for entry in raw.get("changelog", []))
        return cls(sections=sections, version=int(raw.get("version", 0)),
                   changelog=changelog)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), ensure_ascii=False, indent=2)
                              + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AnnotationGuideline":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class InstructionSet:
    """Complete instruction stack; ablation variants may omit lower layers."""

    tactic: TaskInstruction
    technique: GuidingStrategy | None = None
    procedure: AnnotationGuideline | None = None


def render_instruction_set(instruction_set: InstructionSet, variant: str) -> str:
    """Deterministic rendering of one ablation variant.

    base: task instruction only; plus_strategy adds the guiding strategy;
    plus_guideline and full add the guidelines, labeled initial vs refined so
    the four renderings are pairwise distinct for a fixed instruction set.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    parts = [instruction_set.tactic.text]
    if variant in ("plus_strategy", "plus_guideline", "full"):
        if instruction_set.technique is None:
            raise ValueError(f"variant {variant!r} requires a guiding strategy")
        parts.append(f"Guiding strategy: {instruction_set.technique.text}")
    if variant in ("plus_guideline", "full"):
        if instruction_set.procedure is None:
            raise ValueError(f"variant {variant!r} requires annotation guidelines")
        label = "refined" if variant == "full" else "initial"
        parts.append(f"Annotation guidelines ({label}):\n"
                     + instruction_set.procedure.render())
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# Strategy generation and selection
# ---------------------------------------------------------------------------

_NUMBERED_LINE_RE = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*$")

STRATEGY_REQUEST = (
    "Propose exactly {n} distinct guiding strategies for extracting entities "
    "from cyber threat intelligence text. A strategy is one or two sentences "
    "describing how to read the text and decide what to annotate: scanning "
    "order, contextual cues, boundary habits, disambiguation rules. "
    "Return them as a numbered list, one strategy per line, nothing else."
)

STRATEGY_FOLLOWUP = (
    "Propose exactly {n} more guiding strategies for extracting entities from "
    "cyber threat intelligence text, different from the {have} you already "
    "proposed (round {round}). Return a numbered list, one per line, nothing else."
)


def _parse_strategy_lines(response: str) -> list[str]:
    out = []
    for line in response.splitlines():
        match = _NUMBERED_LINE_RE.match(line)
        if match:
            out.append(match.group(1))
    return out


def generate_strategies(n: int, generator: Role, max_rounds: int = 3
                        ) -> list[GuidingStrategy]:
    """Ask the generator for n distinct strategies, topping up on shortfall."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    texts: list[str] = []
    seen: set[str] = set()
    response = generator.ask(STRATEGY_REQUEST.format(n=n), tag="initial")
    rounds = 0
    while True:
        for text in _parse_strategy_lines(response):
            key = " ".join(text.lower().split())
            if key not in seen:
                seen.add(key)
                texts.append(text)
            if len(texts) == n:
                break
        if len(texts) >= n:
            break
        rounds += 1
        if rounds > max_rounds:
            raise GenerationShortfall(
                f"got {len(texts)} of {n} strategies after {max_rounds} follow-ups")
        response = generator.ask(
            STRATEGY_FOLLOWUP.format(n=n - len(texts), have=len(texts), round=rounds),
            tag=f"followup-{rounds}")
    return [
        GuidingStrategy(id=f"s{i:02d}", text=text,
                        origin_model_id=generator.model_id)
        for i, text in enumerate(texts, start=1)
    ]


def extract_over_docs(instruction_text: str, docs: list[AnnotatedDoc],
                      executor: Role, schema: LabelSchema,
                      template: PromptTemplate | None = None,
                      tag_prefix: str = "extract") -> dict[str, frozenset]:
    """Run the executor once per doc under a fixed instruction text."""
    template = template or PromptTemplate.default()
    predictions: dict[str, frozenset] = {}
    for doc in docs:
        prompt = instruction_text + template.separator + \
            template.query_block.format(text=doc.text)
        raw = executor.ask(prompt, tag=f"{tag_prefix}:{doc.id}")
        parsed = parse_entities(raw, schema, ground_in=doc.text, strict=True)
        predictions[doc.id] = parsed.entities
    return predictions


def select_strategy(strategies: list[GuidingStrategy], d_sub: list[AnnotatedDoc],
                    tactic: TaskInstruction, executor: Role, schema: LabelSchema,
                    template: PromptTemplate | None = None) -> GuidingStrategy:
    """Score every strategy by executor micro-F1 on the subset; best wins.

    Each strategy is evaluated with only the task instruction and itself (no
    guidelines). Scores are recorded on the strategies; ties go to the
    earliest strategy.
    """
    if not strategies:
        raise ValueError("strategies must be non-empty")
    for strategy in strategies:
        instruction_text = render_instruction_set(
            InstructionSet(tactic=tactic, technique=strategy), "plus_strategy")
        predictions = extract_over_docs(
            instruction_text, d_sub, executor, schema, template,
            tag_prefix=f"strategy-eval:{strategy.id}")
        report = score(predictions, d_sub, schema)
        strategy.score = report.micro_f1
        strategy.macro_score = report.macro_f1
    best = max(strategies, key=lambda s: s.score)  # max is stable: first wins ties
    return best


def save_strategies(strategies: list[GuidingStrategy], selected_id: str | None,
                    path: str | Path) -> None:
    payload = {
        "selected": selected_id,
        "strategies": [
            {"id": s.id, "text": s.text, "origin_model_id": s.origin_model_id,
             "score": s.score, "macro_score": s.macro_score}
            for s in strategies
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                          encoding="utf-8")


def load_strategies(path: str | Path) -> tuple[list[GuidingStrategy], str | None]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    strategies = [
        GuidingStrategy(id=s["id"], text=s["text"],
                        origin_model_id=s.get("origin_model_id", "unknown"),
                        score=s.get("score"), macro_score=s.get("macro_score"))
        for s in raw["strategies"]
    ]
    return strategies, raw.get("selected")


# ---------------------------------------------------------------------------
# Guideline generation
# ---------------------------------------------------------------------------

GUIDELINE_REQUEST = (
    'Write an annotation guideline section for the entity type "{etype}" in '
    "cyber threat intelligence text.{description}\n"
    "Respond with exactly two parts, using these headings verbatim:\n"
    "Definition and Description: state what counts as this type and where "
    "spans start and end.\n"
    "Notes and Exceptions: list confusable cases and what must not be labeled."
)

GUIDELINE_RETRY_SUFFIX = (
    "\nYour previous answer was missing a required heading. Include both "
    "headings exactly as written above."
)

_DEFINITION_RE = re.compile(
    r"definition\s+and\s+description\s*:\s*(.*?)(?=notes\s+and\s+exceptions\s*:|\Z)",
    re.IGNORECASE | re.DOTALL)
_NOTES_RE = re.compile(r"notes\s+and\s+exceptions\s*:\s*(.*)\Z",
                       re.IGNORECASE | re.DOTALL)


def parse_guideline_section(response: str) -> GuidelineSection | None:
    definition = _DEFINITION_RE.search(response)
    notes = _NOTES_RE.search(response)
    if not definition or not notes:
        return None
    def_text = definition.group(1).strip()
    notes_text = notes.group(1).strip()
    if not def_text or not notes_text:
        return None
    return GuidelineSection(definition_and_description=def_text,
                            notes_and_exceptions=notes_text)


def generate_guideline(schema: LabelSchema, generator: Role) -> AnnotationGuideline:
    """One generation call per entity type; union of sections, version 0."""
    sections: dict[str, GuidelineSection] = {}
    for etype in schema.types:
        desc = schema.descriptions.get(etype)
        prompt = GUIDELINE_REQUEST.format(
            etype=etype, description=f" ({desc})" if desc else "")
        response = generator.ask(prompt, tag=f"guideline:{etype}")
        section = parse_guideline_section(response)
        if section is None:
            response = generator.ask(prompt + GUIDELINE_RETRY_SUFFIX,
                                     tag=f"guideline-retry:{etype}")
            section = parse_guideline_section(response)
        if section is None:
            raise MalformedGuidelineResponse(
                f"type {etype!r}: response missing a required subsection")
        sections[etype] = section
    return AnnotationGuideline(sections=sections, version=0)
