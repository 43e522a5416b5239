"""Feedback-driven refinement of annotation guidelines.

The loop walks a small labeled subset one sample at a time, for a fixed
number of epochs. Each sample gets a forward pass under the current
instruction set; whenever the predicted entity set differs from gold, a
reflector agent diagnoses the single most consequential error (class plus
what/why/where/how), and an editor agent rewrites exactly the targeted
guideline subsection, bumping the guideline version. The updated guideline
is used immediately for the next sample. After every epoch the current
guideline is scored on a validation set; the returned guideline is the best
validation snapshot (or the last epoch's, by config).

Because each update feeds the next sample, the loop is order-dependent by
design: replaying the same cache reproduces the identical guideline sequence,
but permuting the subset may legitimately end elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (GUIDELINE_SUBSECTIONS, AnnotatedDoc, DatasetBundle,
                     stratified_subsample)
from .errors import AuthError, BudgetExceeded, ReflectorParseFailure
from .gateway import Role, parse_entities, parse_json_object
from .instruction import (AnnotationGuideline, InstructionSet,
                          extract_over_docs, render_instruction_set)
from .metrics import score
from .retrieval import PromptTemplate, entities_json

ERROR_CLASSES = ("FN", "FP", "BE", "CE")
SECTION_CHAR_CAP = 2000


@dataclass(frozen=True)
class GradientTarget:
    entity_type: str
    subsection: str


@dataclass(frozen=True)
class SemanticGradient:
    """Structured error diagnosis that directs one guideline edit."""

    gradient_id: str
    error_class: str
    what: str
    why: str
    where: GradientTarget
    how: str
    source_doc_id: str

    def as_dict(self) -> dict:
        return {
            "gradient_id": self.gradient_id,
            "error_class": self.error_class,
            "what": self.what,
            "why": self.why,
            "where": {"entity_type": self.where.entity_type,
                      "subsection": self.where.subsection},
            "how": self.how,
            "source_doc_id": self.source_doc_id,
        }


@dataclass(frozen=True)
class FirConfig:
    epochs: int = 5
    batch_size: int = 1
    subset_fraction: float = 0.01
    seed: int = 0
    selection_mode: str = "best"
    sample_rounding: str = "ceil"
    max_validation_docs: int | None = None

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("batch size is fixed at 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.selection_mode not in ("best", "last"):
            raise ValueError(f"unknown selection mode {self.selection_mode!r}")

    def as_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "subset_fraction": self.subset_fraction, "seed": self.seed,
                "selection_mode": self.selection_mode,
                "sample_rounding": self.sample_rounding,
                "max_validation_docs": self.max_validation_docs}


@dataclass
class HistoryRow:
    epoch: int
    doc_id: str
    l_err: int
    gradient_id: str | None
    guideline_version: int
    note: str = ""

    def as_dict(self) -> dict:
        out = {"epoch": self.epoch, "doc_id": self.doc_id, "l_err": self.l_err,
               "gradient_id": self.gradient_id,
               "guideline_version": self.guideline_version}
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class FirState:
    """Trajectory of one refinement run; history is append-only."""

    current_guideline: AnnotationGuideline
    epoch: int = 0
    sample_cursor: int = 0
    history: list[HistoryRow] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    gradients: list[SemanticGradient] = field(default_factory=list)
    version_log: dict[int, AnnotationGuideline] = field(default_factory=dict)
    skipped_gradients: int = 0


@dataclass
class FirResult:
    final: AnnotationGuideline
    state: FirState
    snapshots: dict[int, AnnotationGuideline]
    best_epoch: int
    subset_ids: list[str]


# ---------------------------------------------------------------------------
# Single-step operations
# ---------------------------------------------------------------------------

def forward_pass(doc: AnnotatedDoc, instruction_set: InstructionSet,
                 executor: Role, schema, template: PromptTemplate | None = None,
                 tag: str = "fir") -> frozenset:
    """Predict the doc's entities under the full instruction variant."""
    template = template or PromptTemplate.default()
    instruction_text = render_instruction_set(instruction_set, "full")
    prompt = instruction_text + template.separator + \
        template.query_block.format(text=doc.text)
    raw = executor.ask(prompt, tag=f"{tag}:{doc.id}")
    parsed = parse_entities(raw, schema, ground_in=doc.text, strict=True)
    return parsed.entities


def error_signal(predicted: frozenset, gold: frozenset) -> int:
    """1 iff the sets differ under exact (span, type) equality, else 0."""
    return int(frozenset(predicted) != frozenset(gold))


REFLECTOR_PROMPT = """You are reviewing one annotation mistake to improve the guidelines.

Input text:
{text}

Current guidelines:
{guidelines}

Model prediction (JSON): {predicted}
Correct annotation (JSON): {gold}

Analyze the single most consequential error, answering four questions:
What: classify the error as FN (missed entity), FP (spurious entity), BE (wrong span boundary), or CE (wrong entity type), and describe it.
Why: diagnose which rule in the current guidelines caused it.
Where: name the entity type and the subsection (definition_and_description or notes_and_exceptions) that must change.
How: propose the corrected or additional rule text and briefly justify it.

Answer with a single JSON object exactly in this shape:
{{"error_class": "FN", "what": "...", "why": "...", "where": {{"entity_type": "...", "subsection": "notes_and_exceptions"}}, "how": "..."}}"""

REFLECTOR_RETRY_SUFFIX = (
    "\nYour previous answer was not a valid JSON object with the required "
    "fields; answer again with only the JSON object.")


def _gradient_from_response(raw: str, guideline: AnnotationGuideline,
                            gradient_id: str, doc_id: str) -> SemanticGradient | None:
    obj = parse_json_object(raw)
    if obj is None:
        return None
    error_class = obj.get("error_class")
    where = obj.get("where") or {}
    entity_type = where.get("entity_type") if isinstance(where, dict) else None
    subsection = where.get("subsection") if isinstance(where, dict) else None
    what, why, how = obj.get("what"), obj.get("why"), obj.get("how")
    if error_class not in ERROR_CLASSES:
        return None
    if not all(isinstance(v, str) and v.strip() for v in (what, why, how)):
        return None
    if not isinstance(entity_type, str) or subsection not in GUIDELINE_SUBSECTIONS:
        return None
    if not guideline.has_target(entity_type, subsection):
        return None
    return SemanticGradient(
        gradient_id=gradient_id, error_class=error_class, what=what.strip(),
        why=why.strip(), where=GradientTarget(entity_type, subsection),
        how=how.strip(), source_doc_id=doc_id)


def compute_semantic_gradient(doc: AnnotatedDoc, guideline: AnnotationGuideline,
                              predicted: frozenset, gold: frozenset,
                              reflector: Role, gradient_id: str = "g0001"
                              ) -> SemanticGradient:
    """Ask the reflector for a structured diagnosis; retry once, then fail.

    Only called when the error signal is 1.
    """
    prompt = REFLECTOR_PROMPT.format(
        text=doc.text, guidelines=guideline.render(),
        predicted=entities_json(predicted), gold=entities_json(gold))
    raw = reflector.ask(prompt, tag=f"reflect:{doc.id}:{gradient_id}")
    gradient = _gradient_from_response(raw, guideline, gradient_id, doc.id)
    if gradient is None:
        raw = reflector.ask(prompt + REFLECTOR_RETRY_SUFFIX,
                            tag=f"reflect-retry:{doc.id}:{gradient_id}")
        gradient = _gradient_from_response(raw, guideline, gradient_id, doc.id)
    if gradient is None:
        raise ReflectorParseFailure(
            f"doc {doc.id!r}: reflector response unusable after retry")
    return gradient


EDITOR_PROMPT = """You are the guidelines editor. Revise exactly one subsection.

Entity type: {etype}
Subsection: {subsection}
Current subsection text:
{current}

Reviewer diagnosis ({error_class}): {what}
Root cause: {why}
Proposed change: {how}

Rewrite the subsection text so it applies the proposal while keeping the rest
of its guidance. Keep it under {cap} characters.
Answer with a single JSON object: {{"revised_text": "..."}}"""

EDITOR_COMPRESS_SUFFIX = (
    "\nYour previous revision exceeded {cap} characters. Compress it below "
    "that limit while keeping the proposed change.")


def apply_gradient(guideline: AnnotationGuideline, gradient: SemanticGradient,
                   editor: Role) -> AnnotationGuideline:
    """Have the editor rewrite the targeted subsection; version increments.

    Every other section is carried over untouched. Over-cap revisions are
    re-requested once with a compression instruction, then hard-truncated.
    """
    target = gradient.where
    if not guideline.has_target(target.entity_type, target.subsection):
        raise KeyError(f"gradient target not in guideline: {target}")
    current = guideline.section(target.entity_type).get(target.subsection)
    prompt = EDITOR_PROMPT.format(
        etype=target.entity_type, subsection=target.subsection, current=current,
        error_class=gradient.error_class, what=gradient.what, why=gradient.why,
        how=gradient.how, cap=SECTION_CHAR_CAP)
    raw = editor.ask(prompt, tag=f"edit:{gradient.gradient_id}")
    revised = _revised_text(raw)
    if revised is None or len(revised) > SECTION_CHAR_CAP:
        raw = editor.ask(prompt + EDITOR_COMPRESS_SUFFIX.format(cap=SECTION_CHAR_CAP),
                         tag=f"edit-retry:{gradient.gradient_id}")
        retry = _revised_text(raw)
        if retry is not None:
            revised = retry
    if revised is None:
        revised = current  # editor unusable: keep the old text, still versioned
    revised = revised[:SECTION_CHAR_CAP]
    new_section = guideline.section(target.entity_type).with_text(
        target.subsection, revised)
    return guideline.with_section(target.entity_type, new_section,
                                  gradient.gradient_id)


def _revised_text(raw: str) -> str | None:
    obj = parse_json_object(raw)
    if obj is None:
        return None
    text = obj.get("revised_text")
    if not isinstance(text, str) or not text.strip():
        return None
    return text.strip()


def assert_single_section_edit(before: AnnotationGuideline,
                               after: AnnotationGuideline,
                               target: GradientTarget) -> None:
    """Diff-scoped check: nothing outside the locator target changed."""
    for etype, old_sec in before.sections.items():
        new_sec = after.sections[etype]
        for subsection in GUIDELINE_SUBSECTIONS:
            if etype == target.entity_type and subsection == target.subsection:
                continue
            if old_sec.get(subsection) != new_sec.get(subsection):
                raise AssertionError(
                    f"edit leaked outside target: {etype}/{subsection}")


# ---------------------------------------------------------------------------
# The epoch loop
# ---------------------------------------------------------------------------

def run_fir(bundle: DatasetBundle, instruction_set: InstructionSet,
            config: FirConfig, executor: Role, reflector: Role, editor: Role,
            template: PromptTemplate | None = None,
            d_sub: list[AnnotatedDoc] | None = None) -> FirResult:
    """Refine the instruction set's guideline over a sampled training subset.

    Strictly sequential: the updated guideline is used for the very next
    sample. Per-sample reflector/editor failures degrade to logged skips;
    only auth and budget errors abort the run.
    """
    if instruction_set.procedure is None:
        raise ValueError("instruction set must include a guideline to refine")
    schema = bundle.schema
    if d_sub is None:
        d_sub = stratified_subsample(bundle.train, config.subset_fraction,
                                     config.seed, rounding=config.sample_rounding)
    sub_ids = {d.id for d in d_sub}
    if bundle.dev:
        validation_docs = list(bundle.dev)
    else:
        validation_docs = [d for d in bundle.train if d.id not in sub_ids] or list(d_sub)
    if config.max_validation_docs is not None:
        validation_docs = validation_docs[:config.max_validation_docs]

    state = FirState(current_guideline=instruction_set.procedure)
    state.version_log[instruction_set.procedure.version] = instruction_set.procedure
    snapshots: dict[int, AnnotationGuideline] = {}
    gradient_counter = 0

    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        for cursor, doc in enumerate(d_sub):
            state.sample_cursor = cursor
            current_set = InstructionSet(tactic=instruction_set.tactic,
                                         technique=instruction_set.technique,
                                         procedure=state.current_guideline)
            try:
                predicted = forward_pass(doc, current_set, executor, schema,
                                         template, tag=f"fir-e{epoch}")
            except (AuthError, BudgetExceeded):
                raise
            except Exception as exc:
                state.history.append(HistoryRow(
                    epoch, doc.id, 0, None, state.current_guideline.version,
                    note=f"forward failed: {exc}"))
                continue
            l_err = error_signal(predicted, doc.gold)
            if l_err == 0:
                state.history.append(HistoryRow(
                    epoch, doc.id, 0, None, state.current_guideline.version))
                continue
            gradient_counter += 1
            gradient_id = f"g{gradient_counter:04d}"
            try:
                gradient = compute_semantic_gradient(
                    doc, state.current_guideline, predicted, doc.gold,
                    reflector, gradient_id)
            except (AuthError, BudgetExceeded):
                raise
            except ReflectorParseFailure as exc:
                gradient_counter -= 1  # id not consumed by a skipped gradient
                state.skipped_gradients += 1
                state.history.append(HistoryRow(
                    epoch, doc.id, 1, None, state.current_guideline.version,
                    note=f"gradient skipped: {exc}"))
                continue
            before = state.current_guideline
            updated = apply_gradient(before, gradient, editor)
            assert_single_section_edit(before, updated, gradient.where)
            state.current_guideline = updated
            state.version_log[updated.version] = updated
            state.gradients.append(gradient)
            state.history.append(HistoryRow(
                epoch, doc.id, 1, gradient_id, updated.version))
        snapshots[epoch] = state.current_guideline
        val_set = InstructionSet(tactic=instruction_set.tactic,
                                 technique=instruction_set.technique,
                                 procedure=state.current_guideline)
        val_text = render_instruction_set(val_set, "full")
        predictions = extract_over_docs(val_text, validation_docs, executor,
                                        schema, template,
                                        tag_prefix=f"fir-val-e{epoch}")
        report = score(predictions, validation_docs, schema)
        state.validation.append({
            "epoch": epoch, "micro_f1": report.micro_f1,
            "macro_f1": report.macro_f1,
            "guideline_version": state.current_guideline.version,
        })

    if config.selection_mode == "last":
        best_epoch = config.epochs
    else:
        best_epoch = max(state.validation,
                         key=lambda row: (row["micro_f1"], -row["epoch"]))["epoch"]
    return FirResult(final=snapshots[best_epoch], state=state,
                     snapshots=snapshots, best_epoch=best_epoch,
                     subset_ids=[d.id for d in d_sub])


# ---------------------------------------------------------------------------
# Run directory artifacts
# ---------------------------------------------------------------------------

def write_fir_run(run_dir: str | Path, config: FirConfig, result: FirResult,
                  extra_config: dict | None = None) -> None:
    """Persist config, every guideline version, gradients, history, validation."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_payload = {"fir": config.as_dict(), "subset_ids": result.subset_ids,
                      "best_epoch": result.best_epoch}
    if extra_config:
        config_payload.update(extra_config)
    (run_dir / "config.json").write_text(
        json.dumps(config_payload, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8")
    for version in sorted(result.state.version_log):
        result.state.version_log[version].save(run_dir / f"guideline_v{version}.json")
    result.final.save(run_dir / "guideline_final.json")
    final_changelog = result.state.current_guideline.changelog
    (run_dir / "changelog.json").write_text(
        json.dumps([{"version": v, "gradient_id": g} for v, g in final_changelog],
                   ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    grad_dir = run_dir / "gradients"
    grad_dir.mkdir(exist_ok=True)
    for gradient in result.state.gradients:
        (grad_dir / f"{gradient.gradient_id}.json").write_text(
            json.dumps(gradient.as_dict(), ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8")
    with (run_dir / "history.jsonl").open("w", encoding="utf-8") as fh:
        for row in result.state.history:
            fh.write(json.dumps(row.as_dict(), ensure_ascii=False) + "\n")
    (run_dir / "validation.json").write_text(
        json.dumps(result.state.validation, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8")
