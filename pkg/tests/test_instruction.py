import json
import random
from pathlib import Path

import pytest

from ctiner.corpus import AnnotatedDoc, LabelSchema, entity_set
from ctiner.errors import GenerationShortfall, MalformedGuidelineResponse
from ctiner.gateway import (LlmGateway, MockBackend, MockRule, MockScript, Role)
from ctiner.instruction import (AnnotationGuideline, GuidelineSection,
                                GuidingStrategy, InstructionSet,
                                build_task_instruction, generate_guideline,
                                generate_strategies, load_strategies,
                                parse_guideline_section, render_instruction_set,
                                save_strategies, select_strategy)
from ctiner.retrieval import entities_json

GOLDEN = Path(__file__).parent / "data" / "golden_instruction.txt"

SCHEMA = LabelSchema(name="i", types=("Malware", "Tool"),
                     descriptions={"Malware": "malicious software families"})


def role_for(script, name="agent", model="mock-model"):
    gateway = LlmGateway(MockBackend(script))
    return Role(name=name, model_id=model, gateway=gateway)


def numbered(texts, start=1):
    return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=start))


def sample_guideline():
    return AnnotationGuideline(sections={
        "Malware": GuidelineSection(
            definition_and_description="Named malware families.",
            notes_and_exceptions="Skip generic words like virus."),
        "Tool": GuidelineSection(
            definition_and_description="Software used by operators.",
            notes_and_exceptions="Exclude operating systems."),
    })


# --- tactic ---

def test_task_instruction_contains_types_and_contract():
    tactic = build_task_instruction(SCHEMA)
    assert "Malware" in tactic.text and "Tool" in tactic.text
    assert "malicious software families" in tactic.text
    assert '"span"' in tactic.text and '"type"' in tactic.text
    assert "JSON array" in tactic.text


# --- strategy generation ---

def test_generate_ten_strategies_from_numbered_mock():
    texts = [f"Strategy variant number {i} reads the text carefully." for i in range(10)]
    role = role_for(MockScript(rules=[MockRule("*", numbered(texts))]))
    strategies = generate_strategies(10, role)
    assert len(strategies) == 10
    assert [s.text for s in strategies] == texts
    assert strategies[0].id == "s01"
    assert strategies[0].origin_model_id == "mock-model"


def test_generate_single_strategy():
    role = role_for(MockScript(rules=[MockRule("*", "1. Read every clause twice.")]))
    strategies = generate_strategies(1, role)
    assert len(strategies) == 1


def test_shortfall_triggers_followup_until_n_reached():
    first = numbered([f"First round strategy {i}." for i in range(7)])
    second = numbered([f"Second round strategy {i}." for i in range(3)])
    backend = MockBackend(MockScript(rules=[MockRule("*", [first, second])]))
    gateway = LlmGateway(backend)
    role = Role(name="gen", model_id="m", gateway=gateway)
    strategies = generate_strategies(10, role)
    assert len(strategies) == 10
    assert backend.calls == 2


def test_duplicates_do_not_count_toward_n():
    dupes = numbered(["Same idea."] * 5)
    fresh = numbered(["Different idea one.", "Different idea two."])
    role = role_for(MockScript(rules=[MockRule("*", [dupes, fresh])]))
    strategies = generate_strategies(3, role)
    assert [s.text for s in strategies] == \
        ["Same idea.", "Different idea one.", "Different idea two."]


def test_generation_shortfall_after_retry_budget():
    role = role_for(MockScript(rules=[MockRule("*", "no numbered lines here")]))
    with pytest.raises(GenerationShortfall):
        generate_strategies(2, role, max_rounds=2)


# --- strategy selection ---

def _selection_fixture():
    docs = [
        AnnotatedDoc(id="d1", text="Emotet appeared.",
                     gold=entity_set([("Emotet", "Malware")])),
        AnnotatedDoc(id="d2", text="Nmap scanned hosts.",
                     gold=entity_set([("Nmap", "Tool")])),
    ]

    def perfect_or_empty(request):
        content = request.content()
        if "strategy alpha" not in content:
            return "[]"
        for doc in docs:
            if doc.text in content:
                return entities_json(doc.gold)
        return "[]"

    script = MockScript(rules=[MockRule("*", perfect_or_empty)])
    return docs, role_for(script, name="executor")


def test_select_strategy_prefers_perfect_executor_output():
    docs, executor = _selection_fixture()
    strategies = [
        GuidingStrategy(id="s01", text="Use strategy alpha for extraction.",
                        origin_model_id="m"),
        GuidingStrategy(id="s02", text="Use strategy beta for extraction.",
                        origin_model_id="m"),
    ]
    tactic = build_task_instruction(SCHEMA)
    best = select_strategy(strategies, docs, tactic, executor, SCHEMA)
    assert best.id == "s01"
    assert strategies[0].score == 1.0
    assert strategies[1].score == 0.0
    assert strategies[0].macro_score == 1.0


def test_select_single_strategy_returned_with_score():
    docs, executor = _selection_fixture()
    only = GuidingStrategy(id="s01", text="Use strategy alpha now.",
                           origin_model_id="m")
    best = select_strategy([only], docs, build_task_instruction(SCHEMA),
                           executor, SCHEMA)
    assert best is only
    assert best.score == 1.0


def test_select_tie_goes_to_first_strategy():
    docs, _ = _selection_fixture()
    executor = role_for(MockScript(rules=[MockRule("*", "[]")]), name="executor")
    strategies = [
        GuidingStrategy(id="s01", text="Identical behavior one.", origin_model_id="m"),
        GuidingStrategy(id="s02", text="Identical behavior two.", origin_model_id="m"),
    ]
    best = select_strategy(strategies, docs, build_task_instruction(SCHEMA),
                           executor, SCHEMA)
    assert best.id == "s01"


def test_argmax_invariant_under_positive_rescaling():
    rng = random.Random(13)
    for _ in range(50):
        scores = [rng.random() for _ in range(rng.randint(2, 8))]
        scale = rng.uniform(0.01, 9.0)
        argmax = max(range(len(scores)), key=lambda i: (scores[i], -i))
        rescaled = max(range(len(scores)),
                       key=lambda i: (scale * scores[i], -i))
        assert argmax == rescaled


def test_strategies_round_trip_file(tmp_path):
    strategies = [GuidingStrategy(id="s01", text="T.", origin_model_id="m",
                                  score=0.5, macro_score=0.4)]
    path = tmp_path / "strategies.json"
    save_strategies(strategies, "s01", path)
    loaded, selected = load_strategies(path)
    assert selected == "s01"
    assert loaded[0].score == 0.5


# --- guideline generation ---

GOOD_SECTION = ("Definition and Description: Exact names of malicious tools.\n"
                "Notes and Exceptions: Skip generic nouns.")


def test_generate_guideline_one_call_per_type():
    backend = MockBackend(MockScript(rules=[MockRule("*", GOOD_SECTION)]))
    gateway = LlmGateway(backend)
    role = Role(name="guideline_generator", model_id="m", gateway=gateway)
    guideline = generate_guideline(SCHEMA, role)
    assert backend.calls == len(SCHEMA.types)
    assert guideline.version == 0
    assert set(guideline.sections) == set(SCHEMA.types)


def test_generate_guideline_nine_type_schema():
    schema = LabelSchema(name="nine", types=tuple(f"T{i}" for i in range(9)))
    backend = MockBackend(MockScript(rules=[MockRule("*", GOOD_SECTION)]))
    role = Role(name="g", model_id="m", gateway=LlmGateway(backend))
    guideline = generate_guideline(schema, role)
    assert len(guideline.sections) == 9
    assert backend.calls == 9


def test_missing_notes_subsection_raises_after_retry():
    bad = "Definition and Description: Something.\n(no notes heading)"
    backend = MockBackend(MockScript(rules=[MockRule("*", bad)]))
    role = Role(name="g", model_id="m", gateway=LlmGateway(backend))
    with pytest.raises(MalformedGuidelineResponse):
        generate_guideline(SCHEMA, role)
    assert backend.calls == 2  # original plus one retry for the first type


def test_retry_recovers_malformed_first_response():
    bad = "Definition and Description: Something."
    backend = MockBackend(MockScript(rules=[MockRule("*", [bad, GOOD_SECTION,
                                                           GOOD_SECTION,
                                                           GOOD_SECTION])]))
    role = Role(name="g", model_id="m", gateway=LlmGateway(backend))
    guideline = generate_guideline(SCHEMA, role)
    assert set(guideline.sections) == set(SCHEMA.types)


def test_parse_guideline_section_case_insensitive():
    section = parse_guideline_section(
        "DEFINITION AND DESCRIPTION: a\nnotes and exceptions: b")
    assert section == GuidelineSection(definition_and_description="a",
                                       notes_and_exceptions="b")


def test_guideline_json_round_trip(tmp_path):
    guideline = sample_guideline()
    path = tmp_path / "g.json"
    guideline.save(path)
    loaded = AnnotationGuideline.load(path)
    assert loaded == guideline


# --- rendering ---

def full_set():
    return InstructionSet(
        tactic=build_task_instruction(SCHEMA),
        technique=GuidingStrategy(id="s01", text="Scan for proper nouns first.",
                                  origin_model_id="m"),
        procedure=sample_guideline())


def test_base_variant_has_no_strategy_or_guideline_text():
    rendered = render_instruction_set(full_set(), "base")
    assert "Guiding strategy" not in rendered
    assert "Annotation guidelines" not in rendered


def test_full_variant_orders_tactic_strategy_procedure():
    rendered = render_instruction_set(full_set(), "full")
    i_tactic = rendered.index("You are an annotator")
    i_strategy = rendered.index("Guiding strategy:")
    i_procedure = rendered.index("Annotation guidelines")
    assert i_tactic < i_strategy < i_procedure
    assert "### Malware" in rendered and "### Tool" in rendered


def test_variants_render_pairwise_distinct():
    iset = full_set()
    rendered = {v: render_instruction_set(iset, v)
                for v in ("base", "plus_strategy", "plus_guideline", "full")}
    assert len(set(rendered.values())) == 4


def test_missing_components_rejected_per_variant():
    bare = InstructionSet(tactic=build_task_instruction(SCHEMA))
    with pytest.raises(ValueError):
        render_instruction_set(bare, "plus_strategy")
    with pytest.raises(ValueError):
        render_instruction_set(
            InstructionSet(tactic=bare.tactic,
                           technique=GuidingStrategy(id="s", text="t",
                                                     origin_model_id="m")),
            "full")


def test_golden_rendered_instruction_is_byte_identical():
    rendered = render_instruction_set(full_set(), "full")
    assert rendered == GOLDEN.read_text(encoding="utf-8")


def test_guideline_edit_bumps_version_and_changelog():
    guideline = sample_guideline()
    section = guideline.section("Malware").with_text(
        "notes_and_exceptions", "Also label loader families.")
    updated = guideline.with_section("Malware", section, "g0001")
    assert updated.version == 1
    assert updated.changelog == ((1, "g0001"),)
    assert guideline.version == 0  # original untouched
