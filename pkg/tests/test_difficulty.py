import math
import random

import pytest

from ctiner.corpus import AnnotatedDoc, DatasetBundle, LabelSchema, entity_set
from ctiner.difficulty import (DIMENSIONS, DifficultyProfile, EQUAL_WEIGHTS,
                               compute_raw_dimensions, gini,
                               normalize_and_aggregate, profile_bundle,
                               render_difficulty_table, token_count)
from ctiner.embeddings import CallableEmbedder
from ctiner.errors import EmbeddingServiceError


def brute_force_gini(values):
    total = sum(values)
    n = len(values)
    pair_sum = sum(abs(a - b) for a in values for b in values)
    return pair_sum / (2 * n * total)


# --- gini ---

def test_gini_perfect_equality():
    assert gini([1, 1, 1, 1]) == 0.0


def test_gini_hand_computed_pair():
    assert gini([3, 1]) == pytest.approx(0.25)


def test_gini_single_dominant():
    assert gini([1, 0, 0, 0]) == pytest.approx(0.75)


def test_gini_matches_brute_force_on_random_vectors():
    rng = random.Random(4)
    for _ in range(200):
        values = [rng.uniform(0, 50) for _ in range(rng.randint(1, 30))]
        if sum(values) <= 0:
            values[0] = 1.0
        assert gini(values) == pytest.approx(brute_force_gini(values), abs=1e-9)


def test_gini_scale_and_permutation_invariant():
    rng = random.Random(8)
    values = [rng.uniform(0, 9) + 0.1 for _ in range(12)]
    base = gini(values)
    assert gini([7.3 * v for v in values]) == pytest.approx(base)
    shuffled = list(values)
    rng.shuffle(shuffled)
    assert gini(shuffled) == pytest.approx(base)


def test_gini_rejects_bad_input():
    with pytest.raises(ValueError):
        gini([])
    with pytest.raises(ValueError):
        gini([0, 0])
    with pytest.raises(ValueError):
        gini([1, -1])


# --- tokenization ---

def test_token_count_modes():
    assert token_count("Emotet hit Acme Corp today") == 5
    assert token_count("") == 0
    assert token_count("single") == 1
    assert token_count("网络安全事件", char_tokens=True) == 6


def test_unspaced_dataset_switches_to_character_tokens():
    from ctiner.difficulty import dataset_uses_character_tokens

    schema = LabelSchema(name="zh", types=("M",))
    docs = [AnnotatedDoc(id=f"z{i}", text="网络安全事件通报",
                         gold=entity_set([("网络安全", "M")])) for i in range(3)]
    bundle = DatasetBundle(name="zh", schema=schema, train=docs[:2],
                           test=docs[2:])
    assert dataset_uses_character_tokens(docs)
    raw, flags = compute_raw_dimensions(
        bundle, CallableEmbedder(lambda t: [1.0, 0.0], model_id="c"))
    assert raw["doc_length"] == 8.0   # characters, not whitespace tokens
    assert raw["entity_length"] == 4.0
    assert flags.get("tokenizer", "").startswith("character")


# --- raw dimensions ---

VEC = {"Emotet": [1.0, 0.0], "Ryuk": [1.0, 0.0], "NewThing": [1.0, 0.0],
       "Acme Corp": [1.0, 1.0]}


def hand_bundle():
    schema = LabelSchema(name="hand", types=("Malware", "Organization"))
    train = [
        AnnotatedDoc(id="a", text="Emotet hit Acme Corp today",
                     gold=entity_set([("Emotet", "Malware"),
                                      ("Acme Corp", "Organization")])),
        AnnotatedDoc(id="b", text="Ryuk spread fast",
                     gold=entity_set([("Ryuk", "Malware")])),
    ]
    test = [
        AnnotatedDoc(id="c", text="Emotet returned again",
                     gold=entity_set([("Emotet", "Malware")])),
        AnnotatedDoc(id="d", text="NewThing rose",
                     gold=entity_set([("NewThing", "Malware")])),
    ]
    return DatasetBundle(name="hand", schema=schema, train=train, test=test)


def test_raw_dimensions_match_manual_recount():
    embedder = CallableEmbedder(lambda t: VEC[t], model_id="fixed")
    raw, flags = compute_raw_dimensions(hand_bundle(), embedder)
    assert raw["doc_length"] == pytest.approx((5 + 3 + 3 + 2) / 4)
    assert raw["type_count"] == 2
    assert raw["type_imbalance"] == pytest.approx(brute_force_gini([4, 1]))
    assert raw["entity_length"] == pytest.approx((1 + 2 + 1 + 1 + 1) / 5)
    assert raw["type_confusability"] == pytest.approx(1 / math.sqrt(2))
    assert raw["entity_novelty"] == pytest.approx(0.5)
    assert flags == {}


def test_single_type_confusability_flagged_zero():
    schema = LabelSchema(name="one", types=("Malware",))
    bundle = DatasetBundle(
        name="one", schema=schema,
        train=[AnnotatedDoc(id="a", text="Emotet hit",
                            gold=entity_set([("Emotet", "Malware")]))],
        test=[AnnotatedDoc(id="b", text="Emotet back",
                           gold=entity_set([("Emotet", "Malware")]))])
    raw, flags = compute_raw_dimensions(
        bundle, CallableEmbedder(lambda t: VEC[t], model_id="fixed"))
    assert raw["type_confusability"] == 0.0
    assert "type_confusability" in flags


def test_novelty_zero_when_test_spans_seen_in_train():
    bundle = hand_bundle()
    bundle = DatasetBundle(name="n0", schema=bundle.schema, train=bundle.train,
                           test=[AnnotatedDoc(
                               id="c", text="EMOTET returned",
                               gold=entity_set([("EMOTET", "Malware")]))])
    raw, _ = compute_raw_dimensions(
        bundle, CallableEmbedder(lambda t: VEC.get(t, [1.0, 0.0]),
                                 model_id="fixed"))
    assert raw["entity_novelty"] == 0.0  # case-insensitive surface match


def test_embedding_failure_marks_confusability_absent():
    def boom(text):
        raise EmbeddingServiceError("down")

    raw, flags = compute_raw_dimensions(
        hand_bundle(), CallableEmbedder(boom, model_id="down"))
    assert raw["type_confusability"] is None
    assert "type_confusability" in flags
    assert raw["doc_length"] > 0  # other dimensions still computed


# --- normalization and aggregation ---

PUBLISHED_ROWS = {
    "CTINexus": (1.00, 1.00, 1.00, 1.00, 1.00, 1.00),
    "LADDER": (0.08, 0.25, 0.31, 0.22, 0.61, 0.60),
    "CyberDialogue": (0.00, 0.05, 0.91, 0.00, 0.56, 0.15),
    "DNRTI": (0.08, 0.45, 0.00, 0.40, 0.35, 0.00),
    "CyberEyes": (0.06, 0.00, 0.27, 0.22, 0.00, 0.40),
}

PUBLISHED_OMEGA = {"CTINexus": 1.00, "LADDER": 0.34, "CyberDialogue": 0.28,
                   "DNRTI": 0.21, "CyberEyes": 0.16}


def profiles_from_rows(rows):
    return [DifficultyProfile(dataset=name,
                              raw=dict(zip(DIMENSIONS, values)))
            for name, values in rows.items()]


def test_published_normalized_rows_reproduce_omega():
    profiles = normalize_and_aggregate(profiles_from_rows(PUBLISHED_ROWS))
    for profile in profiles:
        assert profile.omega == pytest.approx(
            PUBLISHED_OMEGA[profile.dataset], abs=0.01)


def test_two_dataset_collection_hits_endpoints():
    rows = {"hardset": (10, 8, 0.9, 4, 0.8, 0.7),
            "easyset": (2, 3, 0.1, 1, 0.2, 0.1)}
    profiles = normalize_and_aggregate(profiles_from_rows(rows))
    by_name = {p.dataset: p for p in profiles}
    assert all(v == 1.0 for v in by_name["hardset"].normalized.values())
    assert all(v == 0.0 for v in by_name["easyset"].normalized.values())
    assert by_name["hardset"].omega == pytest.approx(1.0)


def test_constant_dimension_normalizes_to_zero_with_flag():
    rows = {"a": (5, 1, 0.5, 2, 0.3, 0.2), "b": (9, 1, 0.7, 3, 0.4, 0.6)}
    profiles = normalize_and_aggregate(profiles_from_rows(rows))
    for profile in profiles:
        assert profile.normalized["type_count"] == 0.0
        assert "type_count" in profile.flags


def test_needs_at_least_two_datasets():
    with pytest.raises(ValueError):
        normalize_and_aggregate(profiles_from_rows(
            {"only": (1, 2, 3, 4, 5, 6)}))


def test_weights_must_sum_to_one():
    profiles = profiles_from_rows({"a": (1, 1, 1, 1, 1, 1),
                                   "b": (2, 2, 2, 2, 2, 2)})
    bad = {dim: 0.5 for dim in DIMENSIONS}
    with pytest.raises(ValueError):
        normalize_and_aggregate(profiles, weights=bad)


def test_omega_invariant_under_uniform_affine_rescale():
    base = normalize_and_aggregate(profiles_from_rows(PUBLISHED_ROWS))
    scaled_rows = {
        name: tuple(5.0 * v + 3.0 if i == 0 else v
                    for i, v in enumerate(values))
        for name, values in PUBLISHED_ROWS.items()
    }
    scaled = normalize_and_aggregate(profiles_from_rows(scaled_rows))
    for a, b in zip(base, scaled):
        assert b.omega == pytest.approx(a.omega)


def test_omega_monotone_in_raw_dimension():
    rng = random.Random(19)
    for _ in range(40):
        rows = {f"d{i}": tuple(rng.uniform(0, 10) for _ in DIMENSIONS)
                for i in range(4)}
        profiles = normalize_and_aggregate(profiles_from_rows(rows))
        target = rng.choice([p.dataset for p in profiles])
        dim = rng.choice(DIMENSIONS)
        bumped_rows = {
            name: tuple(v + 2.5 if (name == target and
                                    DIMENSIONS[i] == dim) else v
                        for i, v in enumerate(values))
            for name, values in rows.items()
        }
        bumped = normalize_and_aggregate(profiles_from_rows(bumped_rows))
        before = next(p for p in profiles if p.dataset == target)
        after = next(p for p in bumped if p.dataset == target)
        assert after.omega >= before.omega - 1e-12


def test_profile_bundle_and_table_rendering(toy_bundle):
    from ctiner.embeddings import HashEmbedder

    other = hand_bundle()
    profiles = [profile_bundle(toy_bundle, HashEmbedder()),
                profile_bundle(other, HashEmbedder())]
    profiles = normalize_and_aggregate(profiles)
    table = render_difficulty_table(profiles)
    assert "omega" in table.splitlines()[0]
    assert any("toy-cti" in line for line in table.splitlines())


def test_weights_default_sum_to_one():
    assert sum(EQUAL_WEIGHTS.values()) == pytest.approx(1.0)
