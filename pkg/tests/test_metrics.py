import random
import unicodedata

import pytest

from ctiner.corpus import AnnotatedDoc, entity_set, LabelSchema
from ctiner.errors import DegenerateInput, UnknownDocId, UnknownType
from ctiner.metrics import (MatchCounts, overlap_split_score, pearson_r,
                            score)

SCHEMA = LabelSchema(name="m", types=("T1", "T2", "T3", "T4", "T5"))


def brute_force_micro_macro(predictions, gold_docs, schema):
    """Independent pair-by-pair counting scorer used as the oracle."""
    per_type = {}
    gold_types_seen = []
    for doc in gold_docs:
        gold_pairs = []
        for m in doc.gold:
            pair = (unicodedata.normalize("NFC", m.span), m.entity_type)
            if pair not in gold_pairs:
                gold_pairs.append(pair)
            if m.entity_type not in gold_types_seen:
                gold_types_seen.append(m.entity_type)
        pred_pairs = []
        for m in predictions[doc.id]:
            pair = (unicodedata.normalize("NFC", m.span).strip(), m.entity_type)
            if pair and pair[0] and pair not in pred_pairs:
                pred_pairs.append(pair)
        for pair in pred_pairs:
            bucket = per_type.setdefault(pair[1], {"tp": 0, "fp": 0, "fn": 0})
            if pair in gold_pairs:
                bucket["tp"] += 1
            else:
                bucket["fp"] += 1
        for pair in gold_pairs:
            if pair not in pred_pairs:
                bucket = per_type.setdefault(pair[1], {"tp": 0, "fp": 0, "fn": 0})
                bucket["fn"] += 1
    tp = sum(b["tp"] for b in per_type.values())
    fp = sum(b["fp"] for b in per_type.values())
    fn = sum(b["fn"] for b in per_type.values())
    micro = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    f1s = []
    # average in sorted-type order so float association matches bit-for-bit
    for etype in sorted(gold_types_seen):
        b = per_type.get(etype, {"tp": 0, "fp": 0, "fn": 0})
        denom = 2 * b["tp"] + b["fp"] + b["fn"]
        f1s.append(2 * b["tp"] / denom if denom else 0.0)
    macro = sum(f1s) / len(f1s) if f1s else 0.0
    return micro, macro, per_type


def random_fixture(rng, n_docs=10, n_types=5):
    types = [f"T{i + 1}" for i in range(n_types)]
    docs, predictions = [], {}
    for i in range(n_docs):
        spans = [f"s{rng.randint(0, 11)}" for _ in range(rng.randint(0, 5))]
        gold = entity_set((s, rng.choice(types)) for s in spans)
        all_tokens = sorted({m.span for m in gold} |
                            {f"s{k}" for k in range(12)})
        text = " ".join(all_tokens)
        doc = AnnotatedDoc(id=f"d{i}", text=text, gold=gold)
        docs.append(doc)
        pred = set()
        for m in gold:
            if rng.random() < 0.6:
                pred.add(m)  # kept correct
            if rng.random() < 0.3:
                pred.add((f"s{rng.randint(0, 11)}", rng.choice(types)))
        predictions[doc.id] = entity_set(pred)
    return docs, predictions


def test_perfect_predictions_score_one(toy_bundle):
    predictions = {d.id: d.gold for d in toy_bundle.test}
    report = score(predictions, toy_bundle.test, toy_bundle.schema)
    assert report.micro_f1 == 1.0
    assert report.macro_f1 == 1.0


def test_hand_counted_example():
    doc = AnnotatedDoc(id="d", text="a b", gold=entity_set([("a", "T1"), ("b", "T2")]))
    schema = LabelSchema(name="s", types=("T1", "T2"))
    report = score({"d": entity_set([("a", "T1")])}, [doc], schema)
    assert report.micro_precision == 1.0
    assert report.micro_recall == 0.5
    assert report.micro_f1 == pytest.approx(2 / 3)
    assert report.per_type_f1 == {"T1": 1.0, "T2": 0.0}
    assert report.macro_f1 == pytest.approx(0.5)


def test_matches_brute_force_on_frozen_fixture():
    rng = random.Random(50)
    docs, predictions = random_fixture(rng, n_docs=50)
    report = score(predictions, docs, SCHEMA)
    micro, macro, per_type = brute_force_micro_macro(predictions, docs, SCHEMA)
    assert report.micro_f1 == micro
    assert report.macro_f1 == macro
    for etype, bucket in per_type.items():
        assert report.counts.tp.get(etype, 0) == bucket["tp"]
        assert report.counts.fp.get(etype, 0) == bucket["fp"]
        assert report.counts.fn.get(etype, 0) == bucket["fn"]


def test_score_permutation_invariant():
    rng = random.Random(7)
    docs, predictions = random_fixture(rng)
    rep_a = score(predictions, docs, SCHEMA)
    shuffled = list(docs)
    rng.shuffle(shuffled)
    rep_b = score(predictions, shuffled, SCHEMA)
    assert rep_a.micro_f1 == rep_b.micro_f1
    assert rep_a.macro_f1 == rep_b.macro_f1


def test_adding_correct_prediction_never_hurts_micro():
    rng = random.Random(23)
    for _ in range(25):
        docs, predictions = random_fixture(rng, n_docs=6)
        base = score(predictions, docs, SCHEMA).micro_f1
        target = None
        for doc in docs:
            missing = doc.gold - predictions[doc.id]
            if missing:
                target = (doc.id, next(iter(missing)))
                break
        if target is None:
            continue
        updated = dict(predictions)
        updated[target[0]] = predictions[target[0]] | {target[1]}
        assert score(updated, docs, SCHEMA).micro_f1 >= base


def test_adding_incorrect_prediction_never_helps_micro():
    rng = random.Random(29)
    for _ in range(25):
        docs, predictions = random_fixture(rng, n_docs=6)
        base = score(predictions, docs, SCHEMA).micro_f1
        doc = docs[0]
        from ctiner.corpus import EntityMention

        wrong = EntityMention("sZZZ-not-gold", "T1")
        assert wrong not in doc.gold
        updated = dict(predictions)
        updated[doc.id] = predictions[doc.id] | {wrong}
        assert score(updated, docs, SCHEMA).micro_f1 <= base


def test_bounds_always_hold():
    rng = random.Random(31)
    for _ in range(30):
        docs, predictions = random_fixture(rng, n_docs=4)
        report = score(predictions, docs, SCHEMA)
        assert 0.0 <= report.micro_f1 <= 1.0
        assert 0.0 <= report.macro_f1 <= 1.0


def test_unknown_doc_id_raises(toy_bundle):
    predictions = {d.id: frozenset() for d in toy_bundle.test}
    predictions["ghost"] = frozenset()
    with pytest.raises(UnknownDocId):
        score(predictions, toy_bundle.test, toy_bundle.schema)
    with pytest.raises(UnknownDocId):
        score({}, toy_bundle.test, toy_bundle.schema)


def test_unknown_type_raises():
    doc = AnnotatedDoc(id="d", text="a", gold=entity_set([("a", "T1")]))
    schema = LabelSchema(name="s", types=("T1",))
    with pytest.raises(UnknownType):
        score({"d": entity_set([("a", "Bogus")])}, [doc], schema)


def test_predicted_spans_trimmed_and_nfc_normalized():
    text = "café open"
    gold = entity_set([("café", "T1")])
    doc = AnnotatedDoc(id="d", text=text, gold=gold)
    schema = LabelSchema(name="s", types=("T1",))
    decomposed = "café"  # NFD form plus stray whitespace
    report = score({"d": entity_set([(f"  {decomposed} ", "T1")])}, [doc], schema)
    assert report.micro_f1 == 1.0


def test_macro_full_schema_flag():
    doc = AnnotatedDoc(id="d", text="a", gold=entity_set([("a", "T1")]))
    report = score({"d": doc.gold}, [doc], SCHEMA, macro_over_full_schema=True)
    assert report.macro_f1 == pytest.approx(1 / 5)


# --- overlap split ---

def _docs_with_types():
    d1 = AnnotatedDoc(id="d1", text="a", gold=entity_set([("a", "T1")]))
    d2 = AnnotatedDoc(id="d2", text="b", gold=entity_set([("b", "T2")]))
    return [d1, d2]


def test_overlap_split_no_shared_types():
    docs = _docs_with_types()
    predictions = {d.id: d.gold for d in docs}
    demos = {"d1": {"T3"}, "d2": {"T4", "T5"}}
    split = overlap_split_score(predictions, docs, demos, SCHEMA)
    assert split.n_overlap == 0
    assert split.n_no_overlap == 2


def test_overlap_split_intersection_routes_doc():
    docs = _docs_with_types()
    predictions = {d.id: d.gold for d in docs}
    demos = {"d1": {"T1", "T4"}, "d2": {"T3"}}
    split = overlap_split_score(predictions, docs, demos, SCHEMA)
    assert split.n_overlap == 1
    assert split.report_overlap.n_docs == 1


def test_overlap_split_counts_union_equals_full():
    rng = random.Random(41)
    docs, predictions = random_fixture(rng, n_docs=20)
    demos = {d.id: {rng.choice(SCHEMA.types) for _ in range(rng.randint(0, 3))}
             for d in docs}
    split = overlap_split_score(predictions, docs, demos, SCHEMA)
    merged = MatchCounts()
    merged.merge(split.report_overlap.counts)
    merged.merge(split.report_no_overlap.counts)
    full = score(predictions, docs, SCHEMA).counts
    assert merged.as_dict() == full.as_dict()
    assert split.n_overlap + split.n_no_overlap == len(docs)


def test_overlap_split_requires_demo_coverage():
    docs = _docs_with_types()
    predictions = {d.id: d.gold for d in docs}
    with pytest.raises(UnknownDocId):
        overlap_split_score(predictions, docs, {"d1": set()}, SCHEMA)


# --- pearson ---

def test_pearson_perfect_linear():
    xs = [1.0, 2.0, 3.0, 4.0]
    result = pearson_r(xs, [2 * x + 1 for x in xs])
    assert result.r == pytest.approx(1.0)
    assert result.p == pytest.approx(0.0, abs=1e-9)


def test_pearson_self_correlation_is_one():
    xs = [0.3, 1.8, -2.0, 0.7, 5.5]
    assert pearson_r(xs, xs).r == pytest.approx(1.0)


def test_pearson_affine_invariance():
    rng = random.Random(17)
    xs = [rng.random() for _ in range(12)]
    ys = [rng.random() for _ in range(12)]
    base = pearson_r(xs, ys)
    scaled = pearson_r([3.5 * x + 2 for x in xs], [0.25 * y - 7 for y in ys])
    assert scaled.r == pytest.approx(base.r)
    assert scaled.p == pytest.approx(base.p)


def test_pearson_matches_scipy_on_random_data():
    from scipy.stats import pearsonr

    rng = random.Random(71)
    for n in (5, 8, 30):
        xs = [rng.gauss(0, 1) for _ in range(n)]
        ys = [0.6 * x + rng.gauss(0, 1) for x in xs]
        mine = pearson_r(xs, ys)
        ref_r, ref_p = pearsonr(xs, ys)
        assert mine.r == pytest.approx(ref_r, abs=1e-12)
        assert mine.p == pytest.approx(ref_p, abs=1e-9)


def test_pearson_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        pearson_r([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(DegenerateInput):
        pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        pearson_r([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])


def test_pearson_published_difficulty_deltas():
    omega = [0.34, 0.16, 0.28, 0.21, 1.00]
    delta_macro = [67.92 - 69.56, 64.55 - 89.35, 46.92 - 60.36,
                   48.17 - 78.54, 21.79 - 10.88]
    delta_micro = [71.96 - 75.91, 56.52 - 87.50, 58.05 - 78.86,
                   61.62 - 78.38, 31.41 - 25.53]
    macro = pearson_r(omega, delta_macro)
    micro = pearson_r(omega, delta_micro)
    assert macro.r == pytest.approx(0.859, abs=0.02)
    assert macro.p == pytest.approx(0.0625, abs=0.01)
    assert micro.r == pytest.approx(0.848, abs=0.02)
    assert micro.p == pytest.approx(0.0697, abs=0.01)
