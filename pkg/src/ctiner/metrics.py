"""Span-level NER scoring: micro/macro F1, overlap-split diagnostic, Pearson r.

Matching is exact: a predicted (span, type) pair is a true positive iff the
identical pair appears in that document's gold set. Spans are compared after
NFC normalization, with surrounding whitespace stripped from predictions.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field

from .corpus import AnnotatedDoc, LabelSchema, typeset
from .errors import DegenerateInput, UnknownDocId, UnknownType


def canonical_span(span: str, predicted: bool = False) -> str:
    out = unicodedata.normalize("NFC", span)
    return out.strip() if predicted else out


def _canonical_pairs(entities, predicted: bool) -> set[tuple[str, str]]:
    pairs = set()
    for m in entities:
        span = canonical_span(m.span, predicted=predicted)
        if span:
            pairs.add((span, m.entity_type))
    return pairs


@dataclass
class MatchCounts:
    """Per-type TP/FP/FN tallies; micro totals are the per-type sums."""

    tp: dict[str, int] = field(default_factory=dict)
    fp: dict[str, int] = field(default_factory=dict)
    fn: dict[str, int] = field(default_factory=dict)

    def add(self, etype: str, tp: int = 0, fp: int = 0, fn: int = 0) -> None:
        self.tp[etype] = self.tp.get(etype, 0) + tp
        self.fp[etype] = self.fp.get(etype, 0) + fp
        self.fn[etype] = self.fn.get(etype, 0) + fn

    def merge(self, other: "MatchCounts") -> None:
        for etype, c in other.tp.items():
            self.add(etype, tp=c)
        for etype, c in other.fp.items():
            self.add(etype, fp=c)
        for etype, c in other.fn.items():
            self.add(etype, fn=c)

    def totals(self) -> tuple[int, int, int]:
        return (sum(self.tp.values()), sum(self.fp.values()), sum(self.fn.values()))

    def as_dict(self) -> dict:
        return {"tp": dict(sorted(self.tp.items())),
                "fp": dict(sorted(self.fp.items())),
                "fn": dict(sorted(self.fn.items()))}


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass
class EvalReport:
    """Micro/macro F1 plus per-type breakdown for one evaluated doc set."""

    micro_f1: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    per_type_f1: dict[str, float]
    n_docs: int
    counts: MatchCounts
    subset: str | None = None

    def as_dict(self) -> dict:
        out = {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "per_type_f1": dict(sorted(self.per_type_f1.items())),
            "n_docs": self.n_docs,
            "counts": self.counts.as_dict(),
        }
        if self.subset is not None:
            out["subset"] = self.subset
        return out


def count_matches(predictions: dict[str, frozenset], gold: list[AnnotatedDoc],
                  schema: LabelSchema) -> MatchCounts:
    """Exact (span, type) matching per doc, tallied per type."""
    gold_ids = {d.id for d in gold}
    extra = set(predictions) - gold_ids
    if extra:
        raise UnknownDocId(f"predictions for unknown doc ids: {sorted(extra)[:5]}")
    counts = MatchCounts()
    for doc in gold:
        if doc.id not in predictions:
            raise UnknownDocId(f"no prediction entry for doc {doc.id!r}")
        pred_pairs = _canonical_pairs(predictions[doc.id], predicted=True)
        gold_pairs = _canonical_pairs(doc.gold, predicted=False)
        for _, etype in pred_pairs | gold_pairs:
            if etype not in schema:
                raise UnknownType(f"doc {doc.id!r}: type {etype!r} not in schema")
        for span, etype in pred_pairs & gold_pairs:
            counts.add(etype, tp=1)
        for span, etype in pred_pairs - gold_pairs:
            counts.add(etype, fp=1)
        for span, etype in gold_pairs - pred_pairs:
            counts.add(etype, fn=1)
    return counts


def report_from_counts(counts: MatchCounts, schema: LabelSchema, n_docs: int,
                       gold_types: set[str], subset: str | None = None,
                       macro_over_full_schema: bool = False) -> EvalReport:
    tp, fp, fn = counts.totals()
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    micro = _f1(tp, fp, fn)
    # Macro averages over types observed in the split's gold unless the
    # full-schema flag is set; types predicted but never gold are excluded.
    macro_types = set(schema.types) if macro_over_full_schema else set(gold_types)
    per_type = {
        t: _f1(counts.tp.get(t, 0), counts.fp.get(t, 0), counts.fn.get(t, 0))
        for t in sorted(macro_types)
    }
    macro = sum(per_type.values()) / len(per_type) if per_type else 0.0
    return EvalReport(micro_f1=micro, macro_f1=macro, micro_precision=precision,
                      micro_recall=recall, per_type_f1=per_type, n_docs=n_docs,
                      counts=counts, subset=subset)


def score(predictions: dict[str, frozenset], gold: list[AnnotatedDoc],
          schema: LabelSchema, macro_over_full_schema: bool = False,
          subset: str | None = None) -> EvalReport:
    """Score predictions (doc id -> EntitySet) against gold documents."""
    counts = count_matches(predictions, gold, schema)
    gold_types = set()
    for doc in gold:
        gold_types |= typeset(doc.gold)
    return report_from_counts(counts, schema, len(gold), gold_types, subset,
                              macro_over_full_schema)


@dataclass
class OverlapSplitReport:
    """Independent scores for queries whose demos did/didn't share gold types."""

    report_overlap: EvalReport
    report_no_overlap: EvalReport
    n_overlap: int
    n_no_overlap: int

    def as_dict(self) -> dict:
        return {
            "overlap": self.report_overlap.as_dict(),
            "no_overlap": self.report_no_overlap.as_dict(),
            "n_overlap": self.n_overlap,
            "n_no_overlap": self.n_no_overlap,
        }


def overlap_split_score(predictions: dict[str, frozenset], gold: list[AnnotatedDoc],
                        demos_used: dict[str, set[str]], schema: LabelSchema,
                        macro_over_full_schema: bool = False) -> OverlapSplitReport:
    """Split docs by whether any demo shared an entity type with the query gold.

    `demos_used` maps each evaluated doc id to the union of its demos' gold
    typesets.
    """
    missing = [d.id for d in gold if d.id not in demos_used]
    if missing:
        raise UnknownDocId(f"demos_used missing entries for: {missing[:5]}")
    overlap_docs, plain_docs = [], []
    for doc in gold:
        if typeset(doc.gold) & set(demos_used[doc.id]):
            overlap_docs.append(doc)
        else:
            plain_docs.append(doc)
    rep_overlap = score({d.id: predictions[d.id] for d in overlap_docs},
                        overlap_docs, schema, macro_over_full_schema,
                        subset="overlap")
    rep_plain = score({d.id: predictions[d.id] for d in plain_docs},
                      plain_docs, schema, macro_over_full_schema,
                      subset="no_overlap")
    return OverlapSplitReport(report_overlap=rep_overlap, report_no_overlap=rep_plain,
                              n_overlap=len(overlap_docs), n_no_overlap=len(plain_docs))


@dataclass(frozen=True)
class PearsonResult:
    r: float
    p: float
    n: int

    def as_dict(self) -> dict:
        return {"r": self.r, "p": self.p, "n": self.n}


def pearson_r(xs, ys) -> PearsonResult:
    """Pearson product-moment r with a two-sided t-distribution p-value."""
    xs, ys = list(xs), list(ys)
    n = len(xs)
    if n != len(ys):
        raise DegenerateInput(f"length mismatch: {n} vs {len(ys)}")
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("zero variance in input")
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) >= 1.0:
        p = 0.0
    else:
        from scipy.stats import t as t_dist  # deferred: keeps CLI startup light

        t_stat = abs(r) * math.sqrt(df / (1.0 - r * r))
        p = 2.0 * float(t_dist.sf(t_stat, df))
    return PearsonResult(r=r, p=p, n=n)


def render_report_table(reports: dict[str, EvalReport]) -> str:
    """Aligned plain-text table, one row per labeled report."""
    headers = ["run", "micro_f1", "macro_f1", "precision", "recall", "docs"]
    rows = []
    for label, rep in reports.items():
        rows.append([label, f"{rep.micro_f1:.4f}", f"{rep.macro_f1:.4f}",
                     f"{rep.micro_precision:.4f}", f"{rep.micro_recall:.4f}",
                     str(rep.n_docs)])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)
