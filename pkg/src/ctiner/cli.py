"""Command-line surface and experiment orchestration.

Commands: ingest, profile, reticl-study, strategize, refine, instruct,
evaluate, correlate, replay. Every pipeline command writes a self-contained
run directory (config.json plus artifacts plus report.json) whose contents
are deterministic for a fixed config, seed, and populated cache; `replay`
re-executes a recorded run and verifies the artifacts match byte-for-byte.

Exit codes: 0 ok, 2 config/input error, 3 budget exceeded, 4 backend failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import config as config_mod
from .corpus import (DatasetBundle, entity_set, load_dataset, load_schema,
                     load_split, save_bundle, sorted_mentions,
                     stratified_subsample, typeset)
from .difficulty import (load_profiles, normalize_and_aggregate, profile_bundle,
                         render_difficulty_table, save_profiles)
from .embeddings import embed_one
from .errors import (AuthError, BudgetExceeded, ConfigError,
                     EmbeddingServiceError, ParseError, SchemaViolation,
                     SpanNotFound, TransportError, WorkbenchError)
from .fir import FirConfig, run_fir, write_fir_run
from .gateway import parse_entities
from .instruction import (AnnotationGuideline, GuidingStrategy, InstructionSet,
                          build_task_instruction, extract_over_docs,
                          generate_guideline, generate_strategies,
                          load_strategies, render_instruction_set,
                          save_strategies, select_strategy)
from .metrics import (EvalReport, OverlapSplitReport, overlap_split_score,
                      pearson_r, render_report_table, score)
from .retrieval import (DemoSet, PARADIGMS, assemble_prompt, build_pool,
                        retrieve_entity_density, retrieve_semantic_knn,
                        retrieve_type_overlap)


@dataclass
class ExperimentReport:
    """JSON-first result container with full provenance."""

    command: str
    reports: dict[str, EvalReport] = field(default_factory=dict)
    overlap_split: OverlapSplitReport | None = None
    difficulty: list | None = None
    correlation: dict | None = None
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"command": self.command,
               "reports": {k: v.as_dict() for k, v in self.reports.items()},
               "provenance": self.provenance}
        if self.overlap_split is not None:
            out["overlap_split"] = self.overlap_split.as_dict()
        if self.difficulty is not None:
            out["difficulty"] = self.difficulty
        if self.correlation is not None:
            out["correlation"] = self.correlation
        return out


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2,
                               sort_keys=True) + "\n", encoding="utf-8")


def _predictions_payload(predictions: dict[str, frozenset]) -> dict:
    return {
        doc_id: [{"span": m.span, "type": m.entity_type}
                 for m in sorted_mentions(mentions)]
        for doc_id, mentions in sorted(predictions.items())
    }


def _load_predictions(path: Path) -> dict[str, frozenset]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    return {
        doc_id: entity_set((e["span"], e["type"]) for e in entities)
        for doc_id, entities in raw.items()
    }


def _resolve_out_dir(out: str | None, command: str) -> Path:
    if out:
        return Path(out)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return Path("runs") / f"{stamp}-{command}"


def _strip_out(argv: list[str]) -> list[str]:
    """Drop the --out argument: the run dir's location is not part of the run."""
    out = []
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        if token == "--out":
            skip = True
            continue
        if token.startswith("--out="):
            continue
        out.append(token)
    return out


def _write_run_config(out_dir: Path, command: str, argv: list[str],
                      run_config: config_mod.RunConfig | None) -> None:
    payload: dict = {"command": command, "argv": _strip_out(argv)}
    if run_config is not None:
        payload["run_config"] = run_config.as_dict()
        payload["config_hash"] = run_config.config_hash()
    _write_json(out_dir / "config.json", payload)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def cmd_ingest(args, argv) -> int:
    schema = load_schema(args.schema)
    train = load_split(args.train, schema)
    test = load_split(args.test, schema)
    dev = load_split(args.dev, schema) if args.dev else None
    bundle = DatasetBundle(name=schema.name, schema=schema, train=train,
                           test=test, dev=dev)
    bundle.validate()
    out_dir = Path(args.out)
    save_bundle(bundle, out_dir)
    sizes = {name: len(docs) for name, docs in bundle.splits().items()}
    _write_json(out_dir / "ingest.json",
                {"name": bundle.name, "splits": sizes,
                 "types": list(schema.types)})
    print(f"ingested {bundle.name}: " +
          ", ".join(f"{k}={v}" for k, v in sorted(sizes.items())))
    return 0


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------

def cmd_profile(args, argv) -> int:
    if len(args.bundles) < 2:
        raise ConfigError("profile needs at least 2 bundles for min-max "
                          "normalization")
    run_config = (config_mod.load_run_config(args.config) if args.config
                  else config_mod.RunConfig(seed=0))
    embedder = config_mod.build_embedder(run_config)
    profiles = []
    for bundle_dir in args.bundles:
        bundle = load_dataset(bundle_dir)
        profiles.append(profile_bundle(bundle, embedder))
    profiles = normalize_and_aggregate(profiles)
    out_path = Path(args.out)
    save_profiles(profiles, out_path)
    table = render_difficulty_table(profiles)
    out_path.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


# ---------------------------------------------------------------------------
# reticl-study
# ---------------------------------------------------------------------------

def _independent_rank(entries_scores: list[tuple[float, int, str]], k: int
                      ) -> list[str]:
    """Reference ranking used as an in-run consistency check."""
    order = sorted(entries_scores, key=lambda t: (-t[0], t[1]))[:k]
    return [doc_id for _, _, doc_id in reversed(order)]


def _check_against_oracle(pool, demos: DemoSet, scores: list[float],
                          k: int, exclude_id: str | None,
                          tolerance: float = 1e-9) -> None:
    """In-run consistency check against an independently computed ranking.

    The reference scores may come from a different float path (plain fsum
    cosine vs the vectorized one), so positions are allowed to differ only
    where the reference scores are equal within tolerance.
    """
    triples = [(scores[i], i, e.doc.id) for i, e in enumerate(pool.entries)
               if exclude_id is None or e.doc.id != exclude_id]
    expected = _independent_rank(triples, k)
    got = demos.doc_ids()
    if got == expected:
        return
    by_id = {doc_id: score for score, _, doc_id in triples}
    for got_id, want_id in zip(got, expected):
        if got_id == want_id:
            continue
        if abs(by_id[got_id] - by_id[want_id]) > tolerance:
            raise WorkbenchError(
                f"retrieval self-check failed for {demos.paradigm}: "
                f"{got} != {expected}")


def _cosine_plain(u, v) -> float:
    dot = math.fsum(a * b for a, b in zip(u, v))
    nu = math.sqrt(math.fsum(a * a for a in u))
    nv = math.sqrt(math.fsum(b * b for b in v))
    return dot / (nu * nv) if nu > 0 and nv > 0 else 0.0


def cmd_reticl_study(args, argv) -> int:
    run_config = config_mod.load_run_config(args.config)
    bundle = load_dataset(args.bundle)
    schema = bundle.schema
    paradigms = args.paradigms or list(PARADIGMS)
    if "type_overlap" in paradigms and not args.oracle:
        raise ConfigError(
            "the type_overlap paradigm uses the query's gold types; "
            "acknowledge with --oracle")
    gateway = config_mod.build_gateway(run_config, bundle)
    roles = config_mod.build_roles(run_config, gateway)
    embedder = config_mod.build_embedder(run_config)
    k = args.k or run_config.k

    pool_docs = bundle.dev if bundle.dev else bundle.train
    pool = build_pool(pool_docs, embedder)
    tactic_text = build_task_instruction(schema).text
    queries = bundle.test if not args.limit else bundle.test[:args.limit]
    if not queries:
        raise ConfigError("bundle has no test docs to evaluate")

    out_dir = _resolve_out_dir(args.out, "reticl-study")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = ExperimentReport(command="reticl-study")
    density_demos = retrieve_entity_density(pool, k) if \
        "entity_density" in paradigms else None

    max_prompt_chars = 0
    for paradigm in paradigms:
        predictions: dict[str, frozenset] = {}
        demos_payload: dict[str, list] = {}
        demo_types: dict[str, set[str]] = {}
        for doc in queries:
            if paradigm == "semantic_knn":
                demos = retrieve_semantic_knn(pool, doc.text, k, embedder,
                                              exclude_doc_id=doc.id)
                qv = embed_one(embedder, doc.text)
                plain = [_cosine_plain(qv, e.vector) for e in pool.entries]
                _check_against_oracle(pool, demos, plain, k, doc.id)
            elif paradigm == "type_overlap":
                demos = retrieve_type_overlap(pool, doc.gold, k,
                                              exclude_doc_id=doc.id)
                qtypes = typeset(doc.gold)
                plain = [float(len(qtypes & e.types)) for e in pool.entries]
                _check_against_oracle(pool, demos, plain, k, doc.id)
            else:
                demos = density_demos
            prompt = assemble_prompt(tactic_text, demos, doc.text).render()
            max_prompt_chars = max(max_prompt_chars, len(prompt))
            raw = roles["executor"].ask(prompt, tag=f"reticl-{paradigm}:{doc.id}")
            parsed = parse_entities(raw, schema, ground_in=doc.text)
            predictions[doc.id] = parsed.entities
            demos_payload[doc.id] = [
                {"demo_id": d.id, "score": s, "typeset": sorted(typeset(d.gold))}
                for d, s in demos.demos
            ]
            demo_types[doc.id] = demos.type_union()
        report.reports[paradigm] = score(predictions, queries, schema)
        _write_json(out_dir / f"predictions-{paradigm}.json",
                    _predictions_payload(predictions))
        _write_json(out_dir / f"demos-{paradigm}.json", demos_payload)
        if paradigm == "semantic_knn":
            report.overlap_split = overlap_split_score(
                predictions, queries, demo_types, schema)

    report.provenance = {
        "config_hash": run_config.config_hash(),
        "k": k,
        "n_queries": len(queries),
        "pool_size": len(pool),
        "pool_split": "dev" if bundle.dev else "train",
        "max_prompt_chars": max_prompt_chars,
        "seed": run_config.seed,
    }
    _write_run_config(out_dir, "reticl-study", argv, run_config)
    _write_json(out_dir / "cache_stats.json", gateway.stats())
    _write_json(out_dir / "report.json", report.as_dict())
    print(render_report_table(report.reports))
    if report.overlap_split:
        print(f"\nsemantic_knn overlap split: "
              f"overlap micro={report.overlap_split.report_overlap.micro_f1:.4f} "
              f"({report.overlap_split.n_overlap} docs), no-overlap micro="
              f"{report.overlap_split.report_no_overlap.micro_f1:.4f} "
              f"({report.overlap_split.n_no_overlap} docs)")
    print(f"run dir: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# strategize
# ---------------------------------------------------------------------------

def cmd_strategize(args, argv) -> int:
    run_config = config_mod.load_run_config(args.config)
    bundle = load_dataset(args.bundle)
    gateway = config_mod.build_gateway(run_config, bundle)
    roles = config_mod.build_roles(run_config, gateway)
    d_sub = stratified_subsample(bundle.train, args.subset_frac, run_config.seed)
    strategies = generate_strategies(args.n, roles["strategy_generator"])
    tactic = build_task_instruction(bundle.schema)
    best = select_strategy(strategies, d_sub, tactic, roles["executor"],
                           bundle.schema)
    out_dir = _resolve_out_dir(args.out, "strategize")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_strategies(strategies, best.id, out_dir / "strategies.json")
    _write_run_config(out_dir, "strategize", argv, run_config)
    _write_json(out_dir / "report.json", {
        "command": "strategize",
        "selected": best.id,
        "selected_score": best.score,
        "scores": {s.id: s.score for s in strategies},
        "subset_ids": [d.id for d in d_sub],
        "provenance": {"config_hash": run_config.config_hash(),
                       "seed": run_config.seed},
    })
    _write_json(out_dir / "cache_stats.json", gateway.stats())
    print(f"selected {best.id} (micro_f1={best.score:.4f}) of "
          f"{len(strategies)} strategies; run dir: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------

def _resolve_technique(args, roles, bundle, d_sub) -> GuidingStrategy:
    if args.strategies:
        strategies, selected = load_strategies(args.strategies)
        if selected:
            for s in strategies:
                if s.id == selected:
                    return s
        raise ConfigError(f"{args.strategies}: no selected strategy recorded")
    strategies = generate_strategies(args.n_strategies,
                                     roles["strategy_generator"])
    tactic = build_task_instruction(bundle.schema)
    return select_strategy(strategies, d_sub, tactic, roles["executor"],
                           bundle.schema)


def cmd_refine(args, argv) -> int:
    run_config = config_mod.load_run_config(args.config)
    bundle = load_dataset(args.bundle)
    gateway = config_mod.build_gateway(run_config, bundle)
    roles = config_mod.build_roles(run_config, gateway)
    seed = args.seed if args.seed is not None else run_config.seed
    fir_config = FirConfig(
        epochs=args.epochs or run_config.fir_epochs,
        subset_fraction=args.fraction or run_config.fir_fraction,
        seed=seed,
        selection_mode=args.mode or run_config.fir_mode,
        max_validation_docs=run_config.fir_max_validation_docs,
    )
    d_sub = stratified_subsample(bundle.train, fir_config.subset_fraction, seed,
                                 rounding=fir_config.sample_rounding)
    tactic = build_task_instruction(bundle.schema)
    technique = _resolve_technique(args, roles, bundle, d_sub)
    if args.guideline:
        procedure = AnnotationGuideline.load(args.guideline)
    else:
        procedure = generate_guideline(bundle.schema,
                                       roles["guideline_generator"])
    instruction_set = InstructionSet(tactic=tactic, technique=technique,
                                     procedure=procedure)
    result = run_fir(bundle, instruction_set, fir_config, roles["executor"],
                     roles["reflector"], roles["editor"], d_sub=d_sub)
    out_dir = _resolve_out_dir(args.out, "refine")
    write_fir_run(out_dir, fir_config, result, extra_config={
        "command": "refine", "argv": _strip_out(argv),
        "run_config": run_config.as_dict(),
        "config_hash": run_config.config_hash(),
        "strategy": {"id": technique.id, "text": technique.text},
    })
    _write_json(out_dir / "report.json", {
        "command": "refine",
        "best_epoch": result.best_epoch,
        "final_version": result.final.version,
        "validation": result.state.validation,
        "applied_gradients": len(result.state.gradients),
        "skipped_gradients": result.state.skipped_gradients,
        "provenance": {"config_hash": run_config.config_hash(),
                       "seed": seed},
    })
    _write_json(out_dir / "cache_stats.json", gateway.stats())
    print(f"refined guideline to v{result.final.version} "
          f"(best epoch {result.best_epoch} of {fir_config.epochs}); "
          f"run dir: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# instruct (ablation-variant evaluation on the test split)
# ---------------------------------------------------------------------------

def cmd_instruct(args, argv) -> int:
    run_config = config_mod.load_run_config(args.config)
    bundle = load_dataset(args.bundle)
    schema = bundle.schema
    gateway = config_mod.build_gateway(run_config, bundle)
    roles = config_mod.build_roles(run_config, gateway)
    tactic = build_task_instruction(schema)
    technique = None
    procedure = None
    if args.variant != "base":
        d_sub = stratified_subsample(bundle.train, run_config.fir_fraction,
                                     run_config.seed)
        technique = _resolve_technique(args, roles, bundle, d_sub)
    if args.variant in ("plus_guideline", "full"):
        if args.fir_run:
            procedure = AnnotationGuideline.load(
                Path(args.fir_run) / "guideline_final.json")
        elif args.guideline:
            procedure = AnnotationGuideline.load(args.guideline)
        else:
            procedure = generate_guideline(schema, roles["guideline_generator"])
    instruction_set = InstructionSet(tactic=tactic, technique=technique,
                                     procedure=procedure)
    instruction_text = render_instruction_set(instruction_set, args.variant)
    queries = bundle.test if not args.limit else bundle.test[:args.limit]
    if not queries:
        raise ConfigError("bundle has no test docs to evaluate")
    predictions = extract_over_docs(instruction_text, queries,
                                    roles["executor"], schema,
                                    tag_prefix=f"instruct-{args.variant}")
    report = ExperimentReport(command="instruct")
    report.reports[args.variant] = score(predictions, queries, schema)
    report.provenance = {
        "config_hash": run_config.config_hash(),
        "variant": args.variant,
        "prompt_hash": hashlib.sha256(
            instruction_text.encode("utf-8")).hexdigest()[:16],
        "instruction_chars": len(instruction_text),
        "guideline_version": procedure.version if procedure else None,
        "strategy_id": technique.id if technique else None,
        "n_queries": len(queries),
        "seed": run_config.seed,
    }
    out_dir = _resolve_out_dir(args.out, "instruct")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, "instruct", argv, run_config)
    _write_json(out_dir / "cache_stats.json", gateway.stats())
    _write_json(out_dir / "predictions.json", _predictions_payload(predictions))
    (out_dir / "instruction.txt").write_text(instruction_text + "\n",
                                             encoding="utf-8")
    _write_json(out_dir / "report.json", report.as_dict())
    print(render_report_table(report.reports))
    print(f"run dir: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args, argv) -> int:
    schema = load_schema(args.schema)
    gold = load_split(args.gold, schema)
    predictions = _load_predictions(Path(args.pred))
    for doc in gold:
        predictions.setdefault(doc.id, frozenset())
    report = score(predictions, gold, schema)
    payload = {"command": "evaluate", "report": report.as_dict()}
    tables = {"all": report}
    if args.demos:
        demos_raw = json.loads(Path(args.demos).read_text(encoding="utf-8"))
        demo_types = {
            doc_id: set().union(*(set(d["typeset"]) for d in demos)) if demos
            else set()
            for doc_id, demos in demos_raw.items()
        }
        split = overlap_split_score(predictions, gold, demo_types, schema)
        payload["overlap_split"] = split.as_dict()
        tables["overlap"] = split.report_overlap
        tables["no_overlap"] = split.report_no_overlap
    print(render_report_table(tables))
    if args.out:
        _write_json(Path(args.out), payload)
        print(f"report: {args.out}")
    else:
        print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# correlate
# ---------------------------------------------------------------------------

def compute_delta_f1(results: dict, baseline_map: dict) -> dict[str, dict]:
    """Per-dataset method-minus-baseline gains for macro and micro F1."""
    rows = {}
    for dataset, entry in results.items():
        baseline_name = baseline_map.get(dataset)
        if baseline_name is None:
            raise ConfigError(f"baseline map missing dataset {dataset!r}")
        baselines = entry.get("baselines", {})
        if baseline_name not in baselines:
            raise ConfigError(
                f"dataset {dataset!r} has no baseline {baseline_name!r}")
        method, base = entry["method"], baselines[baseline_name]
        rows[dataset] = {
            "baseline": baseline_name,
            "delta_macro": method["macro"] - base["macro"],
            "delta_micro": method["micro"] - base["micro"],
        }
    return rows


def cmd_correlate(args, argv) -> int:
    profiles = load_profiles(args.difficulty)
    omega = {p.dataset: p.omega for p in profiles if p.omega is not None}
    results = json.loads(Path(args.results).read_text(encoding="utf-8"))
    baseline_map = json.loads(Path(args.baseline_map).read_text(encoding="utf-8"))
    deltas = compute_delta_f1(results, baseline_map)
    datasets = sorted(set(omega) & set(deltas))
    if len(datasets) < 3:
        raise ConfigError(
            f"need >= 3 datasets with both difficulty and results, "
            f"got {len(datasets)}")
    xs = [omega[d] for d in datasets]
    corr = {
        "datasets": datasets,
        "omega": {d: omega[d] for d in datasets},
        "delta_f1": {d: deltas[d] for d in datasets},
        "macro": pearson_r(xs, [deltas[d]["delta_macro"] for d in datasets]).as_dict(),
        "micro": pearson_r(xs, [deltas[d]["delta_micro"] for d in datasets]).as_dict(),
    }
    out_dir = _resolve_out_dir(args.out, "correlate")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, "correlate", argv, None)
    _write_json(out_dir / "correlation.json", corr)
    lines = ["dataset,omega,delta_macro,delta_micro"]
    for d in datasets:
        lines.append(f"{d},{omega[d]},{deltas[d]['delta_macro']},"
                     f"{deltas[d]['delta_micro']}")
    (out_dir / "scatter.csv").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8")
    print(f"macro: r={corr['macro']['r']:.3f} p={corr['macro']['p']:.4f} | "
          f"micro: r={corr['micro']['r']:.3f} p={corr['micro']['p']:.4f} "
          f"(n={len(datasets)})")
    print(f"run dir: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def _substitute_out(argv: list[str], new_out: str) -> list[str]:
    out = list(argv)
    for i, token in enumerate(out):
        if token == "--out" and i + 1 < len(out):
            out[i + 1] = new_out
            return out
        if token.startswith("--out="):
            out[i] = f"--out={new_out}"
            return out
    return out + ["--out", new_out]


def _compare_dirs(a: Path, b: Path) -> list[str]:
    diffs = []
    files_a = {p.relative_to(a) for p in a.rglob("*") if p.is_file()}
    files_b = {p.relative_to(b) for p in b.rglob("*") if p.is_file()}
    for missing in sorted(files_a - files_b):
        diffs.append(f"missing in replay: {missing}")
    for extra in sorted(files_b - files_a):
        diffs.append(f"extra in replay: {extra}")
    for rel in sorted(files_a & files_b):
        if (a / rel).read_bytes() != (b / rel).read_bytes():
            diffs.append(f"content differs: {rel}")
    return diffs


def cmd_replay(args, argv) -> int:
    run_dir = Path(args.run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigError(f"{run_dir} has no config.json to replay")
    recorded = json.loads(config_path.read_text(encoding="utf-8"))
    if "argv" not in recorded:
        raise ConfigError(f"{config_path} does not record the original argv")
    out_dir = Path(args.out) if args.out else run_dir.parent / (run_dir.name
                                                                + "-replay")
    replay_argv = _substitute_out(recorded["argv"], str(out_dir))
    code = main(replay_argv)
    if code != 0:
        print(f"replayed command exited {code}")
        return code
    diffs = _compare_dirs(run_dir, out_dir)
    volatile = ("replay_report.json", "cache_stats.json")
    diffs = [d for d in diffs if not d.endswith(volatile)]
    _write_json(out_dir / "replay_report.json",
                {"source": str(run_dir), "identical": not diffs, "diffs": diffs})
    if diffs:
        print("replay MISMATCH:")
        for d in diffs:
            print(f"  {d}")
        return 1
    print(f"replay identical: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctiner",
        description="Instruction-optimization workbench for CTI NER.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and store a dataset bundle")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--dev")
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("profile", help="compute dataset difficulty profiles")
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("reticl-study",
                       help="run the three retrieval paradigms plus overlap split")
    p.add_argument("--config", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.add_argument("--paradigms", nargs="+", choices=PARADIGMS)
    p.add_argument("--k", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--oracle", action="store_true",
                   help="acknowledge the oracle paradigm uses query gold types")
    p.set_defaults(func=cmd_reticl_study)

    p = sub.add_parser("strategize",
                       help="generate and select a guiding strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.add_argument("--subset-frac", type=float, default=0.01)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_strategize)

    p = sub.add_parser("refine", help="refine guidelines on a training subset")
    p.add_argument("--config", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("best", "last"))
    p.add_argument("--strategies", help="strategies.json from a strategize run")
    p.add_argument("--guideline", help="initial guideline JSON to refine")
    p.add_argument("--n-strategies", type=int, default=10)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("instruct",
                       help="evaluate an instruction variant on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.add_argument("--variant", required=True,
                   choices=("base", "plus_strategy", "plus_guideline", "full"))
    p.add_argument("--strategies")
    p.add_argument("--guideline")
    p.add_argument("--fir-run", help="refine run dir providing the final guideline")
    p.add_argument("--limit", type=int)
    p.add_argument("--n-strategies", type=int, default=10)
    p.set_defaults(func=cmd_instruct)

    p = sub.add_parser("evaluate", help="score a predictions file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--demos", help="demos JSON for the overlap split")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correlate",
                       help="correlate difficulty against F1 gains")
    p.add_argument("--difficulty", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--baseline-map", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("replay", help="re-run a recorded run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ConfigError, ParseError, SchemaViolation, SpanNotFound) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (AuthError, TransportError, EmbeddingServiceError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 4
    except WorkbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
