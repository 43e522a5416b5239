"""Instruction-optimization workbench for LLM-based CTI NER."""

__version__ = "0.1.0"

from .corpus import (AnnotatedDoc, DatasetBundle, EntityMention, LabelSchema,
                     entity_set, load_dataset, stratified_subsample, typeset)
from .metrics import EvalReport, overlap_split_score, pearson_r, score
from .retrieval import (DemoSet, EmbeddedPool, assemble_prompt, build_pool,
                        retrieve_entity_density, retrieve_semantic_knn,
                        retrieve_type_overlap)
from .gateway import ChatRequest, LlmGateway, MockScript, parse_entities
from .instruction import (AnnotationGuideline, GuidingStrategy, InstructionSet,
                          TaskInstruction, generate_guideline,
                          generate_strategies, render_instruction_set,
                          select_strategy)
from .fir import FirConfig, SemanticGradient, apply_gradient, error_signal, run_fir
from .difficulty import DifficultyProfile, gini, normalize_and_aggregate

__all__ = [
    "AnnotatedDoc", "AnnotationGuideline", "ChatRequest", "DatasetBundle",
    "DemoSet", "DifficultyProfile", "EmbeddedPool", "EntityMention",
    "EvalReport", "FirConfig", "GuidingStrategy", "InstructionSet",
    "LabelSchema", "LlmGateway", "MockScript", "SemanticGradient",
    "TaskInstruction", "apply_gradient", "assemble_prompt", "build_pool",
    "entity_set", "error_signal", "generate_guideline", "generate_strategies",
    "gini", "load_dataset", "normalize_and_aggregate", "overlap_split_score",
    "parse_entities", "pearson_r", "render_instruction_set",
    "retrieve_entity_density", "retrieve_semantic_knn", "retrieve_type_overlap",
    "run_fir", "score", "select_strategy", "stratified_subsample", "typeset",
]
