from wayfinder.grounding.symbols import (
    Annotation, Behavior, Symbol, SymbolSpace, parse_symbol,
)
from wayfinder.grounding.pruning import (
    ActiveSymbolSet, PruningModel, full_active_set, prune_symbols, train_pruning,
)
from wayfinder.grounding.graph import (
    GroundingGraph, behavior_candidate_universe, build_annotation_graph,
    build_behavior_graph, extract_clauses,
)
from wayfinder.grounding.model import (
    AnnotationResult, BehaviorResult, GroundingWeights, TemplateMismatchError,
    infer_annotations, infer_behavior,
)
from wayfinder.grounding.corpus import (
    LabeledExample, TrainedGrounding, load_corpus, train_weights,
)
from wayfinder.grounding.pipeline import GroundedUtterance, Grounder

__all__ = [
    "Annotation", "Behavior", "Symbol", "SymbolSpace", "parse_symbol",
    "ActiveSymbolSet", "PruningModel", "full_active_set", "prune_symbols",
    "train_pruning",
    "GroundingGraph", "behavior_candidate_universe", "build_annotation_graph",
    "build_behavior_graph", "extract_clauses",
    "AnnotationResult", "BehaviorResult", "GroundingWeights",
    "TemplateMismatchError", "infer_annotations", "infer_behavior",
    "LabeledExample", "TrainedGrounding", "load_corpus", "train_weights",
    "GroundedUtterance", "Grounder",
]
