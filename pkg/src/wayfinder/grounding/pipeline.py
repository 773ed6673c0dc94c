"""End-to-end grounding pipeline: parse, prune, annotate, behave."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from wayfinder.assets import data_path
from wayfinder.langparse import Grammar, ParseTree, parse, tokenize
from wayfinder.relations import RelationLibrary
from wayfinder.grounding.graph import (build_annotation_graph,
                                       build_behavior_graph, extract_clauses)
from wayfinder.grounding.model import (GroundingWeights, infer_annotations,
                                       infer_behavior)
from wayfinder.grounding.pruning import full_active_set, prune_symbols
from wayfinder.grounding.symbols import SymbolSpace


@dataclass
class GroundedUtterance:
    text: str
    tree: ParseTree
    active: object                    # ActiveSymbolSet
    annotations: list                 # AnnotationResult per clause
    num_clauses: int


class Grounder:
    """Bundles grammar, symbol space, trained weights, and relation models."""

    def __init__(self, weights: GroundingWeights,
                 grammar: Optional[Grammar] = None,
                 space: Optional[SymbolSpace] = None,
                 relations: Optional[RelationLibrary] = None):
        self.weights = weights
        self.grammar = grammar or Grammar.load(data_path("grammar.json"))
        self.space = space or SymbolSpace.default()
        self.relations = relations or RelationLibrary.default()

    def parse(self, text) -> ParseTree:
        return parse(tokenize(text), self.grammar)

    def active_set(self, tree):
        if self.weights.pruning is None:
            return full_active_set(self.space)
        return prune_symbols(tree, self.space, self.weights.pruning)

    def annotate(self, text) -> GroundedUtterance:
        """Parse and ground the environment annotations of every clause."""
        tree = self.parse(text)
        active = self.active_set(tree)
        n = len(extract_clauses(tree))
        results = []
        for ci in range(n):
            g = build_annotation_graph(tree, active, self.space,
                                       clause_index=ci)
            results.append(infer_annotations(g, self.weights))
        return GroundedUtterance(text, tree, active, results, n)

    def behave(self, grounded: GroundedUtterance, map_estimate,
               clause_index=0):
        """Ground one clause's behavior against a map estimate."""
        g = build_behavior_graph(grounded.tree, map_estimate, grounded.active,
                                 self.space, clause_index=clause_index)
        return infer_behavior(g, self.weights, self.relations)
