"""Labeled grounding corpus: loading, gold wiring, and two-stage training.

Corpus entries pair an utterance with per-clause gold structure (figure /
relation / landmark types, action, objectives) and optionally a small map
plus the gold behavior against it.  Training fits the pruning classifiers
first, then the graph factor weights on unpruned word-gated graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from wayfinder.assets import data_path
from wayfinder.config import GroundingTrainConfig
from wayfinder.geometry import Rect
from wayfinder.langparse import Grammar, parse, tokenize
from wayfinder.semmap import MapRegion, SemanticMap
from wayfinder.grounding.graph import (build_annotation_graph,
                                       build_behavior_graph, extract_clauses)
from wayfinder.grounding.model import (GoldMismatchError, GroundingWeights,
                                       TrainReport, train_graph_weights)
from wayfinder.grounding.pruning import full_active_set, train_pruning
from wayfinder.grounding.symbols import Behavior, Symbol, SymbolSpace


@dataclass
class GoldClause:
    figure: Optional[str] = None
    relation: Optional[str] = None
    landmark: Optional[str] = None
    action: Optional[str] = None
    objectives: tuple = ()


@dataclass
class LabeledExample:
    id: str
    text: str
    clauses: list                      # GoldClause per coordinated clause
    map: Optional[SemanticMap] = None
    behaviors: Optional[list] = None   # Behavior per clause, with map


def map_from_json(obj) -> SemanticMap:
    """A fixture map snapshot: rectangles, all visited, robot pose given."""
    regions = []
    for r in obj["regions"]:
        rect = Rect(*r["rect"])
        regions.append(MapRegion(int(r["id"]), r["type"],
                                 r.get("status", "visited"), rect,
                                 tuple(rect.center), rect.circumradius))
    robot = np.asarray(obj["robot"], float)
    cur = None
    for r in regions:
        if r.rect.contains(robot[:2]):
            cur = r.id
            break
    if cur is None:
        cur = regions[0].id
    return SemanticMap(regions, [robot], [cur], [], step=0)


def load_corpus(path=None) -> list:
    import json
    path = path or data_path("corpus_grounding.json")
    with open(path) as fh:
        raw = json.load(fh)
    out = []
    for e in raw["examples"]:
        clauses = [GoldClause(c.get("figure"), c.get("relation"),
                              c.get("landmark"), c.get("action"),
                              tuple(c.get("objectives", ())))
                   for c in e["clauses"]]
        m = map_from_json(e["map"]) if e.get("map") else None
        behaviors = None
        if e.get("behaviors"):
            behaviors = [Behavior.from_json(b) for b in e["behaviors"]]
        out.append(LabeledExample(e["id"], e["text"], clauses, m, behaviors))
    return out


# -- gold wiring --------------------------------------------------------------

def pruning_gold(ex: LabeledExample) -> dict:
    gold = {"fig": set(), "lm": set(), "rel": set(), "act": set(), "obj": set()}
    for c in ex.clauses:
        if c.figure:
            gold["fig"].add(c.figure)
        if c.landmark:
            gold["lm"].add(c.landmark)
        if c.relation:
            gold["rel"].add(c.relation)
        if c.action:
            gold["act"].add(c.action)
        gold["obj"].update(c.objectives)
    return gold


def _index_of(node, sym, ctx):
    try:
        return node.candidates.index(sym)
    except ValueError:
        raise GoldMismatchError(
            f"{ctx}: gold symbol {sym} missing from node {node.id} "
            f"({node.role}) candidates {[str(c) for c in node.candidates]}")


def set_annotation_gold(graph, clause: GoldClause, ctx=""):
    """Write gold candidate-index sets onto the graph nodes in place."""
    root_syms = []
    if clause.figure:
        root_syms.append(Symbol.object_type(clause.figure))
        if clause.relation:
            root_syms.append(Symbol.typed_relation(
                clause.figure, clause.relation, clause.landmark))
    elif clause.relation and clause.landmark:
        root_syms.append(Symbol.subspace(clause.relation, clause.landmark))
    for n in graph.nodes:
        if n.role == "root":
            n.gold = frozenset(_index_of(n, s, ctx) for s in root_syms)
        elif n.role == "rel":
            if clause.relation and n.relation == clause.relation \
                    and clause.landmark:
                sym = Symbol.subspace(clause.relation, clause.landmark)
                n.gold = frozenset({_index_of(n, sym, ctx)})
            else:
                n.gold = frozenset()
        elif n.role == "landmark":
            parent = graph.nodes[n.parent]
            if parent.gold:
                sym = Symbol.object_type(clause.landmark)
                n.gold = frozenset({_index_of(n, sym, ctx)})
            else:
                n.gold = frozenset()
        else:
            n.gold = frozenset()
    return graph


def set_behavior_gold(graph, behavior: Behavior, ctx=""):
    goal = behavior.goal_symbol()
    root_sym = Symbol.action(behavior.action, goal)
    constraint_syms = {Symbol.map_subspace(r, rid)
                       for r, rid in behavior.constraints}
    rel_syms = set(constraint_syms)
    if goal is not None and goal.kind == "obj_subspace":
        rel_syms.add(goal)
    lm_regions = {s.region for s in rel_syms}
    for n in graph.nodes:
        if n.role == "root":
            n.gold = frozenset({_index_of(n, root_sym, ctx)})
        elif n.role == "figure":
            if goal is not None and goal.kind == "object":
                n.gold = frozenset({_index_of(n, goal, ctx)})
            else:
                n.gold = frozenset()
        elif n.role == "rel":
            hits = {i for i, c in enumerate(n.candidates) if c in rel_syms}
            n.gold = frozenset(hits)
        elif n.role == "landmark":
            hits = {i for i, c in enumerate(n.candidates)
                    if c.region in lm_regions}
            parent = graph.nodes[n.parent]
            n.gold = frozenset(hits) if parent.gold else frozenset()
        elif n.role == "objectives":
            n.gold = frozenset(
                i for i, c in enumerate(n.candidates)
                if c.name in behavior.objectives)
    return graph


# -- training -----------------------------------------------------------------

@dataclass
class TrainedGrounding:
    weights: GroundingWeights
    report: TrainReport
    pruning_report: dict


def train_weights(corpus, space: Optional[SymbolSpace] = None,
                  config: Optional[GroundingTrainConfig] = None,
                  grammar: Optional[Grammar] = None,
                  relations=None) -> TrainedGrounding:
    """Both stages from a labeled corpus; deterministic for a fixed order."""
    space = space or SymbolSpace.default()
    config = config or GroundingTrainConfig()
    grammar = grammar or Grammar.load(data_path("grammar.json"))

    trees = {}
    for ex in corpus:
        trees[ex.id] = parse(tokenize(ex.text), grammar)

    prune_examples = [(trees[ex.id], pruning_gold(ex)) for ex in corpus]
    pruning = train_pruning(prune_examples, space)

    active = full_active_set(space)
    examples = []
    for ex in corpus:
        tree = trees[ex.id]
        clauses = extract_clauses(tree)
        if len(clauses) != len(ex.clauses):
            raise GoldMismatchError(
                f"{ex.id}: {len(clauses)} clauses parsed but "
                f"{len(ex.clauses)} gold clauses given")
        for ci, gold in enumerate(ex.clauses):
            g = build_annotation_graph(tree, active, space, clause_index=ci)
            set_annotation_gold(g, gold, ctx=ex.id)
            examples.append((g, None))
            if ex.map is not None and ex.behaviors is not None:
                bg = build_behavior_graph(tree, ex.map, active, space,
                                          clause_index=ci)
                set_behavior_gold(bg, ex.behaviors[ci], ctx=ex.id)
                examples.append((bg, None))

    weights, report = train_graph_weights(
        examples, l2=config.l2, lr=config.learning_rate,
        epochs=config.epochs, relations=relations)
    weights.pruning = pruning

    # pruning soundness on the training set: how often gold symbols survive
    kept, total = 0, 0
    from wayfinder.grounding.pruning import prune_symbols
    for ex in corpus:
        act = prune_symbols(trees[ex.id], space, pruning)
        gold = pruning_gold(ex)
        for head, names in gold.items():
            for name in names:
                total += 1
                pool = {"fig": act.fig_types, "lm": act.lm_types,
                        "rel": act.relations, "act": act.actions,
                        "obj": act.objectives}[head]
                kept += name in pool
    soundness = kept / total if total else 1.0
    return TrainedGrounding(weights, report,
                            {"soundness": soundness, "gold_kept": kept,
                             "gold_total": total})
