"""Grounding-graph construction, inference, and training tests.

The MAP decoder is checked against brute-force enumeration over all
correspondence assignments on restricted inventories, with dyadic weights so
floating-point sums are exact and tie-breaks are exercised honestly.
"""

import itertools
import json

import numpy as np
import pytest

from wayfinder.assets import data_path
from wayfinder.langparse import Grammar, parse, tokenize
from wayfinder.grounding import (Annotation, Behavior, GroundingWeights,
                                 Symbol, SymbolSpace, TemplateMismatchError,
                                 behavior_candidate_universe,
                                 build_annotation_graph, build_behavior_graph,
                                 extract_clauses, full_active_set,
                                 infer_annotations, infer_behavior,
                                 load_corpus, train_weights)
from wayfinder.grounding.corpus import (map_from_json, pruning_gold,
                                        set_annotation_gold)
from wayfinder.grounding.model import (GoldMismatchError, ScoredGraph,
                                       map_decode, marginals,
                                       train_graph_weights)
from wayfinder.grounding.pruning import prune_symbols
from wayfinder.grounding.pipeline import Grounder


@pytest.fixture(scope="module")
def grammar():
    return Grammar.load(data_path("grammar.json"))


@pytest.fixture(scope="module")
def space():
    return SymbolSpace.default()


@pytest.fixture(scope="module")
def corpus():
    return load_corpus()


@pytest.fixture(scope="module")
def trained(corpus):
    return train_weights(corpus)


FIG4_MAP = {
    "robot": [0.5, 0.0, 0.0],
    "regions": [
        {"id": 1, "type": "kitchen", "rect": [12, -2, 16, 2]},
        {"id": 2, "type": "hallway", "rect": [0, -1, 12, 1]},
        {"id": 3, "type": "elevator lobby", "rect": [-4, -2, 0, 2]},
        {"id": 4, "type": "lab", "rect": [4, 2, 8, 6]},
    ],
}

TWO_REGION_MAP = {
    "robot": [0.5, 0.0, 0.0],
    "regions": [
        {"id": 1, "type": "hallway", "rect": [0, -1, 8, 1]},
        {"id": 2, "type": "kitchen", "rect": [8, -2, 12, 2]},
    ],
}


def _tree(text, grammar):
    return parse(tokenize(text), grammar)


# -- candidate counting oracles ----------------------------------------------

def test_phi_count_is_sum_of_candidates(grammar, space):
    active = full_active_set(space)
    texts = [
        "go to the kitchen that is down the hall",
        "walk down the hall to the kitchen",
        "go down the hall",
        "go to the end of the hallway",
        "go to the bathroom that is across from the kitchen",
    ]
    for text in texts:
        g = build_annotation_graph(_tree(text, grammar), active, space)
        assert g.num_phi == sum(len(n.candidates) for n in g.nodes)
        assert g.num_phi > 0


def test_behavior_universe_two_object_map(space):
    m = map_from_json(TWO_REGION_MAP)
    syms = behavior_candidate_universe(m, space)
    # actions x (objects + subspaces) + objectives + constraint subspaces
    n_goal = 2 + 12 * 2
    assert len(syms) == 4 * n_goal + 3 + 12 * 2
    assert len(syms) == 131
    assert len(set(map(str, syms))) == len(syms)


def test_behavior_universe_empty_map(space):
    syms = behavior_candidate_universe(None, space)
    names = sorted(map(str, syms))
    assert names == ["directly", "quickly", "safely", "stop"]


def test_fig4_graph_candidates(grammar, space):
    active = full_active_set(space)
    m = map_from_json(FIG4_MAP)
    tree = _tree("go to the kitchen that is down the hall", grammar)
    g = build_behavior_graph(tree, m, active, space)
    per_node = {n.role: [str(c) for c in n.candidates] for n in g.nodes}
    assert per_node["root"] == ["navigate(o1)"]
    assert per_node["figure"] == ["o1"]
    assert per_node["rel"] == ["down(o2)"]
    assert per_node["landmark"] == ["o2"]


# -- enumeration oracle -------------------------------------------------------

def _preorder(g):
    out = []

    def walk(nid):
        out.append(g.nodes[nid])
        for cid in g.nodes[nid].children:
            walk(cid)

    walk(g.root.id)
    return out


def _enumerate_map(sg):
    """Argmax via exhaustive enumeration with the documented tie order."""
    g = sg.graph
    order = _preorder(g)
    best_key, best_assignment = None, None
    for states in itertools.product(*[sg.node_states(n) for n in order]):
        assignment = {n.id: s for n, s in zip(order, states)}
        score = sg.assignment_score(assignment)
        trues = [sg.true_indices(n, assignment[n.id]) for n in order]
        pop = sum(len(t) for t in trues)
        key = (-score, pop, tuple(trues))
        if best_key is None or key < best_key:
            best_key, best_assignment = key, assignment
    return best_assignment, -best_key[0]


def _dyadic_weights(sg, rng, include=()):
    keys = set(include)
    for f in sg.cand_feats.values():
        keys.update(f)
    grid = np.arange(-8, 9) * 0.25
    w = {k: float(rng.choice(grid)) for k in sorted(keys, key=str)}
    return w


ORACLE_TEXTS = [
    "go to the kitchen that is down the hall",
    "walk down the hall to the kitchen",
    "go down the hall",
    "go to the kitchen",
    "go to the kitchen near the hall",
]


@pytest.mark.parametrize("text", ORACLE_TEXTS)
def test_annotation_map_matches_enumeration(text, grammar, space):
    sub = space.restricted(["kitchen", "hallway"], ["down", "near"])
    active = full_active_set(sub)
    g = build_annotation_graph(_tree(text, grammar), active, sub)
    assert 0 < g.num_phi <= 8
    weights = GroundingWeights()
    sg = ScoredGraph(g, weights)
    rng = np.random.default_rng(11)
    pair_keys = [("match",), ("clash",), ("orphan",)]
    for trial in range(30):
        w = _dyadic_weights(sg, rng, include=pair_keys)
        sg.rescore(w)
        got, got_score = map_decode(sg)
        want, want_score = _enumerate_map(sg)
        assert got == want, f"trial {trial}: {got} != {want}"
        assert got_score == want_score


def test_behavior_map_matches_enumeration(grammar, space):
    active = full_active_set(space)
    m = map_from_json(TWO_REGION_MAP)
    tree = _tree("go to the kitchen that is down the hall", grammar)
    g = build_behavior_graph(tree, m, active, space)
    weights = GroundingWeights()
    sg = ScoredGraph(g, weights, relations=None)
    rng = np.random.default_rng(7)
    pair_keys = [("bmatch",), ("bclash",), ("borphan",)]
    for trial in range(30):
        w = _dyadic_weights(sg, rng, include=pair_keys)
        w[("geo",)] = 0.0
        sg.rescore(w)
        got, got_score = map_decode(sg)
        want, want_score = _enumerate_map(sg)
        assert got == want, f"trial {trial}"
        assert got_score == want_score


def test_zero_weights_prefer_all_false(grammar, space):
    active = full_active_set(space)
    g = build_annotation_graph(_tree("go to the kitchen", grammar),
                               active, space)
    res = infer_annotations(g, GroundingWeights())
    assert res.root_symbols == []
    assert res.annotations == []
    assert all(v == [] for v in res.assignment.values())


def test_logz_bounds_map_score(grammar, space):
    active = full_active_set(space)
    g = build_annotation_graph(
        _tree("go to the kitchen that is down the hall", grammar),
        active, space)
    sg = ScoredGraph(g, GroundingWeights())
    rng = np.random.default_rng(3)
    w = _dyadic_weights(sg, rng, include=[("match",), ("clash",)])
    sg.rescore(w)
    _, score = map_decode(sg)
    logz, node_marg, _ = marginals(sg)
    assert logz >= score - 1e-12
    for nid, tbl in node_marg.items():
        assert abs(sum(tbl.values()) - 1.0) < 1e-9


# -- invariances --------------------------------------------------------------

def test_region_order_invariance(grammar, space, trained):
    g = Grounder(trained.weights)
    gu = g.annotate("go to the kitchen that is down the hall")
    m1 = map_from_json(FIG4_MAP)
    flipped = dict(FIG4_MAP)
    flipped["regions"] = list(reversed(FIG4_MAP["regions"]))
    m2 = map_from_json(flipped)
    b1 = g.behave(gu, m1)
    b2 = g.behave(gu, m2)
    assert b1.behavior == b2.behavior
    assert b1.score == pytest.approx(b2.score, abs=1e-9)


def test_empty_active_set_has_no_candidates(grammar, space):
    from wayfinder.grounding.pruning import ActiveSymbolSet
    empty = ActiveSymbolSet(set(), set(), set(), set(), set(), space)
    g = build_annotation_graph(
        _tree("go to the kitchen that is down the hall", grammar),
        empty, space)
    assert g.num_phi == 0
    res = infer_annotations(g, GroundingWeights())
    assert res.annotations == []


def test_template_mismatch_raises(grammar, space):
    active = full_active_set(space)
    g = build_annotation_graph(_tree("go to the kitchen", grammar),
                               active, space)
    w = GroundingWeights(templates={"annotation": "other-v9",
                                    "behavior": "other-v9"})
    with pytest.raises(TemplateMismatchError):
        infer_annotations(g, w)


def test_gold_mismatch_raises(grammar, space):
    from wayfinder.grounding.corpus import GoldClause
    active = full_active_set(space)
    g = build_annotation_graph(_tree("go to the kitchen", grammar),
                               active, space)
    bad = GoldClause(figure="office", action="navigate")
    with pytest.raises(GoldMismatchError):
        set_annotation_gold(g, bad, ctx="test")


# -- training -----------------------------------------------------------------

def test_training_objective_monotone_small_steps(grammar, space):
    sub_corpus = load_corpus()[:6]
    active = full_active_set(space)
    examples = []
    for ex in sub_corpus:
        tree = _tree(ex.text, grammar)
        for ci, gold in enumerate(ex.clauses):
            g = build_annotation_graph(tree, active, space, clause_index=ci)
            set_annotation_gold(g, gold, ctx=ex.id)
            examples.append((g, None))
    _, report = train_graph_weights(examples, l2=0.0, lr=0.05, epochs=40)
    diffs = np.diff(report.objective)
    assert np.all(diffs >= -1e-9)


def test_training_memorizes_small_corpus(grammar, space):
    sub_corpus = load_corpus()[:10]
    active = full_active_set(space)
    examples = []
    for ex in sub_corpus:
        tree = _tree(ex.text, grammar)
        for ci, gold in enumerate(ex.clauses):
            g = build_annotation_graph(tree, active, space, clause_index=ci)
            set_annotation_gold(g, gold, ctx=ex.id)
            examples.append((g, None))
    _, report = train_graph_weights(examples, l2=0.01, lr=0.5, epochs=120)
    assert report.map_accuracy == 1.0


def test_training_is_deterministic(corpus):
    a = train_weights(corpus[:8])
    b = train_weights(corpus[:8])
    assert a.weights.to_json() == b.weights.to_json()


def test_full_training_map_accuracy(trained):
    assert trained.report.map_accuracy >= 0.95
    assert trained.report.objective[-1] > trained.report.objective[0]


def test_pruning_soundness_on_training_corpus(trained, corpus, grammar, space):
    kept, total = trained.pruning_report["gold_kept"], \
        trained.pruning_report["gold_total"]
    assert total > 100
    assert kept / total >= 0.95


# -- published-example fidelity ----------------------------------------------

def test_flagship_active_set(trained, grammar, space):
    tree = _tree("go to the kitchen that is down the hall", grammar)
    act = prune_symbols(tree, space, trained.weights.pruning)
    assert act.fig_types == {"kitchen"}
    assert act.lm_types == {"hallway"}
    assert act.relations == {"down"}
    syms = {str(s) for s in act.annotation_symbols()}
    assert syms == {"kitchen", "hallway", "down(hallway)",
                    "kitchen(down(hallway))"}


def test_flagship_root_annotations(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("go to the kitchen that is down the hall")
    res = gu.annotations[0]
    assert [str(s) for s in res.root_symbols] == \
        ["kitchen", "kitchen(down(hallway))"]
    assert res.annotations == [Annotation("kitchen", "down", "hallway")]
    assert all(v > 0 for v in res.log_odds.values())


def test_fig4_behavior(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("go to the kitchen that is down the hall")
    m = map_from_json(FIG4_MAP)
    res = g.behave(gu, m)
    assert res.behavior.action == "navigate"
    assert res.behavior.goal_region == 1
    assert res.behavior.goal_relation is None
    assert res.behavior.constraints == (("down", 2),)


def test_subspace_goal_when_goal_type_unseen(trained):
    # no kitchen region yet: the goal falls back to the subspace down(hall)
    g = Grounder(trained.weights)
    gu = g.annotate("go to the kitchen that is down the hall")
    m = map_from_json({"robot": [0.5, 0, 0], "regions": [
        {"id": 1, "type": "hallway", "rect": [0, -1, 12, 1]}]})
    res = g.behave(gu, m)
    assert res.behavior.action == "navigate"
    assert res.behavior.goal_region == 1
    assert res.behavior.goal_relation == "down"


def test_stop_plain_has_no_goal(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("stop")
    m = map_from_json(TWO_REGION_MAP)
    res = g.behave(gu, m)
    assert res.behavior == Behavior("stop")


def test_stop_with_location_keeps_goal(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("stop at the kitchen")
    m = map_from_json(TWO_REGION_MAP)
    res = g.behave(gu, m)
    assert res.behavior.action == "stop"
    assert res.behavior.goal_region == 2


def test_multi_clause_sequence(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("go to the kitchen and stop")
    assert gu.num_clauses == 2
    m = map_from_json(TWO_REGION_MAP)
    first = g.behave(gu, m, clause_index=0)
    second = g.behave(gu, m, clause_index=1)
    assert first.behavior.action == "navigate"
    assert first.behavior.goal_region == 2
    assert second.behavior == Behavior("stop")


def test_turn_left_at_kitchen(trained):
    g = Grounder(trained.weights)
    gu = g.annotate("turn left at the kitchen")
    m = map_from_json(TWO_REGION_MAP)
    res = g.behave(gu, m)
    assert res.behavior.action == "navigate"
    assert res.behavior.goal_region == 2
    assert res.behavior.goal_relation == "left"


def test_weights_json_roundtrip(trained, space):
    blob = json.dumps(trained.weights.to_json())
    back = GroundingWeights.from_json(json.loads(blob), space)
    g1 = Grounder(trained.weights)
    g2 = Grounder(back)
    for text in ["go to the kitchen that is down the hall",
                 "walk past the restroom", "stop"]:
        r1 = g1.annotate(text)
        r2 = g2.annotate(text)
        assert [str(s) for s in r1.annotations[0].root_symbols] == \
            [str(s) for s in r2.annotations[0].root_symbols]
