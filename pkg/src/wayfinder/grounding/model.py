"""Log-linear scoring, exact MAP inference, and training for grounding graphs.

Factors are unary per (node, candidate, phi=true) with lexical and class
features, and pairwise per tree edge with structural-consistency counts plus
a real-valued geometric-satisfaction feature on behavior graphs.  MAP is
exact max-product over the tree; ties resolve to fewer true correspondences
first, then the lexicographically smallest true-symbol set in node order.
Training maximizes L2-regularized conditional log-likelihood of the gold
assignments with tree sum-product marginals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from wayfinder.geometry import Rect
from wayfinder.grounding.graph import (ANNOTATION_TEMPLATE, BEHAVIOR_TEMPLATE,
                                       GroundingGraph)
from wayfinder.grounding.pruning import PruningModel
from wayfinder.grounding.symbols import Annotation, Behavior, Symbol
from wayfinder.relations import RelationLibrary


class TemplateMismatchError(ValueError):
    """Weights were trained against a different feature template."""


class TrainingDivergedError(RuntimeError):
    pass


class GoldMismatchError(ValueError):
    """A gold symbol is missing from the candidate set of its node."""


# -- feature extraction -------------------------------------------------------

def symbol_parts(sym: Symbol, region_types=None):
    """Generalizing part keys for a candidate symbol."""
    if sym.kind == "type":
        return (("fig", sym.name),)
    if sym.kind == "subspace":
        return (("rel", sym.relation), ("sslm", sym.landmark))
    if sym.kind == "typed_relation":
        return (("fig", sym.name), ("trel", sym.relation),
                ("trlm", sym.landmark))
    if sym.kind == "object":
        rt = region_types.get(sym.region, "?") if region_types else "?"
        return (("obj", rt),)
    if sym.kind == "obj_subspace":
        rt = region_types.get(sym.region, "?") if region_types else "?"
        return (("rel", sym.relation), ("sslm", rt))
    if sym.kind == "action":
        form = "none"
        if sym.goal is not None:
            form = "object" if sym.goal.kind == "object" else "subspace"
        return (("act", sym.name), ("goalform", form))
    return (("objv", sym.name),)


def unary_features(node, sym: Symbol, region_types=None) -> dict:
    feats = {}
    parts = symbol_parts(sym, region_types)
    for pk in parts:
        feats[("b", pk)] = feats.get(("b", pk), 0.0) + 1.0
        for w in node.words:
            key = ("w", w, pk)
            feats[key] = feats.get(key, 0.0) + 1.0
    feats[("cls", sym.kind)] = 1.0
    return feats


def _goal_of(sym: Symbol):
    return sym.goal if sym.kind == "action" else None


def pair_relation(parent_sym: Symbol, child_sym: Symbol, child_role: str,
                  kind: str) -> str:
    """match / clash / neutral for a co-true candidate pair on an edge."""
    p, c = parent_sym, child_sym
    if kind == "annotation":
        if child_role == "landmark":
            # parent is a subspace relation(l), child a plain type
            if p.kind == "subspace":
                return "match" if p.landmark == c.name else "clash"
            return "neutral"
        if child_role == "rel":
            if p.kind == "typed_relation" and c.kind == "subspace":
                same = (p.relation, p.landmark) == (c.relation, c.landmark)
                return "match" if same else "neutral"
            if p.kind == "subspace" and c.kind == "subspace":
                return "match" if p == c else "neutral"
            return "neutral"
        return "neutral"
    # behavior graphs
    if child_role == "figure":
        g = _goal_of(p)
        if g is None:
            return "clash"
        return "match" if g == c else "clash"
    if child_role == "rel":
        g = _goal_of(p)
        if g is not None and g == c:
            return "match"
        return "neutral"          # co-true relational phrases become constraints
    if child_role == "landmark":
        if p.kind == "obj_subspace" and c.kind == "object":
            return "match" if p.region == c.region else "clash"
        return "neutral"
    return "neutral"


_REL_LIB_CACHE = {}


def _geo_value(graph: GroundingGraph, parent_sym, child_sym, relations):
    """Constraint satisfaction of an object goal under a subspace candidate."""
    g = _goal_of(parent_sym)
    if g is None or g.kind != "object" or child_sym.kind != "obj_subspace":
        return 0.0
    m = graph.context
    if m is None:
        return 0.0
    goal = m.region_by_id(g.region)
    lm = m.region_by_id(child_sym.region)
    if goal is None or lm is None or goal.id == lm.id:
        return 0.0
    try:
        model = relations[child_sym.relation]
        dens = model.constraint(lm.geom(), tuple(m.robot_pose))
        rect = goal.rect
        if rect is None:
            r = goal.radius / math.sqrt(2.0)
            c = goal.center
            rect = Rect(c[0] - r, c[1] - r, c[0] + r, c[1] + r)
        elif not isinstance(rect, Rect):
            rect = Rect(*rect)
        return float(dens.mass_in_rect(rect))
    except Exception:
        return 0.0


# -- scored graphs ------------------------------------------------------------

PAIR_KEYS = {
    "annotation": {"match": ("match",), "clash": ("clash",),
                   "orphan": ("orphan",)},
    "behavior": {"match": ("bmatch",), "clash": ("bclash",),
                 "orphan": ("borphan",)},
}
GEO_KEY = ("geo",)


class ScoredGraph:
    """Per-candidate scores and per-edge pair tables for one graph.

    Structural caches (features, pair classification, geometry) are built
    once; rescore() refreshes the weight-dependent parts, which training
    calls every epoch.
    """

    def __init__(self, graph: GroundingGraph, weights: "GroundingWeights",
                 relations: Optional[RelationLibrary] = None):
        if graph.template not in (weights.templates.get("annotation"),
                                  weights.templates.get("behavior")):
            raise TemplateMismatchError(
                f"graph template {graph.template!r} not covered by weights "
                f"templates {sorted(weights.templates.values())!r}")
        self.graph = graph
        self.relations = relations
        region_types = None
        if graph.context is not None:
            region_types = {rid: rt for rid, rt in graph.context.objects()}
        self.cand_feats = {}
        for n in graph.nodes:
            for i, sym in enumerate(n.candidates):
                self.cand_feats[(n.id, i)] = unary_features(
                    n, sym, region_types)
        self.keys = PAIR_KEYS[graph.kind]
        # per-edge candidate pair classification
        self.pair_rel = {}
        self.pair_geo = {}
        for n in graph.nodes:
            if n.parent is None or n.role == "objectives":
                continue
            parent = graph.nodes[n.parent]
            for pi, ps in enumerate(parent.candidates):
                for ci, cs in enumerate(n.candidates):
                    self.pair_rel[(n.id, pi, ci)] = pair_relation(
                        ps, cs, n.role, graph.kind)
                    if graph.kind == "behavior" and n.role == "rel" \
                            and relations is not None:
                        self.pair_geo[(n.id, pi, ci)] = _geo_value(
                            graph, ps, cs, relations)
        self.rescore(weights.w)

    def rescore(self, w: dict):
        self.cand_score = {
            key: sum(w.get(k, 0.0) * v for k, v in sorted(f.items()))
            for key, f in self.cand_feats.items()}
        self.w_match = w.get(self.keys["match"], 0.0)
        self.w_clash = w.get(self.keys["clash"], 0.0)
        self.w_orphan = w.get(self.keys["orphan"], 0.0)
        self.w_geo = w.get(GEO_KEY, 0.0)

    # states: bitmask int, or candidate index for exactly-one nodes
    def node_states(self, node):
        if node.exactly_one:
            return range(len(node.candidates))
        return range(1 << len(node.candidates))

    def true_indices(self, node, state):
        if node.exactly_one:
            return (state,)
        return tuple(i for i in range(len(node.candidates))
                     if state >> i & 1)

    def unary_score(self, node, state):
        return sum(self.cand_score[(node.id, i)]
                   for i in self.true_indices(node, state))

    def pair_score(self, child, p_state, c_state):
        if child.role == "objectives":
            return 0.0
        parent = self.graph.nodes[child.parent]
        pt = self.true_indices(parent, p_state)
        ct = self.true_indices(child, c_state)
        s = 0.0
        for ci in ct:
            for pi in pt:
                rel = self.pair_rel[(child.id, pi, ci)]
                if rel == "match":
                    s += self.w_match
                elif rel == "clash":
                    s += self.w_clash
                if self.w_geo:
                    s += self.w_geo * self.pair_geo.get((child.id, pi, ci), 0.0)
        if ct and not pt:
            s += self.w_orphan
        return s

    def pair_features(self, child, p_state, c_state) -> dict:
        if child.role == "objectives":
            return {}
        parent = self.graph.nodes[child.parent]
        pt = self.true_indices(parent, p_state)
        ct = self.true_indices(child, c_state)
        f = {}

        def bump(key, v=1.0):
            f[key] = f.get(key, 0.0) + v

        for ci in ct:
            for pi in pt:
                rel = self.pair_rel[(child.id, pi, ci)]
                if rel == "match":
                    bump(self.keys["match"])
                elif rel == "clash":
                    bump(self.keys["clash"])
                g = self.pair_geo.get((child.id, pi, ci), 0.0)
                if g:
                    bump(GEO_KEY, g)
        if ct and not pt:
            bump(self.keys["orphan"])
        return f

    def assignment_score(self, assignment: dict) -> float:
        """Direct sum over factors; the oracle path for MAP checking."""
        total = 0.0
        for n in self.graph.nodes:
            total += self.unary_score(n, assignment[n.id])
        for n in self.graph.nodes:
            if n.parent is not None:
                total += self.pair_score(n, assignment[n.parent],
                                         assignment[n.id])
        return total

    def assignment_features(self, assignment: dict) -> dict:
        f = {}
        for n in self.graph.nodes:
            for i in self.true_indices(n, assignment[n.id]):
                for k, v in self.cand_feats[(n.id, i)].items():
                    f[k] = f.get(k, 0.0) + v
        for n in self.graph.nodes:
            if n.parent is not None:
                for k, v in self.pair_features(
                        n, assignment[n.parent], assignment[n.id]).items():
                    f[k] = f.get(k, 0.0) + v
        return f


def _tie_key(sg: ScoredGraph, node, state):
    t = sg.true_indices(node, state)
    return len(t), t


def map_decode(sg: ScoredGraph):
    """Exact MAP with (score desc, true-count asc, true-sets asc) ordering.

    Returns (assignment dict node-id -> state, total score).
    """
    g = sg.graph
    order = sorted(g.nodes, key=lambda n: -_depth(g, n))
    table = {}      # node id -> {state: (score, pop, seq)}
    back = {}       # (node id, state) -> {child id: child state}
    for n in order:
        tbl = {}
        for s in sg.node_states(n):
            pop, trues = _tie_key(sg, n, s)
            score = sg.unary_score(n, s)
            seq = [trues]
            picks = {}
            ok = True
            for cid in n.children:
                c = g.nodes[cid]
                best = None
                for cs, (csc, cpop, cseq) in table[cid].items():
                    val = csc + sg.pair_score(c, s, cs)
                    cand = (-val, cpop, cseq)
                    if best is None or cand < best[0]:
                        best = (cand, cs, val, cpop, cseq)
                if best is None:
                    ok = False
                    break
                _, cs, val, cpop, cseq = best
                picks[cid] = cs
                score += val
                pop += cpop
                seq = seq + list(cseq)
            if not ok:
                continue
            tbl[s] = (score, pop, tuple(seq))
            back[(n.id, s)] = picks
        table[n.id] = tbl

    root = g.root
    best_state, best_val = None, None
    for s, (score, pop, seq) in table[root.id].items():
        cand = (-score, pop, seq)
        if best_val is None or cand < best_val:
            best_val, best_state = cand, s
    assignment = {}

    def walk(nid, state):
        assignment[nid] = state
        for cid, cs in back[(nid, state)].items():
            walk(cid, cs)

    walk(root.id, best_state)
    return assignment, table[root.id][best_state][0]


def _depth(g, n):
    d = 0
    while n.parent is not None:
        n = g.nodes[n.parent]
        d += 1
    return d


# -- sum-product --------------------------------------------------------------

def _lse(xs):
    m = max(xs)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(x - m) for x in xs))


def tree_log_z(sg: ScoredGraph):
    """Log partition plus upward messages (child id -> {parent state: lse})."""
    g = sg.graph
    order = sorted(g.nodes, key=lambda n: -_depth(g, n))
    sub = {}     # node id -> {state: log subtree weight}
    for n in order:
        tbl = {}
        for s in sg.node_states(n):
            v = sg.unary_score(n, s)
            for cid in n.children:
                c = g.nodes[cid]
                v += _lse([cv + sg.pair_score(c, s, cs)
                           for cs, cv in sub[cid].items()])
            tbl[s] = v
        sub[n.id] = tbl
    return _lse(list(sub[g.root.id].values())), sub


def marginals(sg: ScoredGraph):
    """Node-state and edge-pair marginal probabilities (exact, tree BP)."""
    g = sg.graph
    logz, sub = tree_log_z(sg)
    down = {g.root.id: {s: 0.0 for s in sg.node_states(g.root)}}
    node_marg = {}
    edge_marg = {}
    for n in sorted(g.nodes, key=lambda m: _depth(g, m)):
        dn = down[n.id]
        node_marg[n.id] = {
            s: math.exp(sub[n.id][s] + dn[s] - logz) for s in sub[n.id]}
        for cid in n.children:
            c = g.nodes[cid]
            # parent belief excluding child's upward message
            ex = {}
            for s in sub[n.id]:
                up_c = _lse([cv + sg.pair_score(c, s, cs)
                             for cs, cv in sub[cid].items()])
                ex[s] = sub[n.id][s] + dn[s] - up_c
            dtbl = {}
            em = {}
            for cs, cv in sub[cid].items():
                terms = [ex[s] + sg.pair_score(c, s, cs) for s in ex]
                dtbl[cs] = _lse(terms)
                for s in ex:
                    em[(s, cs)] = math.exp(
                        ex[s] + sg.pair_score(c, s, cs) + cv - logz)
            down[cid] = dtbl
            edge_marg[cid] = em
    return logz, node_marg, edge_marg


# -- weights ------------------------------------------------------------------

def _key_str(key):
    def listify(k):
        return [listify(x) for x in k] if isinstance(k, tuple) else k
    return json.dumps(listify(key))


def _key_from_str(s):
    def tupleize(k):
        return tuple(tupleize(x) for x in k) if isinstance(k, list) else k
    return tupleize(json.loads(s))


@dataclass
class GroundingWeights:
    """Graph-factor weights plus the pruning stage, with template guards."""

    w: dict = field(default_factory=dict)
    pruning: Optional[PruningModel] = None
    templates: dict = field(default_factory=lambda: {
        "annotation": ANNOTATION_TEMPLATE, "behavior": BEHAVIOR_TEMPLATE})

    def to_json(self):
        return {
            "templates": dict(self.templates),
            "w": {_key_str(k): v for k, v in sorted(
                self.w.items(), key=lambda kv: _key_str(kv[0]))},
            "pruning": self.pruning.to_json() if self.pruning else None,
        }

    @classmethod
    def from_json(cls, obj, space=None):
        pruning = None
        if obj.get("pruning") is not None:
            if space is None:
                raise ValueError("a symbol space is needed to load pruning")
            pruning = PruningModel.from_json(obj["pruning"], space)
        return cls({_key_from_str(k): float(v) for k, v in obj["w"].items()},
                   pruning, dict(obj["templates"]))


# -- inference entry points ---------------------------------------------------

@dataclass
class AnnotationResult:
    annotations: list          # Annotation facts for the filter
    root_symbols: list         # Symbols phi=true at the root
    log_odds: dict             # canonical symbol string -> marginal log-odds
    assignment: dict           # node id -> list of true symbol strings
    score: float


def infer_annotations(graph: GroundingGraph,
                      weights: GroundingWeights) -> AnnotationResult:
    if graph.kind != "annotation":
        raise ValueError("annotation graph expected")
    sg = ScoredGraph(graph, weights)
    assignment, score = map_decode(sg)
    _, node_marg, _ = marginals(sg)
    root = graph.root
    true_syms = [root.candidates[i]
                 for i in sg.true_indices(root, assignment[root.id])]
    odds = {}
    for i, sym in enumerate(root.candidates):
        p = sum(pr for s, pr in node_marg[root.id].items()
                if s >> i & 1)
        p = min(max(p, 1e-12), 1.0 - 1e-12)
        odds[str(sym)] = math.log(p / (1.0 - p))
    ann = []
    typed_figs = set()
    for sym in true_syms:
        if sym.kind == "typed_relation":
            ann.append(Annotation(sym.name, sym.relation, sym.landmark))
            typed_figs.add(sym.name)
    for sym in true_syms:
        if sym.kind == "type" and sym.name not in typed_figs:
            ann.append(Annotation(sym.name))
        elif sym.kind == "subspace":
            # figure-less path phrase: the landmark itself is the fact
            if not any(a.figure == sym.landmark for a in ann):
                ann.append(Annotation(sym.landmark))
    named = {n.id: [str(n.candidates[i])
                    for i in sg.true_indices(n, assignment[n.id])]
             for n in graph.nodes}
    return AnnotationResult(ann, sorted(true_syms, key=str), odds, named, score)


@dataclass
class BehaviorResult:
    behavior: Behavior
    root_scores: dict          # root candidate string -> best total score
    assignment: dict
    score: float


def infer_behavior(graph: GroundingGraph, weights: GroundingWeights,
                   relations: Optional[RelationLibrary] = None) -> BehaviorResult:
    if graph.kind != "behavior":
        raise ValueError("behavior graph expected")
    if relations is None:
        relations = RelationLibrary.default()
    sg = ScoredGraph(graph, weights, relations)
    assignment, score = map_decode(sg)
    g = graph
    root = g.root
    chosen = root.candidates[assignment[root.id]]
    goal = chosen.goal
    goal_region = goal.region if goal is not None else None
    goal_relation = goal.relation if goal is not None \
        and goal.kind == "obj_subspace" else None

    constraints = []
    objectives = set()
    any_child_true = False
    for n in g.nodes:
        trues = sg.true_indices(n, assignment[n.id])
        if n.role == "objectives":
            objectives |= {n.candidates[i].name for i in trues}
            continue
        if n.parent is not None and trues:
            any_child_true = True
        if n.role == "rel":
            for i in trues:
                c = n.candidates[i]
                if goal is None or c != goal:
                    constraints.append((c.relation, c.region))
    if chosen.name == "stop" and goal is not None and not any_child_true:
        goal_region, goal_relation = None, None
    if goal_region is not None and g.context is not None:
        assert g.context.region_by_id(goal_region) is not None

    behavior = Behavior(chosen.name, goal_region, goal_relation,
                        frozenset(objectives),
                        tuple(sorted(set(constraints))))
    # score of swapping each root candidate into the MAP context
    root_scores = {}
    for i, sym in enumerate(root.candidates):
        a2 = dict(assignment)
        a2[root.id] = i
        root_scores[str(sym)] = sg.assignment_score(a2)
    named = {n.id: [str(n.candidates[i])
                    for i in sg.true_indices(n, assignment[n.id])]
             for n in g.nodes}
    return BehaviorResult(behavior, root_scores, named, score)


# -- training -----------------------------------------------------------------

def gold_state(node) -> int:
    """Node gold (candidate index set, or single index) as a state value."""
    if node.gold is None:
        raise GoldMismatchError(f"node {node.id} ({node.role}) has no gold")
    if node.exactly_one:
        (idx,) = node.gold
        if not 0 <= idx < len(node.candidates):
            raise GoldMismatchError(
                f"gold index {idx} out of range at node {node.id}")
        return idx
    state = 0
    for idx in node.gold:
        if not 0 <= idx < len(node.candidates):
            raise GoldMismatchError(
                f"gold index {idx} out of range at node {node.id}")
        state |= 1 << idx
    return state


def gold_assignment(graph: GroundingGraph) -> dict:
    return {n.id: gold_state(n) for n in graph.nodes}


def expected_features(sg: ScoredGraph) -> tuple:
    """(log Z, expected feature dict) under the current scores."""
    logz, node_marg, edge_marg = marginals(sg)
    ef = {}
    for n in sg.graph.nodes:
        # per-candidate activation probability
        for i in range(len(n.candidates)):
            p = sum(pr for s, pr in node_marg[n.id].items()
                    if i in sg.true_indices(n, s))
            if p <= 0.0:
                continue
            for k, v in sg.cand_feats[(n.id, i)].items():
                ef[k] = ef.get(k, 0.0) + p * v
    for n in sg.graph.nodes:
        if n.parent is None or n.id not in edge_marg:
            continue
        for (ps, cs), p in edge_marg[n.id].items():
            if p <= 0.0:
                continue
            for k, v in sg.pair_features(n, ps, cs).items():
                ef[k] = ef.get(k, 0.0) + p * v
    return logz, ef


@dataclass
class TrainReport:
    objective: list            # per-epoch regularized mean log-likelihood
    map_accuracy: float        # exact-assignment accuracy on the training set
    num_examples: int
    num_features: int


def train_graph_weights(examples, l2=0.1, lr=0.5, epochs=150,
                        relations=None, weights=None):
    """Gradient ascent on mean conditional log-likelihood minus (l2/2)|w|^2.

    examples: list of (GroundingGraph, gold assignment dict or None); a None
    gold is derived from the node gold sets.  Returns (GroundingWeights,
    TrainReport).  Deterministic for a fixed example order.
    """
    weights = weights or GroundingWeights()
    w = weights.w
    scored = []
    golds = []
    for graph, gold in examples:
        sg = ScoredGraph(graph, weights, relations)
        scored.append(sg)
        golds.append(gold if gold is not None else gold_assignment(graph))
    n = len(scored)
    if n == 0:
        return weights, TrainReport([], 1.0, 0, 0)
    gold_feats = []
    for sg, gold in zip(scored, golds):
        gold_feats.append(sg.assignment_features(gold))

    history = []
    for epoch in range(epochs):
        grad = {}
        obj = 0.0
        for sg, gold, gf in zip(scored, golds, gold_feats):
            sg.rescore(w)
            logz, ef = expected_features(sg)
            obj += sg.assignment_score(gold) - logz
            for k, v in gf.items():
                grad[k] = grad.get(k, 0.0) + v
            for k, v in ef.items():
                grad[k] = grad.get(k, 0.0) - v
        reg = sum(v * v for v in w.values())
        obj = obj / n - 0.5 * l2 * reg
        if not math.isfinite(obj):
            gmax = max((abs(v) for v in grad.values()), default=0.0)
            raise TrainingDivergedError(
                f"objective became non-finite at epoch {epoch} "
                f"(max |grad| component {gmax:.3g}); "
                "lower the learning rate or check the gold assignments")
        history.append(obj)
        for k in list(grad):
            g = grad[k] / n - l2 * w.get(k, 0.0)
            w[k] = w.get(k, 0.0) + lr * g
        # decay weights that received no gradient this epoch
        for k in list(w):
            if k not in grad:
                w[k] = w[k] * (1.0 - lr * l2)

    correct = 0
    for sg, gold in zip(scored, golds):
        sg.rescore(w)
        assignment, _ = map_decode(sg)
        if assignment == gold:
            correct += 1
    report = TrainReport(history, correct / n, n, len(w))
    return weights, report
