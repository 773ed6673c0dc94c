"""Grounding-graph construction over parse trees.

A grounding graph has one node per grounding-bearing constituent: the figure
phrase (or clause root), one node per relational phrase, one per landmark
phrase, and for behavior graphs an action root plus an objectives node.
Each node carries a sorted candidate list; a correspondence variable exists
per (node, candidate).  Candidates come from surface word forms intersected
with the active symbol set from the pruning stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from wayfinder.langparse import ParseTree
from wayfinder.grounding.pruning import ActiveSymbolSet, full_active_set
from wayfinder.grounding.symbols import Behavior, Symbol, SymbolSpace

ANNOTATION_TEMPLATE = "annotation-v1"
BEHAVIOR_TEMPLATE = "behavior-v1"


@dataclass
class GNode:
    id: int
    role: str                      # root | figure | rel | landmark | objectives
    phrase: Optional[ParseTree]
    words: tuple                   # head words used for lexical features
    candidates: list               # sorted Symbols
    parent: Optional[int] = None
    children: list = field(default_factory=list)
    relation: Optional[str] = None # rel nodes: the relation expressed
    exactly_one: bool = False      # action roots choose exactly one candidate
    gold: Optional[frozenset] = None   # candidate indices (or single index)


class GroundingGraph:
    def __init__(self, kind, nodes, space, context=None, template=None):
        self.kind = kind                      # "annotation" | "behavior"
        self.nodes: list[GNode] = nodes
        self.space = space
        self.context = context                # map snapshot for behavior graphs
        self.template = template or (
            ANNOTATION_TEMPLATE if kind == "annotation" else BEHAVIOR_TEMPLATE)

    @property
    def root(self) -> GNode:
        return self.nodes[0]

    @property
    def num_phi(self):
        return sum(len(n.candidates) for n in self.nodes)

    def node_candidates(self):
        return {n.id: [str(c) for c in n.candidates] for n in self.nodes}

    def all_candidates(self):
        out = []
        for n in self.nodes:
            out.extend(n.candidates)
        return out


def _leaf_words(node: ParseTree):
    return [t.text for t in node.leaves()]


def extract_clauses(tree: ParseTree):
    """Split coordinated verb phrases into a clause list, in order."""
    t = tree
    while not t.is_leaf and t.label == "S" and len(t.children) == 1:
        t = t.children[0]
    if not t.is_leaf and t.label == "VP":
        kids = t.children
        if len(kids) == 3 and kids[1].label == "CC":
            return extract_clauses(kids[0]) + extract_clauses(kids[2])
    return [t]


# -- phrase analysis ----------------------------------------------------------

@dataclass
class RelPhrase:
    phrase: ParseTree
    relation_words: tuple        # words expressing the relation
    landmark_np: Optional[ParseTree]


@dataclass
class ClauseShape:
    clause: ParseTree
    verb_words: tuple
    figure_np: Optional[ParseTree]
    figure_rels: list            # RelPhrase nested inside the figure NP
    path_rels: list              # RelPhrase attached to the verb phrase
    adverb_words: tuple


def _relation_for_words(space: SymbolSpace, words):
    ments = [m for m in space.find_mentions(list(words)) if m[0] == "relation"]
    if not ments:
        return None
    # longest mention wins, then leftmost
    ments.sort(key=lambda m: (-(m[3] - m[2]), m[2]))
    return ments[0][1]


def _np_head_words(np: ParseTree, space):
    """Words of the NP minus any embedded relational subphrase."""
    drop = set()
    for c in np.children:
        if c.label in ("SBAR", "PPOF", "PP"):
            drop.update(id(leaf) for leaf in c.subtrees() if leaf.is_leaf)
    words = []
    for leaf in np.subtrees():
        if leaf.is_leaf and id(leaf) not in drop:
            words.append(leaf.token.text)
    return tuple(words)


def _analyze_np(np: ParseTree, space) -> tuple:
    """(is_relational, head_words, rel_phrases) for an NP."""
    rels = []
    head = _np_head_words(np, space)
    for c in np.children:
        if c.label == "SBAR":
            rp = _rel_from_sbar(c, space)
            if rp:
                rels.append(rp)
        elif c.label == "PPOF":
            rel = _relation_for_words(space, head + ("of",))
            inner = _find_np(c)
            if rel is not None and inner is not None:
                return True, head, [RelPhrase(np, head + ("of",), inner)]
    # "the end of the hallway" style NPs are themselves relational
    return False, head, rels


def _find_np(node: ParseTree):
    for c in node.children:
        if c.label == "NP":
            return c
    for c in node.children:
        got = _find_np(c)
        if got is not None:
            return got
    return None


def _rel_from_sbar(sbar: ParseTree, space):
    words = tuple(_leaf_words(sbar))
    rel = _relation_for_words(space, words)
    if rel is None:
        return None
    np = _innermost_landmark_np(sbar)
    return RelPhrase(sbar, words, np)


def _innermost_landmark_np(node: ParseTree):
    """The landmark NP of a relational phrase: the first plain NP, i.e. one
    with no NP descendant and no relational children of its own."""
    for sub in node.subtrees():
        if sub.is_leaf or sub.label != "NP":
            continue
        plain = all(c.is_leaf or c.label not in ("NP", "SBAR", "PPOF")
                    for c in sub.children)
        has_np_below = any(s is not sub and not s.is_leaf and s.label == "NP"
                           for s in sub.subtrees())
        if plain and not has_np_below:
            return sub
    return None


def _rel_from_pp(pp: ParseTree, space):
    # relation words come from the PP minus any embedded clause
    words = []
    for leaf in pp.leaves():
        words.append(leaf.text)
    drop = set()
    for sub in pp.subtrees():
        if not sub.is_leaf and sub.label == "SBAR":
            drop.update(t.text for t in sub.leaves())
    words = tuple(w for w in words if w not in drop)
    rel = _relation_for_words(space, words)
    if rel is None:
        return None
    return RelPhrase(pp, words, _innermost_landmark_np(pp))


def analyze_clause(clause: ParseTree, space: SymbolSpace) -> ClauseShape:
    verb_words = []
    figure_np = None
    figure_rels = []
    path_rels = []
    adverb_words = []
    loc_nps = []        # "at/in the kitchen" style location phrases
    if clause.is_leaf:
        return ClauseShape(clause, (clause.token.text,), None, [], [], ())
    for child in clause.children:
        if child.label in ("VB", "VBZ"):
            verb_words.append(child.token.text)
        elif child.label == "NP":
            is_rel, head, rels = _analyze_np(child, space)
            if is_rel:
                path_rels.extend(rels)
            elif figure_np is None and _np_head_words(child, space):
                figure_np = child
                figure_rels = rels
        elif child.label == "PP":
            if _starts_with_to(child):
                # goal phrase: figure NP unless the NP itself is relational
                inner = _find_np(child)
                if inner is None:
                    continue
                is_rel, head, rels = _analyze_np(inner, space)
                if is_rel:
                    path_rels.extend(rels)
                elif figure_np is None:
                    figure_np = inner
                    figure_rels = rels
                else:
                    path_rels.extend(rels)
            else:
                rp = _rel_from_pp(child, space)
                if rp is not None:
                    path_rels.append(rp)
                else:
                    inner = _find_np(child)
                    if inner is not None:
                        loc_nps.append(inner)
        elif child.label == "ADVP":
            words = tuple(_leaf_words(child))
            rel = _relation_for_words(space, words)
            np = _find_np(child)
            if rel is not None:
                path_rels.append(RelPhrase(child, words, np))
            else:
                adverb_words.extend(words)
        elif child.label == "VP":
            inner = analyze_clause(child, space)
            verb_words.extend(inner.verb_words)
            if figure_np is None:
                figure_np = inner.figure_np
                figure_rels = inner.figure_rels
            path_rels.extend(inner.path_rels)
            adverb_words.extend(inner.adverb_words)
    # a plain location phrase supplies the missing landmark of a bare
    # relation ("turn left at the kitchen"), else stands in as the figure
    for np in loc_nps:
        bare = [rp for rp in path_rels if rp.landmark_np is None]
        if bare:
            bare[0].landmark_np = np
        elif figure_np is None:
            figure_np = np
    return ClauseShape(clause, tuple(verb_words), figure_np, figure_rels,
                       path_rels, tuple(adverb_words))


def _starts_with_to(pp: ParseTree):
    leaves = pp.leaves()
    return bool(leaves) and leaves[0].text == "to"


# -- annotation graphs --------------------------------------------------------

def _mentioned_types(space, words, allowed):
    return sorted(t for t in space.mentioned(list(words), "type") if t in allowed)


def build_annotation_graph(tree: ParseTree, active: ActiveSymbolSet,
                           space: Optional[SymbolSpace] = None,
                           clause_index=0) -> GroundingGraph:
    """Grounding graph for environment annotations over one clause."""
    space = space or active.space
    clauses = extract_clauses(tree)
    clause = clauses[min(clause_index, len(clauses) - 1)]
    shape = analyze_clause(clause, space)

    nodes: list[GNode] = []

    def add_node(role, phrase, words, candidates, parent=None, relation=None,
                 exactly_one=False):
        node = GNode(len(nodes), role, phrase, tuple(words),
                     sorted(candidates, key=str), parent, [],
                     relation, exactly_one)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.id)
        return node

    def add_rel_subgraph(rp: RelPhrase, parent_id):
        rel = _relation_for_words(space, rp.relation_words)
        lm_words = _np_head_words(rp.landmark_np, space) if rp.landmark_np else ()
        lm_types = _mentioned_types(space, lm_words, active.lm_types | active.fig_types)
        cands = []
        if rel is not None and rel in active.relations:
            cands = [Symbol.subspace(rel, t) for t in lm_types]
        rel_node = add_node("rel", rp.phrase, rp.relation_words, cands,
                            parent=parent_id, relation=rel)
        if rp.landmark_np is not None:
            lm_cands = [Symbol.object_type(t) for t in lm_types]
            add_node("landmark", rp.landmark_np, lm_words, lm_cands,
                     parent=rel_node.id)
        return rel_node

    all_rels = shape.figure_rels + shape.path_rels
    fig_words = _np_head_words(shape.figure_np, space) if shape.figure_np else ()
    fig_types = _mentioned_types(space, fig_words,
                                 active.fig_types | active.lm_types)

    root_cands = [Symbol.object_type(t) for t in fig_types]
    for rp in all_rels:
        rel = _relation_for_words(space, rp.relation_words)
        if rel is None or rel not in active.relations:
            continue
        lm_words = _np_head_words(rp.landmark_np, space) if rp.landmark_np else ()
        for lt in _mentioned_types(space, lm_words,
                                   active.lm_types | active.fig_types):
            for ft in fig_types:
                if ft != lt:
                    root_cands.append(Symbol.typed_relation(ft, rel, lt))
            if not fig_types:
                root_cands.append(Symbol.subspace(rel, lt))
    # the active set may veto typed relations even when parts are active
    allowed = active.annotation_symbols()
    root_cands = [c for c in dict.fromkeys(root_cands) if c in allowed]

    root_phrase = shape.figure_np if shape.figure_np is not None else clause
    root = add_node("root", root_phrase, fig_words, root_cands)
    for rp in all_rels:
        add_rel_subgraph(rp, root.id)
    return GroundingGraph("annotation", nodes, space)


# -- behavior graphs ----------------------------------------------------------

def behavior_candidate_universe(map_estimate, space: SymbolSpace,
                                active: Optional[ActiveSymbolSet] = None):
    """All behavior-space candidate symbols for a map.

    actions x (objects + subspaces) + objectives + constraint subspaces; an
    empty map admits only goal-less stop-like actions plus the objectives.
    """
    objects = list(map_estimate.objects()) if map_estimate is not None else []
    acts = space.actions if active is None else \
        [a for a in space.actions if a in active.actions]
    rels = space.relations if active is None else \
        [r for r in space.relations if r in active.relations]
    objs = space.objectives if active is None else \
        [o for o in space.objectives if o in active.objectives]
    out = []
    if not objects:
        for a in acts:
            if a == "stop":
                out.append(Symbol.action("stop"))
        for o in objs:
            out.append(Symbol.objective(o))
        return out
    goals = [Symbol.map_object(rid) for rid, _ in objects]
    goals += [Symbol.map_subspace(r, rid) for r in rels for rid, _ in objects]
    for a in acts:
        for g in goals:
            out.append(Symbol.action(a, g))
    for o in objs:
        out.append(Symbol.objective(o))
    for r in rels:
        for rid, _ in objects:
            out.append(Symbol.map_subspace(r, rid))
    return out


def _objects_matching(map_estimate, space, words, active):
    """Map objects whose type is named by the words and allowed as active."""
    mentioned = space.mentioned(list(words), "type")
    out = []
    for rid, rtype in map_estimate.objects():
        if rtype in mentioned and (active is None or active.allows_type(rtype)):
            out.append((rid, rtype))
    return out


def current_region_id(map_estimate):
    if map_estimate is None or not map_estimate.regions:
        return None
    if getattr(map_estimate, "node_regions", None):
        return map_estimate.node_regions[-1]
    return map_estimate.regions[0].id


def build_behavior_graph(tree: ParseTree, map_estimate,
                         active: Optional[ActiveSymbolSet] = None,
                         space: Optional[SymbolSpace] = None,
                         clause_index=0) -> GroundingGraph:
    """Grounding graph for the commanded behavior against a map estimate."""
    if space is None:
        space = active.space if active is not None else SymbolSpace.default()
    if active is None:
        active = full_active_set(space)
    clauses = extract_clauses(tree)
    clause = clauses[min(clause_index, len(clauses) - 1)]
    shape = analyze_clause(clause, space)
    objects = list(map_estimate.objects()) if map_estimate is not None else []

    nodes: list[GNode] = []

    def add_node(role, phrase, words, candidates, parent=None, relation=None,
                 exactly_one=False):
        node = GNode(len(nodes), role, phrase, tuple(words),
                     sorted(candidates, key=str), parent, [],
                     relation, exactly_one)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.id)
        return node

    actions = sorted(space.mentioned(list(shape.verb_words), "action")
                     & set(active.actions))
    fig_words = _np_head_words(shape.figure_np, space) if shape.figure_np else ()
    fig_objects = _objects_matching(map_estimate, space, fig_words, active) \
        if objects else []

    all_rels = shape.figure_rels + shape.path_rels
    rel_info = []
    for rp in all_rels:
        rel = _relation_for_words(space, rp.relation_words)
        if rel is None or rel not in active.relations:
            continue
        lm_words = _np_head_words(rp.landmark_np, space) if rp.landmark_np else ()
        if lm_words and objects:
            lm_objects = _objects_matching(map_estimate, space, lm_words, active)
        elif objects:
            cur = current_region_id(map_estimate)
            lm_objects = [(cur, map_estimate.region_by_id(cur).rtype)] \
                if cur is not None else []
        else:
            lm_objects = []
        rel_info.append((rp, rel, lm_words, lm_objects))

    # goal candidates: figure objects, or subspaces from relational phrases
    goal_syms = [Symbol.map_object(rid) for rid, _ in fig_objects]
    if not goal_syms:
        for rp, rel, lm_words, lm_objects in rel_info:
            goal_syms += [Symbol.map_subspace(rel, rid) for rid, _ in lm_objects]

    root_cands = []
    for a in actions:
        if a == "stop" and not goal_syms:
            root_cands.append(Symbol.action("stop"))
        elif goal_syms:
            root_cands.extend(Symbol.action(a, g) for g in goal_syms)
        else:
            root_cands.append(Symbol.action(a))
    if not root_cands:
        root_cands = [Symbol.action("stop")]

    root = add_node("root", clause, shape.verb_words, root_cands,
                    exactly_one=True)

    if shape.figure_np is not None:
        add_node("figure", shape.figure_np, fig_words,
                 [Symbol.map_object(rid) for rid, _ in fig_objects],
                 parent=root.id)
    for rp, rel, lm_words, lm_objects in rel_info:
        rel_node = add_node("rel", rp.phrase, rp.relation_words,
                            [Symbol.map_subspace(rel, rid)
                             for rid, _ in lm_objects],
                            parent=root.id, relation=rel)
        if rp.landmark_np is not None:
            add_node("landmark", rp.landmark_np, lm_words,
                     [Symbol.map_object(rid) for rid, _ in lm_objects],
                     parent=rel_node.id)

    objs = sorted(space.mentioned(list(_leaf_words(clause)), "objective")
                  & set(active.objectives))
    add_node("objectives", None, tuple(shape.adverb_words),
             [Symbol.objective(o) for o in objs], parent=root.id)
    return GroundingGraph("behavior", nodes, space, context=map_estimate)
