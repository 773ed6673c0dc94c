"""Symbol space: object types, relations, derived subspaces and typed relations.

The annotation symbol space is the union of object types, subspaces
relation(type), and typed relations type(relation(type)) with the
self-referential type pairs excluded.  With the default inventories of 17
types and 12 relations this gives 17 + 204 + 3264 = 3485 symbols.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from wayfinder.assets import load_json


@dataclass(frozen=True, order=True)
class Symbol:
    """A grounding symbol, canonically printed as e.g. kitchen(down(hallway)).

    kind is one of: type, subspace, typed_relation, object, obj_subspace,
    action, objective.  The first three live in the annotation space; the
    rest appear only in behavior graphs over a concrete map.
    """

    kind: str
    name: str                       # type name, relation, action or objective
    relation: Optional[str] = None
    landmark: Optional[str] = None  # landmark type (annotation space)
    region: Optional[int] = None    # region id (behavior space)
    goal: Optional["Symbol"] = None

    def __str__(self):
        if self.kind == "type":
            return self.name
        if self.kind == "subspace":
            return f"{self.relation}({self.landmark})"
        if self.kind == "typed_relation":
            return f"{self.name}({self.relation}({self.landmark}))"
        if self.kind == "object":
            return f"o{self.region}"
        if self.kind == "obj_subspace":
            return f"{self.relation}(o{self.region})"
        if self.kind == "action":
            return f"{self.name}({self.goal})" if self.goal is not None else self.name
        return self.name

    @staticmethod
    def object_type(name):
        return Symbol("type", name)

    @staticmethod
    def subspace(relation, landmark):
        return Symbol("subspace", "", relation=relation, landmark=landmark)

    @staticmethod
    def typed_relation(figure, relation, landmark):
        return Symbol("typed_relation", figure, relation=relation, landmark=landmark)

    @staticmethod
    def map_object(region_id):
        return Symbol("object", "", region=int(region_id))

    @staticmethod
    def map_subspace(relation, region_id):
        return Symbol("obj_subspace", "", relation=relation, region=int(region_id))

    @staticmethod
    def action(name, goal=None):
        return Symbol("action", name, goal=goal)

    @staticmethod
    def objective(name):
        return Symbol("objective", name)


@dataclass(frozen=True)
class Annotation:
    """A language-derived environment fact: a figure type, optionally related
    to a landmark type (e.g. kitchen down-from hallway)."""

    figure: str
    relation: Optional[str] = None
    landmark: Optional[str] = None

    def __post_init__(self):
        if (self.relation is None) != (self.landmark is None):
            raise ValueError("relation present iff landmark present")

    @property
    def has_relation(self):
        return self.relation is not None

    def root_symbols(self):
        syms = {Symbol.object_type(self.figure)}
        if self.has_relation:
            syms.add(Symbol.typed_relation(self.figure, self.relation, self.landmark))
        return syms

    def all_symbols(self):
        syms = {Symbol.object_type(self.figure)}
        if self.has_relation:
            syms.add(Symbol.object_type(self.landmark))
            syms.add(Symbol.subspace(self.relation, self.landmark))
            syms.add(Symbol.typed_relation(self.figure, self.relation, self.landmark))
        return syms

    def to_json(self):
        d = {"figure": self.figure}
        if self.has_relation:
            d["relation"] = self.relation
            d["landmark"] = self.landmark
        return d

    @classmethod
    def from_json(cls, obj):
        return cls(obj["figure"], obj.get("relation"), obj.get("landmark"))


@dataclass(frozen=True)
class Behavior:
    """The commanded intent: an action with an optional goal (map object or a
    subspace over one), objectives, and path constraints."""

    action: str
    goal_region: Optional[int] = None
    goal_relation: Optional[str] = None   # set when the goal is relation(o)
    objectives: frozenset = frozenset()
    constraints: tuple = ()               # ((relation, region_id), ...)

    def goal_symbol(self):
        if self.goal_region is None:
            return None
        if self.goal_relation is None:
            return Symbol.map_object(self.goal_region)
        return Symbol.map_subspace(self.goal_relation, self.goal_region)

    def __str__(self):
        g = self.goal_symbol()
        core = f"{self.action}({g})" if g is not None else self.action
        extra = []
        if self.objectives:
            extra.append("+".join(sorted(self.objectives)))
        for rel, rid in self.constraints:
            extra.append(f"{rel}(o{rid})")
        return core if not extra else core + "[" + ",".join(extra) + "]"

    def to_json(self):
        return {
            "action": self.action,
            "goal_region": self.goal_region,
            "goal_relation": self.goal_relation,
            "objectives": sorted(self.objectives),
            "constraints": [list(c) for c in self.constraints],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            obj["action"],
            obj.get("goal_region"),
            obj.get("goal_relation"),
            frozenset(obj.get("objectives", ())),
            tuple((r, int(i)) for r, i in obj.get("constraints", ())),
        )


_SYM_RE = re.compile(r"^([^()]+)\((.+)\)$")


def parse_symbol(text: str) -> Symbol:
    """Parse a canonical annotation-symbol string (type, subspace, or typed
    relation)."""
    text = text.strip()
    m = _SYM_RE.match(text)
    if not m:
        return Symbol.object_type(text)
    head, inner = m.group(1), m.group(2)
    im = _SYM_RE.match(inner)
    if not im:
        return Symbol.subspace(head, inner)
    return Symbol.typed_relation(head, im.group(1), im.group(2))


class SymbolSpace:
    """Inventories plus surface word forms for types, relations, actions,
    and objectives."""

    def __init__(self, object_types, relations, actions, objectives):
        # each argument: dict name -> list of word-form strings
        self.type_words = {k: list(v) for k, v in object_types.items()}
        self.relation_words = {k: list(v) for k, v in relations.items()}
        self.action_words = {k: list(v) for k, v in actions.items()}
        self.objective_words = {k: list(v) for k, v in objectives.items()}
        self.object_types = list(self.type_words)
        self.relations = list(self.relation_words)
        self.actions = list(self.action_words)
        self.objectives = list(self.objective_words)
        self._word_index = self._build_word_index()

    @classmethod
    def from_json(cls, obj) -> "SymbolSpace":
        return cls(obj["object_types"], obj["relations"], obj["actions"],
                   obj["objectives"])

    @classmethod
    def default(cls) -> "SymbolSpace":
        return cls.from_json(load_json("symbols.json"))

    def restricted(self, object_types=None, relations=None) -> "SymbolSpace":
        """A smaller space over subsets of the inventories (oracle tests)."""
        tw = {t: self.type_words[t] for t in (object_types or self.object_types)}
        rw = {r: self.relation_words[r] for r in (relations or self.relations)}
        return SymbolSpace(tw, rw, self.action_words, self.objective_words)

    # -- cardinalities -------------------------------------------------------

    @property
    def num_subspaces(self):
        return len(self.relations) * len(self.object_types)

    @property
    def num_typed_relations(self):
        t, r = len(self.object_types), len(self.relations)
        return t * self.num_subspaces - t * r

    @property
    def num_symbols(self):
        return len(self.object_types) + self.num_subspaces + self.num_typed_relations

    def subspaces(self):
        for r in self.relations:
            for t in self.object_types:
                yield Symbol.subspace(r, t)

    def typed_relations(self):
        for f in self.object_types:
            for r in self.relations:
                for t in self.object_types:
                    if t != f:
                        yield Symbol.typed_relation(f, r, t)

    def annotation_symbols(self):
        for t in self.object_types:
            yield Symbol.object_type(t)
        yield from self.subspaces()
        yield from self.typed_relations()

    # -- surface forms -------------------------------------------------------

    def _build_word_index(self):
        index = {}
        for kind, table in (("type", self.type_words),
                            ("relation", self.relation_words),
                            ("action", self.action_words),
                            ("objective", self.objective_words)):
            for name, forms in table.items():
                for form in forms:
                    index.setdefault(tuple(form.split()), []).append((kind, name))
        return index

    def find_mentions(self, words: Sequence[str]):
        """Greedy longest-match scan: (kind, name, start, end) per mention."""
        out = []
        max_n = max((len(k) for k in self._word_index), default=1)
        i = 0
        while i < len(words):
            hit = None
            for n in range(min(max_n, len(words) - i), 0, -1):
                key = tuple(words[i:i + n])
                if key in self._word_index:
                    hit = (key, n)
                    break
            if hit is None:
                i += 1
                continue
            key, n = hit
            for kind, name in self._word_index[key]:
                out.append((kind, name, i, i + n))
            i += n
        return out

    def mentioned(self, words, kind):
        """Names of the given kind mentioned anywhere in the words."""
        return {name for k, name, _, _ in self.find_mentions(words) if k == kind}
