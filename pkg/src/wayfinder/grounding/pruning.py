"""Symbol-space pruning: per-symbol activation classifiers.

Rule marginalization is approximated by a MAP rule set: independent
log-linear activations per object type (as figure and as landmark), per
relation, per action, and per objective, over bag-of-words features with a
relational-context flag and phrase-label counts.  A symbol is active when
its activation score is positive (sigmoid > 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wayfinder.langparse import ParseTree
from wayfinder.grounding.symbols import Symbol, SymbolSpace

HEADS = ("fig", "lm", "rel", "act", "obj")


def _is_relational_node(node: ParseTree, space: SymbolSpace) -> bool:
    if node.is_leaf:
        return False
    if node.label in ("SBAR", "PPOF"):
        return True
    if node.label in ("PP", "ADVP"):
        words = [t.text for t in node.leaves()]
        return bool(space.mentioned(words, "relation"))
    return False


def context_features(tree: ParseTree, space: SymbolSpace) -> dict:
    """Bag of (word, in-relational-subtree flag) counts plus phrase labels."""
    feats = {}

    def bump(key):
        feats[key] = feats.get(key, 0.0) + 1.0

    def walk(node, in_rel):
        flag = in_rel or _is_relational_node(node, space)
        if node.is_leaf:
            bump(("w", node.token.text, 1 if flag else 0))
            return
        bump(("lbl", node.label))
        for c in node.children:
            walk(c, flag)

    walk(tree, False)
    return feats


@dataclass
class PruningModel:
    """Weight tables per head; head -> name -> {feature: weight}, plus bias."""

    space: SymbolSpace
    weights: dict = field(default_factory=dict)   # head -> name -> dict
    bias: dict = field(default_factory=dict)      # head -> name -> float

    def __post_init__(self):
        names = {"fig": self.space.object_types, "lm": self.space.object_types,
                 "rel": self.space.relations, "act": self.space.actions,
                 "obj": self.space.objectives}
        for head in HEADS:
            self.weights.setdefault(head, {})
            self.bias.setdefault(head, {})
            for n in names[head]:
                self.weights[head].setdefault(n, {})
                self.bias[head].setdefault(n, 0.0)

    def score(self, head, name, feats) -> float:
        w = self.weights[head][name]
        return self.bias[head][name] + sum(w.get(k, 0.0) * v
                                           for k, v in feats.items())

    def active(self, head, feats):
        return {n for n in self.weights[head] if self.score(head, n, feats) > 0.0}

    def to_json(self):
        return {
            "weights": {h: {n: {"|".join(map(str, k)): v for k, v in tbl.items()}
                            for n, tbl in per.items()}
                        for h, per in self.weights.items()},
            "bias": self.bias,
        }

    @classmethod
    def from_json(cls, obj, space):
        model = cls(space)
        for h, per in obj["weights"].items():
            for n, tbl in per.items():
                out = {}
                for k, v in tbl.items():
                    parts = k.split("|")
                    if parts[0] == "w":
                        out[("w", parts[1], int(parts[2]))] = v
                    else:
                        out[("lbl", parts[1])] = v
                model.weights[h][n] = out
        for h, per in obj["bias"].items():
            model.bias[h].update(per)
        return model


@dataclass
class ActiveSymbolSet:
    fig_types: set
    lm_types: set
    relations: set
    actions: set
    objectives: set
    space: SymbolSpace

    @property
    def types(self):
        return self.fig_types | self.lm_types

    def subspace_pairs(self):
        return {(r, t) for r in sorted(self.relations) for t in sorted(self.lm_types)}

    def annotation_symbols(self) -> set:
        """Active members of the type/subspace/typed-relation space."""
        syms = {Symbol.object_type(t) for t in self.types}
        for r, t in self.subspace_pairs():
            syms.add(Symbol.subspace(r, t))
        for f in self.fig_types:
            for r, t in self.subspace_pairs():
                if f != t:
                    syms.add(Symbol.typed_relation(f, r, t))
        return syms

    def allows_type(self, name):
        return name in self.fig_types or name in self.lm_types


def prune_symbols(tree: ParseTree, space: SymbolSpace,
                  model: PruningModel) -> ActiveSymbolSet:
    feats = context_features(tree, space)
    return ActiveSymbolSet(
        fig_types=model.active("fig", feats),
        lm_types=model.active("lm", feats),
        relations=model.active("rel", feats),
        actions=model.active("act", feats),
        objectives=model.active("obj", feats),
        space=space,
    )


def full_active_set(space: SymbolSpace) -> ActiveSymbolSet:
    """Everything active: used for unpruned oracle comparisons."""
    return ActiveSymbolSet(set(space.object_types), set(space.object_types),
                           set(space.relations), set(space.actions),
                           set(space.objectives), space)


def train_pruning(examples, space: SymbolSpace, l2=0.005, lr=1.0,
                  epochs=1000) -> PruningModel:
    """L2-regularized logistic regression per symbol head, gradient ascent.

    examples: iterable of (tree, gold) where gold is a dict with keys
    fig/lm/rel/act/obj holding the active name sets for that utterance.
    """
    examples = list(examples)
    feats_per_ex = [context_features(t, space) for t, _ in examples]
    vocab = sorted({k for f in feats_per_ex for k in f})
    col = {k: i for i, k in enumerate(vocab)}
    X = np.zeros((len(examples), len(vocab)))
    for i, f in enumerate(feats_per_ex):
        for k, v in f.items():
            X[i, col[k]] = v

    model = PruningModel(space)
    name_lists = {"fig": space.object_types, "lm": space.object_types,
                  "rel": space.relations, "act": space.actions,
                  "obj": space.objectives}
    n = len(examples)
    for head in HEADS:
        names = list(name_lists[head])
        Y = np.zeros((n, len(names)))
        for i, (_, gold) in enumerate(examples):
            for j, name in enumerate(names):
                if name in gold.get(head, ()):
                    Y[i, j] = 1.0
        W = np.zeros((len(names), len(vocab)))
        b = np.zeros(len(names))
        for _ in range(epochs):
            z = X @ W.T + b                      # n x names
            p = 1.0 / (1.0 + np.exp(-z))
            err = Y - p
            gW = err.T @ X / n - l2 * W
            gb = err.mean(axis=0)
            W += lr * gW
            b += lr * gb
        for j, name in enumerate(names):
            tbl = {vocab[c]: float(W[j, c]) for c in range(len(vocab))
                   if abs(W[j, c]) > 1e-12}
            model.weights[head][name] = tbl
            model.bias[head][name] = float(b[j])
    return model
