"""Tokenization, a small weighted chart parser, and bracketed-tree serialization.

The parser is a CKY-style dynamic program over spans supporting rules with
right-hand sides of length 1..3 plus a lexicon.  Ties between equal-score
parses are broken toward lower tree depth, then the leftmost derivation
(smaller split points, then smaller rule index), so parsing is deterministic
for a fixed grammar.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Sequence


class ParseError(Exception):
    pass


class EmptyUtteranceError(ParseError):
    pass


class NoParseError(ParseError):
    def __init__(self, message, span=None):
        super().__init__(message)
        self.span = span


class BracketError(ParseError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Token:
    text: str
    index: int


_WORD_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[Token]:
    """Lowercase and split on whitespace/punctuation, dropping the punctuation."""
    if not text or not text.strip():
        raise EmptyUtteranceError("utterance is empty")
    words = _WORD_RE.findall(text.lower())
    if not words:
        raise EmptyUtteranceError("utterance contains no words")
    return [Token(w, i) for i, w in enumerate(words)]


class ParseTree:
    """Labeled ordered tree over a token span.  Leaves carry exactly one token."""

    __slots__ = ("label", "children", "token", "span")

    def __init__(self, label, children=(), token=None, span=(0, 0)):
        self.label = label
        self.children = tuple(children)
        self.token = token
        self.span = tuple(span)
        if self.token is not None and self.children:
            raise ValueError("a node carries either a token or children, not both")

    @property
    def is_leaf(self):
        return self.token is not None

    def leaves(self):
        if self.is_leaf:
            return [self.token]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def subtrees(self):
        """Preorder traversal of all nodes."""
        yield self
        for c in self.children:
            yield from c.subtrees()

    def depth(self):
        if self.is_leaf:
            return 1
        return 1 + max(c.depth() for c in self.children)

    def __eq__(self, other):
        if not isinstance(other, ParseTree):
            return NotImplemented
        return (
            self.label == other.label
            and self.token == other.token
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.label, self.token, self.children))

    def __repr__(self):
        return write_bracketed(self)


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple
    weight: float = 0.0


class Grammar:
    """A small CFG with a weighted lexicon and an unknown-word POS fallback."""

    def __init__(self, rules: Sequence[Rule], lexicon: dict, fallback_pos="NN",
                 fallback_weight=-2.0):
        for r in rules:
            if len(r.rhs) == 0:
                raise ValueError(f"rule {r.lhs} has an empty right-hand side")
            if len(r.rhs) > 3:
                raise ValueError(f"rule {r.lhs} -> {r.rhs}: RHS longer than 3 unsupported")
        self.rules = list(rules)
        # lexicon: word -> list of (pos, weight)
        self.lexicon = {
            w: [(p, float(wt)) for p, wt in entries] for w, entries in lexicon.items()
        }
        self.fallback_pos = fallback_pos
        self.fallback_weight = float(fallback_weight)
        self.pos_tags = {p for entries in self.lexicon.values() for p, _ in entries}
        self.pos_tags.add(fallback_pos)
        self._tag_rank = {t: k for k, t in enumerate(sorted(self.pos_tags))}
        self._rule_id = {(r.lhs, r.rhs): i for i, r in enumerate(self.rules)}

    def tags_for(self, word):
        """(pos, weight, used_fallback) choices for a word."""
        if word in self.lexicon:
            return [(p, w, False) for p, w in self.lexicon[word]]
        return [(self.fallback_pos, self.fallback_weight, True)]

    def tag_rank(self, pos):
        return self._tag_rank.get(pos, len(self._tag_rank))

    def rule_id(self, lhs, rhs):
        return self._rule_id[(lhs, tuple(rhs))]

    def lex_weight(self, word, pos):
        for p, w in self.lexicon.get(word, ()):
            if p == pos:
                return w
        return self.fallback_weight

    @classmethod
    def from_json(cls, obj) -> "Grammar":
        rules = [Rule(r["lhs"], tuple(r["rhs"]), float(r.get("weight", 0.0)))
                 for r in obj["rules"]]
        lexicon = {}
        for word, entries in obj["lexicon"].items():
            norm = []
            for e in entries:
                if isinstance(e, str):
                    norm.append((e, 0.0))
                else:
                    norm.append((e[0], float(e[1])))
            lexicon[word] = norm
        return cls(rules, lexicon, obj.get("fallback_pos", "NN"),
                   obj.get("fallback_weight", -2.0))

    @classmethod
    def load(cls, path) -> "Grammar":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# A chart entry is keyed by (label, depth) and stores (score, sig, tree).
# sig is a nested tuple ordering derivations: smaller is preferred among
# equal (score, depth).  Nested-tuple comparison keeps the order
# compositional, which makes the chart agree with exhaustive enumeration.


def derivation_sig(tree: ParseTree, grammar: Grammar):
    """Canonical nested-tuple derivation signature; smaller means preferred.

    Encodes rule identity and split points in preorder.  All positions hold
    ints or tuples of the same shape class, so comparisons never mix types.
    """
    if tree.is_leaf:
        return (-1, (tree.span[0],), (grammar.tag_rank(tree.label),))
    ri = grammar.rule_id(tree.label, tuple(c.label for c in tree.children))
    splits = tuple(c.span[0] for c in tree.children[1:])
    return (ri, splits) + tuple(derivation_sig(c, grammar) for c in tree.children)


def tree_score(tree: ParseTree, grammar: Grammar) -> float:
    """Sum of rule weights and lexicon weights over the derivation."""
    if tree.is_leaf:
        return grammar.lex_weight(tree.token.text, tree.label)
    ri = grammar.rule_id(tree.label, tuple(c.label for c in tree.children))
    return grammar.rules[ri].weight + sum(tree_score(c, grammar) for c in tree.children)


def tree_sort_key(tree: ParseTree, grammar: Grammar):
    """Total order used to pick among parses: score desc, depth asc, sig asc."""
    return (-tree_score(tree, grammar), tree.depth(), derivation_sig(tree, grammar))


def _better(a, b):
    """True if candidate a=(score, sig) beats b."""
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] < b[1]


def parse(tokens: Sequence[Token], grammar: Grammar) -> ParseTree:
    """Best-scoring tree over the tokens; deterministic under the tie-break."""
    words = [t.text for t in tokens]
    n = len(words)
    if n == 0:
        raise EmptyUtteranceError("no tokens to parse")

    rule_index = {}
    for ri, r in enumerate(grammar.rules):
        rule_index.setdefault(len(r.rhs), []).append((ri, r))
    unary = rule_index.get(1, [])
    binary = rule_index.get(2, [])
    ternary = rule_index.get(3, [])

    # chart[i][j] : dict[(label, depth)] -> (score, sig, tree)
    chart = [[dict() for _ in range(n + 1)] for _ in range(n)]

    def put(cell, label, depth, score, sig, tree):
        key = (label, depth)
        cur = cell.get(key)
        if cur is None or _better((score, sig), (cur[0], cur[1])):
            cell[key] = (score, sig, tree)
            return True
        return False

    def close_unary(cell, i, j):
        changed = True
        guard = 0
        while changed:
            changed = False
            guard += 1
            if guard > 64:
                break
            for (label, depth), (score, sig, tree) in list(cell.items()):
                for ri, r in unary:
                    if r.rhs[0] != label:
                        continue
                    nt = ParseTree(r.lhs, (tree,), span=(i, j))
                    nsig = (ri, ()) + (sig,)
                    if put(cell, r.lhs, depth + 1, score + r.weight, nsig, nt):
                        changed = True

    for i, word in enumerate(words):
        cell = chart[i][i + 1]
        for pos, wt, fb in grammar.tags_for(word):
            leaf = ParseTree(pos, token=Token(word, i), span=(i, i + 1))
            put(cell, pos, 1, wt, (-1, (i,), (grammar.tag_rank(pos),)), leaf)
        close_unary(cell, i, i + 1)

    for length in range(2, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            cell = chart[i][j]
            for ri, r in binary:
                b, c = r.rhs
                for k in range(i + 1, j):
                    for (lb, db), (sb, gb, tb) in chart[i][k].items():
                        if lb != b:
                            continue
                        for (lc, dc), (sc, gc, tc) in chart[k][j].items():
                            if lc != c:
                                continue
                            tree = ParseTree(r.lhs, (tb, tc), span=(i, j))
                            sig = (ri, (k,), gb, gc)
                            put(cell, r.lhs, 1 + max(db, dc),
                                sb + sc + r.weight, sig, tree)
            for ri, r in ternary:
                b, c, d = r.rhs
                for k in range(i + 1, j - 1):
                    for m in range(k + 1, j):
                        for (lb, db), (sb, gb, tb) in chart[i][k].items():
                            if lb != b:
                                continue
                            for (lc, dc), (sc, gc, tc) in chart[k][m].items():
                                if lc != c:
                                    continue
                                for (ld, dd), (sd, gd, td) in chart[m][j].items():
                                    if ld != d:
                                        continue
                                    tree = ParseTree(r.lhs, (tb, tc, td), span=(i, j))
                                    sig = (ri, (k, m), gb, gc, gd)
                                    put(cell, r.lhs, 1 + max(db, dc, dd),
                                        sb + sc + sd + r.weight, sig, tree)
            close_unary(cell, i, j)

    root_cell = chart[0][n]
    if not root_cell:
        raise NoParseError(_uncovered_span_message(chart, n, words), span=(0, n))
    best = None
    best_key = None
    for (label, depth), (score, sig, tree) in root_cell.items():
        key = (-score, depth, sig)
        if best_key is None or key < best_key:
            best_key = key
            best = tree
    return best


def _uncovered_span_message(chart, n, words):
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            if not chart[i][i + length]:
                return (f"no parse: no analysis for span [{i}, {i + length}) "
                        f"({' '.join(words[i:i + length])!r})")
    return "no parse covering the full utterance"


def count_fallback_tags(tree: ParseTree, grammar: Grammar) -> int:
    """How many leaves were tagged through the unknown-word fallback."""
    count = 0
    for node in tree.subtrees():
        if node.is_leaf and node.token.text not in grammar.lexicon:
            count += 1
    return count


def write_bracketed(tree: ParseTree) -> str:
    if tree.is_leaf:
        return f"({tree.label} {tree.token.text})"
    inner = " ".join(write_bracketed(c) for c in tree.children)
    return f"({tree.label} {inner})"


def read_bracketed(text: str) -> ParseTree:
    """Parse a Penn-style single-line bracketed tree."""
    s = text.strip()
    if not s:
        raise BracketError("empty tree text", 0)
    pos = [0]

    def skip_ws():
        while pos[0] < len(s) and s[pos[0]].isspace():
            pos[0] += 1

    def expect(ch):
        if pos[0] >= len(s) or s[pos[0]] != ch:
            raise BracketError(f"expected {ch!r}", pos[0])
        pos[0] += 1

    def read_symbol():
        start = pos[0]
        while pos[0] < len(s) and not s[pos[0]].isspace() and s[pos[0]] not in "()":
            pos[0] += 1
        if pos[0] == start:
            raise BracketError("expected a label or word", start)
        return s[start:pos[0]]

    counter = [0]

    def read_node():
        skip_ws()
        expect("(")
        skip_ws()
        label = read_symbol()
        skip_ws()
        if pos[0] < len(s) and s[pos[0]] == "(":
            children = []
            while True:
                skip_ws()
                if pos[0] >= len(s):
                    raise BracketError("unbalanced parentheses", pos[0])
                if s[pos[0]] == ")":
                    pos[0] += 1
                    break
                children.append(read_node())
            if not children:
                raise BracketError("node without children", pos[0])
            span = (children[0].span[0], children[-1].span[1])
            return ParseTree(label, children, span=span)
        word = read_symbol()
        skip_ws()
        expect(")")
        idx = counter[0]
        counter[0] += 1
        return ParseTree(label, token=Token(word.lower(), idx), span=(idx, idx + 1))

    tree = read_node()
    skip_ws()
    if pos[0] != len(s):
        raise BracketError("trailing text after tree", pos[0])
    return tree
