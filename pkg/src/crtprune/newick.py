"""Canonical text form for trees.

Leaves are labelled `L` (mass leaf) or `X` (truncation stub), internal nodes
`I`; every non-root node carries `:length`.  The root is the outermost pair
of parentheses and has neither label nor length: `();` is a bare root,
`(L:1);` a single edge.  Children are ordered by (subtree height, edge
length, text), which makes the output a fixed point of parse-then-serialize.
"""
from __future__ import annotations

import re
from typing import List

from .errors import ParseError
from .tree import Tree

_NUM = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_LABEL = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _fmt(x: float) -> str:
    # shortest digits that round-trip exactly
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def serialize(tree: Tree) -> str:
    if tree.n == 1:
        return "();"
    smd = tree.subtree_max_depth()
    kids = tree.children()
    text: List[str] = [""] * tree.n
    for i in range(tree.n - 1, 0, -1):
        ch = kids[i]
        if ch.size == 0:
            label = "X" if tree.trunc[i] else "L"
            text[i] = f"{label}:{_fmt(tree.length[i])}"
        else:
            parts = sorted(ch, key=lambda c: (smd[c], tree.length[c], text[c]))
            inner = ",".join(text[c] for c in parts)
            text[i] = f"({inner})I:{_fmt(tree.length[i])}"
    root_kids = sorted(kids[0], key=lambda c: (smd[c], tree.length[c], text[c]))
    return "(" + ",".join(text[c] for c in root_kids) + ");"


class _Cursor:
    __slots__ = ("s", "pos")

    def __init__(self, s: str):
        self.s = s
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.s) and self.s[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.s[self.pos] if self.pos < len(self.s) else ""

    def take(self, ch: str) -> None:
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def number(self) -> float:
        self.skip_ws()
        m = _NUM.match(self.s, self.pos)
        if not m:
            raise ParseError("expected a number", self.pos)
        self.pos = m.end()
        return float(m.group())

    def label(self) -> str:
        self.skip_ws()
        m = _LABEL.match(self.s, self.pos)
        if not m:
            return ""
        self.pos = m.end()
        return m.group()


def parse(text: str, leaf_mass: float = 1.0) -> Tree:
    """Parse the canonical form back into a tree.

    Raises ParseError with the byte offset of the first offending character.
    """
    cur = _Cursor(text)
    parent = [-1]
    length = [0.0]
    trunc = [False]
    cur.take("(")
    # stack of (node id, children so far); root closes with ';'
    stack = [[0, 0]]
    while stack:
        nid, nkids = stack[-1]
        c = cur.peek()
        if c == ")":
            cur.take(")")
            done = stack.pop()
            if len(stack) == 0:
                cur.take(";")
                cur.skip_ws()
                if cur.pos != len(text):
                    raise ParseError("trailing characters after ';'", cur.pos)
                break
            if done[1] < 2:
                raise ParseError("internal node needs at least two children",
                                 cur.pos - 1)
            at = cur.pos
            lab = cur.label()
            if lab not in ("", "I"):
                raise ParseError(f"label {lab!r} not allowed on an internal node", at)
            cur.take(":")
            at = cur.pos
            val = cur.number()
            if not val > 0:
                raise ParseError("edge length must be positive", at)
            length[done[0]] = val
            stack[-1][1] += 1
            continue
        if nkids > 0:
            cur.take(",")
            c = cur.peek()
        if c == "(":
            cur.take("(")
            parent.append(nid)
            length.append(-1.0)
            trunc.append(False)
            stack.append([len(parent) - 1, 0])
            continue
        at = cur.pos
        lab = cur.label()
        if lab not in ("", "L", "X"):
            raise ParseError(f"label {lab!r} not allowed on a leaf", at)
        cur.take(":")
        at = cur.pos
        val = cur.number()
        if not val > 0:
            raise ParseError("edge length must be positive", at)
        parent.append(nid)
        length.append(val)
        trunc.append(lab == "X")
        stack[-1][1] += 1
    return Tree(parent, length, trunc, leaf_mass)
