"""Rooted real trees as index arenas.

Nodes are integers; node 0 is the root with parent -1 and edge length 0.
Parents always precede children, so single passes in index order resolve
depths and subtree aggregates.  Leaves carry a common mass atom
(`leaf_mass`) except when flagged as truncation points, which are artefacts
of cutting a tree at a height and carry nothing.
"""
from __future__ import annotations

from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, EmptySpanError, PositionError

# edge positions for grafting: a node id, or (edge-child id, offset from the
# parent strictly inside the edge)
Position = Union[int, Tuple[int, float]]


class Tree:
    """Immutable rooted tree with edge lengths and flagged truncation leaves."""

    __slots__ = ("parent", "length", "trunc", "leaf_mass",
                 "_depth", "_ccount", "_children")

    def __init__(self, parent, length, trunc=None, leaf_mass: float = 1.0,
                 depth=None):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.length = np.asarray(length, dtype=np.float64)
        n = self.parent.shape[0]
        if trunc is None:
            trunc = np.zeros(n, dtype=bool)
        self.trunc = np.asarray(trunc, dtype=bool)
        self.leaf_mass = float(leaf_mass)
        if n == 0 or self.parent[0] != -1:
            raise DomainError("arena must start with the root (parent -1)")
        for arr in (self.parent, self.length, self.trunc):
            arr.flags.writeable = False
        self._depth = None if depth is None else np.asarray(depth, dtype=float)
        self._ccount = None
        self._children = None

    # -- basic structure -------------------------------------------------

    @property
    def n(self) -> int:
        return self.parent.shape[0]

    def children_counts(self) -> np.ndarray:
        if self._ccount is None:
            cc = np.bincount(self.parent[1:], minlength=self.n) if self.n > 1 \
                else np.zeros(1, dtype=np.int64)
            self._ccount = cc.astype(np.int64)
        return self._ccount

    def children(self) -> List[np.ndarray]:
        if self._children is None:
            order = np.argsort(self.parent[1:], kind="stable") + 1
            splits = np.searchsorted(self.parent[order], np.arange(self.n))
            out = []
            for i in range(self.n):
                hi = splits[i + 1] if i + 1 < self.n else len(order)
                out.append(order[splits[i]:hi])
            self._children = out
        return self._children

    def depths(self) -> np.ndarray:
        if self._depth is None:
            total = self.length.copy()
            hop = self.parent.copy()
            while np.any(hop >= 0):
                safe = np.maximum(hop, 0)
                live = hop >= 0
                total = total + np.where(live, total[safe], 0.0)
                hop = np.where(live, hop[safe], -1)
            self._depth = total
        return self._depth

    def height(self) -> float:
        return float(self.depths().max())

    def total_length(self) -> float:
        return float(self.length.sum())

    def leaf_mask(self) -> np.ndarray:
        """Mass-carrying leaves: childless, not truncation points, not the root."""
        m = (self.children_counts() == 0) & ~self.trunc
        m[0] = False
        return m

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.leaf_mask())

    def leaf_count(self) -> int:
        return int(self.leaf_mask().sum())

    def subtree_max_depth(self) -> np.ndarray:
        """For each node, the largest depth within its subtree."""
        out = self.depths().copy()
        par = self.parent
        for i in range(self.n - 1, 0, -1):
            p = par[i]
            if out[i] > out[p]:
                out[p] = out[i]
        return out

    # -- level geometry --------------------------------------------------

    def crossing_count(self, a: float, leaf_subset: Optional[np.ndarray] = None) -> int:
        """Number of points at distance exactly `a` from the root.

        Counts edges straddling the level (parent strictly below, child at or
        above).  With `leaf_subset` (boolean over nodes), only edges whose
        subtree touches the subset count; this is the level count of the
        subtree spanned by those leaves without building it.
        """
        if a < 0:
            raise DomainError("level must be >= 0")
        if a == 0:
            return 1
        d = self.depths()
        straddle = (d[self.parent[1:]] < a) & (d[1:] >= a)
        if leaf_subset is None:
            return int(straddle.sum())
        carrier = np.asarray(leaf_subset, dtype=np.int64).copy()
        par = self.parent
        for i in range(self.n - 1, 0, -1):
            carrier[par[i]] += carrier[i]
        return int((straddle & (carrier[1:] > 0)).sum())

    def leaves_at_level(self, a: float) -> int:
        return self.crossing_count(a)

    # -- surgery ---------------------------------------------------------

    def restrict(self, a: float) -> "Tree":
        return self.restrict_with_map(a)[0]

    def restrict_with_map(self, a: float) -> Tuple["Tree", np.ndarray]:
        """Cut everything above height `a`.

        Edges crossing the level end in fresh truncation leaves; nodes that
        sit exactly at the level keep their place but lose their offspring
        (flagged trunc if they had any).  Returns the cut tree and a map
        old node id -> new node id (-1 for removed nodes).
        """
        if a < 0:
            raise DomainError("cut height must be >= 0")
        d = self.depths()
        cc = self.children_counts()
        keep = d <= a
        nmap = np.full(self.n, -1, dtype=np.int64)
        parent: List[int] = []
        length: List[float] = []
        trunc: List[bool] = []
        depth: List[float] = []
        for i in range(self.n):
            if not keep[i]:
                continue
            nmap[i] = len(parent)
            parent.append(-1 if i == 0 else int(nmap[self.parent[i]]))
            length.append(float(self.length[i]))
            cut_here = d[i] == a and cc[i] > 0
            trunc.append(bool(self.trunc[i]) or cut_here)
            depth.append(float(d[i]))
        for i in range(1, self.n):
            p = self.parent[i]
            # d[p] == a is already a truncation leaf; no zero-length stub
            if keep[p] and not keep[i] and d[p] < a:
                parent.append(int(nmap[p]))
                length.append(float(a - d[p]))
                trunc.append(True)
                depth.append(float(a))
        return Tree(parent, length, trunc, self.leaf_mass, depth=depth), nmap

    def span(self, leaf_ids: Iterable[int]) -> "Tree":
        return self.span_with_map(leaf_ids)[0]

    def span_with_map(self, leaf_ids: Iterable[int]) -> Tuple["Tree", np.ndarray]:
        """Smallest subtree containing the root and the given leaves.

        Pass-through nodes are contracted, so the result has no unary
        internal nodes.  Returns the span and a map old -> new (-1 when the
        old node is not a node of the span; contracted nodes map to -1 too).
        """
        ids = np.asarray(sorted(set(int(i) for i in leaf_ids)), dtype=np.int64)
        if ids.size == 0:
            raise EmptySpanError("span of an empty leaf set")
        cc = self.children_counts()
        for i in ids:
            if i <= 0 or i >= self.n or cc[i] != 0:
                raise PositionError(f"node {i} is not a leaf")
        carrier = np.zeros(self.n, dtype=np.int64)
        carrier[ids] = 1
        par = self.parent
        for i in range(self.n - 1, 0, -1):
            carrier[par[i]] += carrier[i]
        marked = np.zeros(self.n, dtype=bool)
        marked[ids] = True
        # structural: root, marked leaves, and true branch points of the span
        branch = np.zeros(self.n, dtype=np.int64)
        for i in range(1, self.n):
            if carrier[i] > 0:
                branch[par[i]] += 1
        structural = marked | (branch >= 2)
        structural[0] = True
        nmap = np.full(self.n, -1, dtype=np.int64)
        anc = np.zeros(self.n, dtype=np.int64)      # nearest structural ancestor
        acc = np.zeros(self.n, dtype=np.float64)    # length back to it
        parent = [-1]
        length = [0.0]
        trunc = [bool(self.trunc[0])]
        nmap[0] = 0
        d = self.depths()
        depth = [float(d[0])]
        for i in range(1, self.n):
            if carrier[i] == 0:
                continue
            p = par[i]
            if structural[p]:
                anc[i] = p
                acc[i] = self.length[i]
            else:
                anc[i] = anc[p]
                acc[i] = acc[p] + self.length[i]
            if structural[i]:
                nmap[i] = len(parent)
                parent.append(int(nmap[anc[i]]))
                length.append(float(acc[i]))
                trunc.append(bool(self.trunc[i]))
                depth.append(float(d[i]))
        return Tree(parent, length, trunc, self.leaf_mass, depth=depth), nmap

    def graft(self, attachments: Sequence[Tuple[Position, "Tree"]]) -> "Tree":
        """Attach copies of other trees, merging each graft's root into the
        attachment point.  Mid-edge positions split the edge first.

        The host's leaf_mass is kept; total length is additive and leaf
        counts add up minus any attachment point that used to be a leaf.
        """
        parent = [int(x) for x in self.parent]
        length = [float(x) for x in self.length]
        trunc = [bool(x) for x in self.trunc]
        # split mid-edge positions, deepest offset first so earlier splits
        # keep their child ids valid
        pending: List[Tuple[int, "Tree"]] = []
        splits: List[Tuple[int, float, "Tree"]] = []
        for pos, g in attachments:
            if isinstance(pos, tuple):
                child, off = int(pos[0]), float(pos[1])
                if not 1 <= child < self.n:
                    raise PositionError(f"edge child {child} out of range")
                if not 0.0 < off < self.length[child]:
                    raise PositionError("edge offset must fall strictly inside the edge")
                splits.append((child, off, g))
            else:
                node = int(pos)
                if not 0 <= node < self.n:
                    raise PositionError(f"node {node} out of range")
                pending.append((node, g))
        # deepest offset first: each split shortens the segment that still
        # hangs off the original parent, so later (shallower) splits cut the
        # fresh node's edge, not the original child's
        cur: dict = {}
        last_off: dict = {}
        for child, off, g in sorted(splits, key=lambda t: (t[0], -t[1])):
            seg = cur.get(child, child)
            if off == last_off.get(child):
                pending.append((seg, g))
                continue
            mid = len(parent)
            parent.append(parent[seg])
            length.append(off)
            trunc.append(False)
            parent[seg] = mid
            length[seg] = length[seg] - off
            pending.append((mid, g))
            cur[child] = mid
            last_off[child] = off
        for node, g in pending:
            base = len(parent)
            gp = g.parent
            for j in range(1, g.n):
                parent.append(node if gp[j] == 0 else base + int(gp[j]) - 1)
                length.append(float(g.length[j]))
                trunc.append(bool(g.trunc[j]))
        return _retopo(parent, length, trunc, self.leaf_mass)

    # -- distances -------------------------------------------------------

    def distance(self, i: int, j: int) -> float:
        d = self.depths()
        a, b = int(i), int(j)
        da, db = d[a], d[b]
        out = da + db
        while a != b:
            if d[a] >= d[b]:
                a = self.parent[a]
            else:
                b = self.parent[b]
        return float(out - 2 * d[a])

    def distance_matrix(self, ids: Sequence[int]) -> np.ndarray:
        ids = list(ids)
        out = np.zeros((len(ids), len(ids)))
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                out[x, y] = out[y, x] = self.distance(ids[x], ids[y])
        return out

    # -- checks ----------------------------------------------------------

    def validate(self) -> None:
        """Assert arena invariants; used by tests and debug paths."""
        assert self.parent[0] == -1 and self.length[0] == 0.0
        if self.n > 1:
            assert np.all(self.parent[1:] >= 0)
            assert np.all(self.parent[1:] < np.arange(1, self.n))
            assert np.all(self.length[1:] > 0)
        cc = self.children_counts()
        assert not np.any(cc[1:] == 1), "unary internal node"
        assert not np.any(self.trunc & (cc > 0)), "truncation flag on internal node"


def _retopo(parent: List[int], length: List[float], trunc: List[bool],
            leaf_mass: float) -> Tree:
    """Relabel an arena so parents precede children (BFS order), contracting
    pass-through points (non-root nodes of degree one merge into their
    child's edge)."""
    n = len(parent)
    kids: List[List[int]] = [[] for _ in range(n)]
    for i in range(n):
        if parent[i] >= 0:
            kids[parent[i]].append(i)
    order = [0]
    for i in order:
        order.extend(kids[i])
    deg = [len(k) for k in kids]
    eff_parent = [0] * n
    eff_length = [0.0] * n
    nmap = np.full(n, -1, dtype=np.int64)
    new_parent = [-1]
    new_length = [0.0]
    new_trunc = [bool(trunc[0])]
    nmap[0] = 0
    for i in order[1:]:
        p = parent[i]
        if p != 0 and deg[p] == 1:
            eff_parent[i] = eff_parent[p]
            eff_length[i] = eff_length[p] + length[i]
        else:
            eff_parent[i] = p
            eff_length[i] = length[i]
        if deg[i] == 1:
            continue
        nmap[i] = len(new_parent)
        new_parent.append(int(nmap[eff_parent[i]]))
        new_length.append(eff_length[i])
        new_trunc.append(bool(trunc[i]))
    return Tree(new_parent, new_length, new_trunc, leaf_mass)


def bare_root(leaf_mass: float = 1.0) -> Tree:
    return Tree([-1], [0.0], [False], leaf_mass)


def single_edge(length: float, leaf_mass: float = 1.0, trunc: bool = False) -> Tree:
    return Tree([-1, 0], [0.0, float(length)], [False, trunc], leaf_mass)
