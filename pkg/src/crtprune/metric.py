"""Distances between finite measured trees, and an excursion coupling.

Prohorov distances between atomic measures are computed exactly: the
Strassen condition "mu(A) <= nu(A^eps) + eps for all A" reduces to a
bipartite maximum-flow feasibility check, and the optimum is found by
scanning flow values over the breakpoints of the arc set (the pairwise
distances) rather than by blind bisection.  Hausdorff distances are only
offered for nested pairs sharing one arena, where the identity embedding
makes them exact overhang maxima; together these give certified upper
bounds on the measured Gromov-Hausdorff-Prohorov distance of a nested
pair, pointwise or integrated against e^{-r} over root balls.

The excursion half of the module builds random real trees under a sampled
Brownian-type excursion: leaves sit at marked times, branch heights are
running minima between marks, and thinning the mark set by an auxiliary
uniform gives jointly nested trees across intensities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import maximum_flow

from .errors import DegenerateError, DomainError, EmbeddingError
from .tree import Tree

# scipy's flow solver works in int32; keep totals comfortably inside
_FLOW_BUDGET = 1 << 29
_INF_CAP = (1 << 31) - 1
_HAIR = 1e-12


@dataclass(frozen=True)
class AtomicMeasure:
    """Finitely many weighted points; ids index the caller's point universe."""
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        ms = np.asarray(self.masses, dtype=np.float64)
        if pts.shape != ms.shape or pts.ndim != 1:
            raise DomainError("points and masses must be matching 1-d arrays")
        if np.any(ms < 0):
            raise DomainError("atom masses must be >= 0")
        pts.flags.writeable = False
        ms.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", ms)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_pairs(cls, pairs) -> "AtomicMeasure":
        pairs = list(pairs)
        return cls(np.array([p for p, _ in pairs], dtype=np.int64),
                   np.array([m for _, m in pairs], dtype=np.float64))


def _bipartite_flow(cap_mu: np.ndarray, cap_nu: np.ndarray,
                    arcs: np.ndarray) -> int:
    """Max flow source -> mu atoms -> (allowed arcs) -> nu atoms -> sink,
    integer capacities.  `arcs` is a boolean (n_mu, n_nu) matrix."""
    a, b = len(cap_mu), len(cap_nu)
    if a == 0 or b == 0 or not arcs.any():
        return 0
    src, snk = 0, a + b + 1
    ii, jj = np.nonzero(arcs)
    row = np.concatenate([np.zeros(a, dtype=np.int64), ii + 1,
                          np.arange(b, dtype=np.int64) + a + 1])
    col = np.concatenate([np.arange(a, dtype=np.int64) + 1, jj + a + 1,
                          np.full(b, snk, dtype=np.int64)])
    dat = np.concatenate([cap_mu, np.full(len(ii), _INF_CAP, dtype=np.int64),
                          cap_nu])
    g = scipy.sparse.csr_matrix((dat, (row, col)), shape=(a + b + 2, a + b + 2),
                                dtype=np.int32)
    return int(maximum_flow(g, src, snk).flow_value)


def prohorov_atomic(mu: AtomicMeasure, nu: AtomicMeasure,
                    dist: np.ndarray, tol: float = 1e-9) -> float:
    """Exact Prohorov distance between two atomic measures.

    `dist` is a symmetric table indexed by point ids.  Masses are scaled to
    integers for the flow solver; the scale is the largest power of two
    keeping totals inside the solver's budget, so dyadic masses are handled
    exactly and the worst-case mass-rounding error is (n_atoms/scale),
    far below `tol` for any sane instance size.

    The halo is open (arcs need distance strictly below eps), and the value
    is symmetric in (mu, nu) because the flow network is.
    """
    dist = np.asarray(dist, dtype=np.float64)
    big = max(mu.total, nu.total)
    if big == 0.0:
        return 0.0
    scale = 2.0 ** math.floor(math.log2(_FLOW_BUDGET / big))
    cap_mu = np.round(mu.masses * scale).astype(np.int64)
    cap_nu = np.round(nu.masses * scale).astype(np.int64)
    # the answer is exact for the grid-rounded masses; bound the drift
    drift = (np.abs(mu.masses * scale - cap_mu).sum()
             + np.abs(nu.masses * scale - cap_nu).sum()) / scale
    if 2.0 * drift > tol:
        raise DomainError("mass grid rounding exceeds the requested tolerance; "
                          "pass a larger tol")
    m_int = int(max(cap_mu.sum(), cap_nu.sum()))
    if mu.n and nu.n:
        sub = dist[np.ix_(mu.points, nu.points)]
        thresholds = np.unique(sub)
    else:
        sub = np.zeros((mu.n, nu.n))
        thresholds = np.array([])
    flows = {}

    def flow_at(k: int) -> int:
        # arcs with distance <= thresholds[k-1]; k = 0 means no arcs
        if k not in flows:
            flows[k] = 0 if k == 0 else _bipartite_flow(
                cap_mu, cap_nu, sub <= thresholds[k - 1])
        return flows[k]

    def passes(k: int) -> bool:
        # threshold already covers the remaining deficiency
        t = -math.inf if k == 0 else thresholds[k - 1]
        return t >= (m_int - flow_at(k)) / scale

    kk = len(thresholds)
    lo, hi = 0, kk + 1
    while lo < hi:  # first k with passes(k), or kk + 1
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid + 1
    if lo > kk:
        return (m_int - flow_at(kk)) / scale
    best = max(thresholds[lo - 1], (m_int - flow_at(lo)) / scale)
    if lo >= 1:
        best = min(best, (m_int - flow_at(lo - 1)) / scale)
    return float(best)


# -- nested tree comparisons ---------------------------------------------------

def _check_keep(tree: Tree, keep: np.ndarray) -> np.ndarray:
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (tree.n,):
        raise EmbeddingError("retention flags must cover every node")
    if not keep[0]:
        raise EmbeddingError("the root must be retained")
    if tree.n > 1 and np.any(keep[1:] & ~keep[tree.parent[1:]]):
        raise EmbeddingError("a retained node hangs from a removed one")
    return keep


def hausdorff_nested(big: Tree, keep: np.ndarray) -> float:
    """Hausdorff distance from `big` to the sub-tree of retained nodes.

    Retention keeps whole edges, so the distance is the largest overhang of
    a removed branch over its retained attachment point.
    """
    keep = _check_keep(big, keep)
    if big.n == 1:
        return 0.0
    d = big.depths()
    tops = ~keep[1:] & keep[big.parent[1:]]
    if not tops.any():
        return 0.0
    ids = np.flatnonzero(tops) + 1
    reach = big.subtree_max_depth()[ids]
    return float(np.max(reach - d[big.parent[ids]]))


def _union_dist(big: Tree, mu: AtomicMeasure, nu: AtomicMeasure,
                dist: Optional[np.ndarray]
                ) -> Tuple[AtomicMeasure, AtomicMeasure, np.ndarray]:
    """Reindex both measures onto the union of their supports and return the
    matching compact distance table (computed from the tree when absent)."""
    for m in (mu, nu):
        if m.n and (m.points.min() < 0 or m.points.max() >= big.n):
            raise DomainError("atom ids outside the arena")
    union = np.unique(np.concatenate([mu.points, nu.points])) \
        if mu.n + nu.n else np.array([], dtype=np.int64)
    where = {int(p): i for i, p in enumerate(union)}

    def remap(m: AtomicMeasure) -> AtomicMeasure:
        pts = np.array([where[int(p)] for p in m.points], dtype=np.int64)
        return AtomicMeasure(pts, m.masses)

    if dist is None:
        table = big.distance_matrix(union)
    else:
        table = np.asarray(dist, dtype=np.float64)[np.ix_(union, union)]
    return remap(mu), remap(nu), table


def ghp_nested_upper(big: Tree, keep: np.ndarray, mu_big: AtomicMeasure,
                     mu_small: AtomicMeasure,
                     dist: Optional[np.ndarray] = None,
                     tol: float = 1e-9) -> float:
    """Upper bound on the measured Gromov-Hausdorff-Prohorov distance of a
    nested pair, from the identity embedding: Hausdorff overhang plus the
    Prohorov distance of the two mass measures inside `big` (the shared
    root contributes nothing).  `dist` optionally supplies node-indexed
    distances to avoid arena walks."""
    dh = hausdorff_nested(big, keep)
    mu_c, nu_c, table = _union_dist(big, mu_big, mu_small, dist)
    return dh + prohorov_atomic(mu_c, nu_c, table, tol=tol)


def ghp_localized(big: Tree, keep: np.ndarray, mu_big: AtomicMeasure,
                  mu_small: AtomicMeasure, r_max: float, grid_n: int = 64,
                  dist: Optional[np.ndarray] = None,
                  tol: float = 1e-9) -> float:
    """Integral of e^{-r} (1 and the nested bound at radius r) dr, by the
    trapezoid rule on [0, r_max] plus the full e^{-r_max} tail.

    Restriction to the root ball of radius r clips removed-branch overhangs
    at r and drops atoms deeper than r; distances between surviving atoms
    are unchanged, so the restricted bound needs no rebuilt trees.
    """
    if grid_n < 2:
        raise DomainError("need at least two grid points")
    keep = _check_keep(big, keep)
    d = big.depths()
    tops = np.flatnonzero(~keep[1:] & keep[big.parent[1:]]) + 1
    reach = big.subtree_max_depth()[tops] if len(tops) else np.array([])
    anchor = d[big.parent[tops]] if len(tops) else np.array([])
    mu_c, nu_c, table = _union_dist(big, mu_big, mu_small, dist)
    dep_mu = d[mu_big.points]
    dep_nu = d[mu_small.points]
    rs = np.linspace(0.0, r_max, grid_n)
    vals = np.empty(grid_n)
    for i, r in enumerate(rs):
        dh = float(np.max(np.minimum(reach, r) - anchor, initial=0.0))
        mu_r = AtomicMeasure(mu_c.points[dep_mu <= r], mu_c.masses[dep_mu <= r])
        nu_r = AtomicMeasure(nu_c.points[dep_nu <= r], nu_c.masses[dep_nu <= r])
        dp = prohorov_atomic(mu_r, nu_r, table, tol=tol)
        vals[i] = math.exp(-r) * min(1.0, dh + dp)
    return float(np.trapezoid(vals, rs) + math.exp(-r_max))


# -- excursion coupling --------------------------------------------------------

def excursion_path(n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized Brownian-type excursion on a uniform grid over [0, 1]:
    a bridge cyclically shifted at its minimum, nonnegative with zero ends."""
    if n_steps < 3:
        raise DomainError("need at least three path points")
    dt = 1.0 / (n_steps - 1)
    w = np.concatenate([[0.0],
                        np.cumsum(rng.standard_normal(n_steps - 1))]) * math.sqrt(dt)
    b = w - np.linspace(0.0, 1.0, n_steps) * w[-1]
    m = int(np.argmin(b[:-1]))
    e = np.concatenate([b[m:-1], b[:m + 1]]) - b[m]
    return e


def _gap_minima(f: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.empty(len(idx) - 1)
    for j in range(len(idx) - 1):
        out[j] = f[idx[j]:idx[j + 1] + 1].min()
    return out


def excursion_tree_from_marks(f: np.ndarray, idx: np.ndarray,
                              leaf_mass: float) -> Tuple[Tree, np.ndarray]:
    """Tree spanned by marked times under the path: leaf depths are path
    values, branch depths are running minima between consecutive marks.
    Returns the tree and the leaf node id of each mark in time order."""
    idx = np.asarray(idx, dtype=np.int64)
    k = len(idx)
    if k == 0:
        raise DegenerateError("no marks to span")
    if np.any(idx[1:] <= idx[:-1]) or idx[0] < 1 or idx[-1] >= len(f) - 1:
        raise DomainError("marks must be sorted, unique, interior")
    depth_leaf = f[idx]
    gap = _gap_minima(f, idx)
    parent: List[int] = [-1]
    length: List[float] = [0.0]
    leaf_nodes = np.empty(k, dtype=np.int64)
    # explicit stack; ties in the gap minima turn into multifurcations.  A
    # mark that is itself the minimum of its gap sits on another leaf's
    # ancestral line; it gets a hair edge so the arena stays valid.
    todo: List[Tuple[int, int, int, float]] = [(0, k - 1, 0, 0.0)]
    while todo:
        lo, hi, up, up_depth = todo.pop()
        if lo == hi:
            parent.append(up)
            length.append(max(float(depth_leaf[lo] - up_depth), _HAIR))
            leaf_nodes[lo] = len(parent) - 1
            continue
        m_star = gap[lo:hi].min()
        if m_star > up_depth:
            parent.append(up)
            length.append(float(m_star - up_depth))
            up = len(parent) - 1
        cuts = [j for j in range(lo, hi) if gap[j] == m_star]
        bounds = [lo] + [c + 1 for c in cuts] + [hi + 1]
        for s, t in zip(bounds[:-1], bounds[1:]):
            todo.append((s, t - 1, up, m_star))
    return Tree(parent, length, None, leaf_mass), leaf_nodes


def excursion_leaf_distances(f: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Pairwise tree distances between the marked leaves, straight from the
    path: d(i, j) = f_i + f_j - 2 min f on [t_i, t_j]."""
    idx = np.asarray(idx, dtype=np.int64)
    k = len(idx)
    lv = f[idx]
    out = np.zeros((k, k))
    if k < 2:
        return out
    gap = _gap_minima(f, idx)
    for i in range(k - 1):
        mins = np.minimum.accumulate(gap[i:])
        out[i, i + 1:] = lv[i] + lv[i + 1:] - 2.0 * mins
        out[i + 1:, i] = out[i, i + 1:]
    return out


def excursion_hausdorff(f: np.ndarray, idx_small: np.ndarray,
                        idx_big: np.ndarray) -> float:
    """Hausdorff distance between the trees of two nested mark sets,
    computed on the path: each extra leaf overhangs the small span by its
    height minus the best running minimum toward a neighbouring kept mark."""
    small = np.asarray(idx_small, dtype=np.int64)
    big = np.asarray(idx_big, dtype=np.int64)
    if len(small) == 0:
        raise DegenerateError("no marks to span")
    if not np.isin(small, big).all():
        raise DomainError("mark sets are not nested")
    pos = np.searchsorted(small, big)
    worst = 0.0
    for t, p in zip(big, pos):
        best = -math.inf
        if p > 0:
            best = f[small[p - 1]:t + 1].min()
        if p < len(small):
            best = max(best, f[t:small[p] + 1].min())
        worst = max(worst, float(f[t] - best))
    return worst


@dataclass(frozen=True)
class ExcursionForest:
    """Nested trees read from one excursion: marks for a smaller intensity
    are the subset of the master marks whose auxiliary uniform is below the
    intensity ratio, so the spanned trees embed into each other."""
    path: np.ndarray
    lam_list: Tuple[float, ...]
    master_idx: np.ndarray
    master_aux: np.ndarray
    sel: Tuple[np.ndarray, ...]
    trees: Tuple[Tree, ...]
    leaf_nodes: Tuple[np.ndarray, ...]

    def tree(self, i: int) -> Tree:
        return self.trees[i]

    def mark_indices(self, i: int) -> np.ndarray:
        return self.master_idx[self.sel[i]]

    def _positions_in(self, small: int, big: int) -> np.ndarray:
        if not (0 <= small < big < len(self.lam_list)):
            raise DomainError("need indices small < big into lam_list")
        rows_big = np.flatnonzero(self.sel[big])
        rows_small = np.flatnonzero(self.sel[small])
        if not np.isin(rows_small, rows_big).all():
            raise DomainError("mark sets are not nested")
        return np.searchsorted(rows_big, rows_small)

    def keep_mask(self, small: int, big: int) -> np.ndarray:
        """Retention flags over the big tree's arena for the small tree."""
        t = self.trees[big]
        keep = np.zeros(t.n, dtype=bool)
        keep[self.leaf_nodes[big][self._positions_in(small, big)]] = True
        par = t.parent
        for i in range(t.n - 1, 0, -1):
            if keep[i]:
                keep[par[i]] = True
        keep[0] = True
        return keep

    def measure(self, i: int) -> AtomicMeasure:
        lam = self.lam_list[i]
        k = len(self.leaf_nodes[i])
        return AtomicMeasure(self.leaf_nodes[i], np.full(k, 1.0 / lam))

    def measure_in(self, small: int, big: int) -> AtomicMeasure:
        """The small tree's leaf measure carried by big-arena node ids."""
        nodes = self.leaf_nodes[big][self._positions_in(small, big)]
        return AtomicMeasure(nodes, np.full(len(nodes),
                                            1.0 / self.lam_list[small]))


def sample_excursion_subtrees(n_steps: int, lam_list: Sequence[float],
                              rng: np.random.Generator,
                              allow_empty: bool = False) -> ExcursionForest:
    """One excursion, one master Poisson mark set at the largest intensity,
    and the nested spanned trees for every requested intensity."""
    lam_list = tuple(float(x) for x in lam_list)
    if n_steps < 1000:
        raise DomainError("path grid too coarse; use n_steps >= 1000")
    if not lam_list or any(x <= 0 for x in lam_list) \
            or any(b <= a for a, b in zip(lam_list, lam_list[1:])):
        raise DomainError("intensities must be ascending and positive")
    f = excursion_path(n_steps, rng)
    lam_max = lam_list[-1]
    n_marks = int(rng.poisson(lam_max))
    u = rng.random(n_marks)
    aux = rng.random(n_marks)
    idx = np.clip(np.round(u * (n_steps - 1)).astype(np.int64), 1, n_steps - 2)
    # grid collisions merge to one mark keeping the smallest auxiliary, so
    # thinned mark sets stay exactly nested
    order = np.lexsort((aux, idx))
    idx, aux = idx[order], aux[order]
    first = np.ones(len(idx), dtype=bool)
    first[1:] = idx[1:] != idx[:-1]
    idx, aux = idx[first], aux[first]
    sel, trees, leaves = [], [], []
    for lam in lam_list:
        s = aux <= lam / lam_max
        sel.append(s)
        if not s.any():
            if not allow_empty:
                raise DegenerateError(
                    f"no marks at intensity {lam}; resample or allow empties")
            trees.append(Tree([-1], [0.0], None, 1.0 / lam))
            leaves.append(np.array([], dtype=np.int64))
            continue
        t, ln = excursion_tree_from_marks(f, idx[s], 1.0 / lam)
        trees.append(t)
        leaves.append(ln)
    return ExcursionForest(f, lam_list, idx, aux, tuple(sel), tuple(trees),
                           tuple(leaves))
