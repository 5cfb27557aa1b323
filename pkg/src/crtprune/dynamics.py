"""Pruning marks and regrafting moves.

A sampled tree is decorated once with all the randomness the pruning
dynamic ever needs: each edge carries the time its first mark appears and
where on the edge it sits, and each branch point carries the time at which
its offspring get severed.  Cutting at any theta up to the mark horizon is
then a deterministic function of the decorated tree, so a whole trajectory
of prunings is coupled the way the dynamic demands.

Growth runs the other way: a tree at level theta turns into one at level
q < theta by grafting fresh subtrees onto its leaves.

Mark laws, with eta the inverse of the mechanism at the tree's level:

  edge of length l:    first mark time T solves psi'(eta+T) = psi'(eta) + E/l
                       with E standard exponential; position uniform on the
                       edge, independent.
  branch point, k>=2:  kill time has CDF 1 - psi^(k)(eta+z)/psi^(k)(eta),
                       with an atom at infinity when beta > 0 and k = 2.

Both inverses are monotone Newton iterations from below: psi' is concave
increasing and log|psi^(k)| is convex decreasing on the domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from . import mechanism as mech_mod
from .errors import ConvergenceError, DomainError, HorizonError, TruncationError
from .galton_watson import Exceeded, FlatForest, OffspringLaw, TreeLaw, sample_forest, tree_law
from .mechanism import Mechanism
from .tree import Tree, _retopo

_NEWTON_CAP = 200


@dataclass
class FlatMarks:
    t_edge: np.ndarray   # first mark time per row's edge; inf past horizon
    u_edge: np.ndarray   # mark position, distance from the parent; nan if unmarked
    xi: np.ndarray       # branch-point kill time; inf when none before horizon
    horizon: float


@dataclass
class MarkedTree:
    tree: Tree
    mech: Mechanism
    lam: float
    eta: float
    marks: FlatMarks

    @property
    def horizon(self) -> float:
        return self.marks.horizon


def _edge_mark_times(mech: Mechanism, eta: float, lengths: np.ndarray,
                     horizon: float, rng: np.random.Generator
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """First mark time per edge, inf when it lands past the horizon."""
    e = rng.exponential(1.0, lengths.size)
    base = mech_mod.evaluate(mech, eta, 1)
    reach = mech_mod.evaluate(mech, eta + horizon, 1) - base
    hit = e <= lengths * reach
    t = np.full(lengths.size, np.inf)
    if not hit.any():
        return t, hit
    target = base + e[hit] / lengths[hit]
    if not mech.atoms and mech.stable_c == 0:
        t[hit] = (target - base) / (2.0 * mech.beta)
        return t, hit
    # psi' is concave increasing, so Newton from zero rises to the root
    x = np.zeros(target.size)
    tol = 1e-12 * np.abs(target)
    for _ in range(_NEWTON_CAP):
        f = mech_mod.evaluate(mech, eta + x, 1) - target
        if np.all(np.abs(f) <= tol):
            break
        x = x - f / mech_mod.evaluate(mech, eta + x, 2)
    else:
        raise ConvergenceError("edge mark inversion stalled")
    t[hit] = x
    return t, hit


def _node_kill_times(mech: Mechanism, eta: float, kappas: np.ndarray,
                     horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Kill time per branch point (kappas are child counts, all >= 2)."""
    v = rng.random(kappas.size)
    xi = np.full(kappas.size, np.inf)
    if not mech.atoms and mech.stable_c == 0:
        return xi  # |psi''| constant: branch points are never severed
    for k in np.unique(kappas):
        k = int(k)
        sel = kappas == k
        la0 = mech_mod.log_abs_deriv(mech, eta, k)
        ratio_h = math.exp(mech_mod.log_abs_deriv(mech, eta + horizon, k) - la0)
        kill = sel & (v < 1.0 - ratio_h)
        if not kill.any():
            continue
        target = np.log1p(-v[kill]) + la0
        x = np.zeros(target.size)
        for _ in range(_NEWTON_CAP):
            g = mech_mod.log_abs_deriv(mech, eta + x, k)
            if np.all(np.abs(g - target) <= 1e-10):
                break
            gp = -np.exp(mech_mod.log_abs_deriv(mech, eta + x, k + 1) - g)
            x = x + (target - g) / gp
        else:
            raise ConvergenceError("branch kill inversion stalled")
        xi[kill] = x
    return xi


def mark_flat(ff: FlatForest, mech: Mechanism, eta: float, horizon: float,
              rng: np.random.Generator) -> FlatMarks:
    """Decorate a whole flat forest.  Draw order: edge exponentials, edge
    positions, branch uniforms; all in row order."""
    if not horizon > 0:
        raise DomainError("mark horizon must be positive")
    n = ff.rep.size
    t_edge = np.full(n, np.inf)
    u_edge = np.full(n, np.nan)
    edges = ff.par >= 0
    t, hit = _edge_mark_times(mech, eta, ff.length[edges], horizon, rng)
    pos = ff.length[edges] * rng.random(int(edges.sum()))
    t_edge[edges] = t
    u_edge[np.flatnonzero(edges)[hit]] = pos[hit]
    xi = np.full(n, np.inf)
    branch = ff.child_counts >= 2
    branch[:ff.n_rep] = False  # roots have a single child; never severed
    if branch.any():
        xi[branch] = _node_kill_times(mech, eta, ff.child_counts[branch],
                                      horizon, rng)
    return FlatMarks(t_edge, u_edge, xi, horizon)


def mark_tree(tree: Tree, mech: Mechanism, lam: float, horizon: float,
              rng: np.random.Generator) -> MarkedTree:
    """Single-tree marking; same draw order as mark_flat."""
    if not horizon > 0:
        raise DomainError("mark horizon must be positive")
    eta = mech_mod.invert(mech, lam)
    n = tree.n
    t_edge = np.full(n, np.inf)
    u_edge = np.full(n, np.nan)
    if n > 1:
        t, hit = _edge_mark_times(mech, eta, tree.length[1:], horizon, rng)
        pos = tree.length[1:] * rng.random(n - 1)
        t_edge[1:] = t
        u_edge[1 + np.flatnonzero(hit)] = pos[hit]
    xi = np.full(n, np.inf)
    cc = tree.children_counts()
    branch = cc >= 2
    branch[0] = False
    if branch.any():
        xi[branch] = _node_kill_times(mech, eta, cc[branch], horizon, rng)
    return MarkedTree(tree, mech, lam, eta, FlatMarks(t_edge, u_edge, xi, horizon))


def _blocks(par: np.ndarray, t_edge: np.ndarray, xi: np.ndarray,
            gen_bounds=None) -> np.ndarray:
    """Time at which each node is first disconnected from the root."""
    block = np.full(par.size, np.inf)
    if gen_bounds is not None:
        for lo, hi in gen_bounds[1:]:
            rows = np.arange(lo, hi)
            p = par[rows]
            block[rows] = np.minimum(np.minimum(block[p], xi[p]), t_edge[rows])
    else:
        for i in range(par.size):
            p = par[i]
            if p >= 0:
                block[i] = min(block[p], xi[p], t_edge[i])
    return block


def pruned_law(mech: Mechanism, lam: float, theta: float) -> TreeLaw:
    """Law of the tree pruned at theta: the mechanism recentred at theta,
    at level psi_theta(eta)."""
    eta = mech_mod.invert(mech, lam)
    lam_theta = float(mech_mod.evaluate(mech, theta + eta, 0)
                      - mech_mod.evaluate(mech, theta, 0))
    if not lam_theta > 0:
        raise DomainError("pruning level leaves no mass; theta at or below "
                          "the detachment point")
    return tree_law(mech_mod.shift(mech, theta), lam_theta)


def prune_at(m: MarkedTree, theta: float) -> Tree:
    """The tree cut at time theta.

    Alive nodes keep whole edges; a marked edge below an alive parent turns
    into a mass leaf at the mark position; an alive branch point whose kill
    time has passed keeps nothing above it.  theta = 0 returns the base tree.
    """
    if theta < 0 or theta > m.horizon:
        raise HorizonError(f"theta must lie in [0, {m.horizon}]")
    if theta == 0:
        return m.tree
    t = m.tree
    mk = m.marks
    block = _blocks(t.parent, mk.t_edge, mk.xi, None)
    alive = block > theta
    lam_theta = float(mech_mod.evaluate(m.mech, theta + m.eta, 0)
                      - mech_mod.evaluate(m.mech, theta, 0))
    parent: List[int] = []
    length: List[float] = []
    trunc: List[bool] = []
    nmap = np.full(t.n, -1, dtype=np.int64)
    for i in range(t.n):
        if not alive[i]:
            continue
        nmap[i] = len(parent)
        parent.append(-1 if i == 0 else int(nmap[t.parent[i]]))
        length.append(float(t.length[i]))
        trunc.append(bool(t.trunc[i]))
    for i in range(1, t.n):
        p = t.parent[i]
        if alive[p] and not alive[i] and mk.xi[p] > theta and mk.t_edge[i] <= theta:
            parent.append(int(nmap[p]))
            length.append(float(mk.u_edge[i]))
            trunc.append(False)
    return _retopo(parent, length, trunc, 1.0 / lam_theta)


def prune_trajectory(m: MarkedTree, thetas: Sequence[float]) -> List[Tree]:
    """Coupled cuts of one decorated tree at several times."""
    return [prune_at(m, th) for th in thetas]


def pruned_mass_counts(ff: FlatForest, mk: FlatMarks, theta: float
                       ) -> np.ndarray:
    """Mass-leaf count of each replicate's pruned tree, without building it.

    Counts surviving original mass leaves, alive branch points whose kill
    time has passed, and cut edges below alive parents.  Replicates flagged
    exceeded in the forest still get a number; the caller drops them.
    """
    if theta < 0 or theta > mk.horizon:
        raise HorizonError(f"theta must lie in [0, {mk.horizon}]")
    block = _blocks(ff.par, mk.t_edge, mk.xi, ff.gen_bounds)
    alive = block > theta
    cc = ff.child_counts
    is_root = ff.par < 0
    orig_leaf = alive & (cc == 0) & ~ff.trunc & ~is_root
    node_cut = alive & (cc >= 2) & (mk.xi <= theta)
    p = np.maximum(ff.par, 0)
    stub = (~is_root & alive[p] & ~alive
            & (mk.xi[p] > theta) & (mk.t_edge <= theta))
    total = np.zeros(ff.n_rep, dtype=np.int64)
    for mask in (orig_leaf, node_cut, stub):
        total += np.bincount(ff.rep[mask], minlength=ff.n_rep)
    return total


# -- growth ------------------------------------------------------------------

def growth_offspring_law(mech: Mechanism, lam: float, theta: float, q: float,
                         tail_tol: float = 1e-12, max_terms: int = 1 << 20
                         ) -> OffspringLaw:
    """Number of fresh subtrees grafted on each leaf when the tree at theta
    grows into the tree at q < theta.

    p(0) = psi_q(eta)/psi_theta(eta), p(1) = eta (psi'(theta+eta) -
    psi'(q+eta)) / psi_theta(eta), and for k >= 2 the difference of k-th
    derivatives at q+eta and theta+eta; a pure quadratic mechanism stops at
    one.  q must stay above the level's detachment point, where the grafted
    trees would stop being finite.
    """
    if not q < theta:
        raise DomainError("growth runs downward: need q < theta")
    eta = mech_mod.invert(mech, lam)
    lam_q = float(mech_mod.evaluate(mech, q + eta, 0) - mech_mod.evaluate(mech, q, 0))
    if not lam_q > 0:
        raise DomainError("target level q at or below the detachment point")
    denom = float(mech_mod.evaluate(mech, theta + eta, 0)
                  - mech_mod.evaluate(mech, theta, 0))
    if not denom > 0:
        raise DomainError("source level theta at or below the detachment point")
    values = [0]
    probs = [lam_q / denom]
    p1 = eta * float(mech_mod.evaluate(mech, theta + eta, 1)
                     - mech_mod.evaluate(mech, q + eta, 1)) / denom
    if p1 > 0:
        values.append(1)
        probs.append(p1)
    remaining = 1.0 - sum(probs)
    log_eta = math.log(eta)
    k = 2
    while remaining > tail_tol:
        if k > max_terms:
            raise TruncationError(
                f"growth series still carries {remaining:.3g} after {max_terms} terms")
        la_q = mech_mod.log_abs_deriv(mech, q + eta, k)
        la_t = mech_mod.log_abs_deriv(mech, theta + eta, k)
        if la_q == -math.inf and not mech.atoms and mech.stable_c == 0:
            break
        ratio = math.exp(la_t - la_q) if la_q > -math.inf else 1.0
        if ratio < 1.0:
            p = math.exp(la_q + math.log1p(-ratio) + k * log_eta
                         - math.log(denom) - math.lgamma(k + 1))
            if p > 0:
                values.append(k)
                probs.append(p)
                remaining -= p
        k += 1
    mean = eta * float(mech_mod.evaluate(mech, theta, 1)
                       - mech_mod.evaluate(mech, q, 1)) / denom
    probs_arr = np.asarray(probs)
    return OffspringLaw(np.asarray(values), probs_arr / probs_arr.sum(), mean,
                        max(remaining, 0.0))


def grow_step(tree: Tree, mech: Mechanism, lam: float, theta: float, q: float,
              rng: np.random.Generator, node_cap: int = 1 << 20
              ) -> Union[Tree, Exceeded]:
    """Grow a tree at level theta down to level q by grafting.

    Each mass leaf receives an independent number of fresh trees of the
    q-recentred law, merged at the leaf; positions and masses of everything
    else are untouched.  The returned tree carries the q-level leaf mass.
    """
    glaw = growth_offspring_law(mech, lam, theta, q)
    piece_law = pruned_law(mech, lam, q)
    leaves = tree.leaf_ids()
    k = glaw.draw(rng, leaves.size)
    total = int(k.sum())
    if total == 0:
        return Tree(tree.parent, tree.length, tree.trunc, piece_law.leaf_mass)
    pieces = sample_forest(piece_law, total, rng, node_cap=node_cap)
    blown = [p for p in pieces if isinstance(p, Exceeded)]
    if blown:
        return Exceeded(int(sum(b.nodes for b in blown)))
    attach = []
    at = 0
    for leaf, cnt in zip(leaves, k):
        for _ in range(int(cnt)):
            attach.append((int(leaf), pieces[at]))
            at += 1
    grown = tree.graft(attach)
    return Tree(grown.parent, grown.length, grown.trunc, piece_law.leaf_mass)
