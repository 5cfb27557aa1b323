"""Discrete branching trees attached to a mechanism.

A mechanism psi and a positive level lam induce a tree law: the root has a
single child, every individual branches independently with the offspring
distribution read off the derivatives of psi at eta = psi^{-1}(lam), edges
are exponential with rate psi'(eta), and each leaf carries mass 1/lam.

Samplers here are batch-first: one flat generation-major pass grows many
replicates at once, and per-replicate trees are only materialised when the
caller wants geometry.  Leaf-count statistics at large replicate counts go
through the population chain instead, which never stores nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple, Union

import numpy as np

from . import mechanism as mech_mod
from .errors import ConvergenceError, DegenerateError, DomainError, TruncationError
from .mechanism import Mechanism
from .tree import Tree


@dataclass(frozen=True)
class Exceeded:
    """Replicate abandoned after passing its node budget."""
    nodes: int


@dataclass(frozen=True)
class OffspringLaw:
    values: np.ndarray   # ascending ints, no value with zero probability
    probs: np.ndarray    # sums to one (tail renormalised away)
    mean: float          # exact mean, not the truncated first moment
    tail_mass: float     # series mass dropped past the last value

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int64))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        if self.values.shape != self.probs.shape or self.values.size == 0:
            raise DomainError("offspring law needs matching values and probs")
        if np.any(self.probs <= 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise DomainError("offspring probabilities must be positive and sum to one")

    def pgf(self, r):
        r = np.asarray(r, dtype=np.float64)
        out = np.tensordot(self.probs, r[None, ...] ** self.values.reshape(
            (-1,) + (1,) * r.ndim), axes=(0, 0))
        return float(out) if out.ndim == 0 else out

    def pgf_prime(self, r):
        r = np.asarray(r, dtype=np.float64)
        kv = self.values.reshape((-1,) + (1,) * r.ndim)
        with np.errstate(divide="ignore", invalid="ignore"):
            powers = np.where(kv >= 1, r[None, ...] ** np.maximum(kv - 1, 0), 0.0)
        out = np.tensordot(self.probs * self.values, powers, axes=(0, 0))
        return float(out) if out.ndim == 0 else out

    @cached_property
    def _alias(self) -> Tuple[np.ndarray, np.ndarray]:
        return _vose(self.probs)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        prob, alias = self._alias
        idx = rng.integers(0, len(prob), size=size)
        take = rng.random(size) < prob[idx]
        return self.values[np.where(take, idx, alias[idx])]

    @cached_property
    def size_biased(self) -> "OffspringLaw":
        """Law with weights k p_k / mean; used for bushes along spines."""
        if not self.mean > 0:
            raise DegenerateError("size-biasing needs a positive mean")
        w = self.values * self.probs
        keep = w > 0
        v, w = self.values[keep], w[keep]
        return OffspringLaw(v, w / w.sum(), float((v * w).sum() / w.sum()), 0.0)


def _vose(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = len(probs)
    prob = np.empty(n)
    alias = np.zeros(n, dtype=np.int64)
    scaled = list(probs * n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] += scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i] = 1.0
    return prob, alias


@dataclass(frozen=True)
class TreeLaw:
    mech: Mechanism
    lam: float
    eta: float
    edge_rate: float     # psi'(eta)
    offspring: OffspringLaw

    @property
    def leaf_mass(self) -> float:
        return 1.0 / self.lam


def offspring_law(mech: Mechanism, lam: float, tail_tol: float = 1e-12,
                  max_terms: int = 1 << 20) -> OffspringLaw:
    """Offspring distribution of the tree law at level lam.

    p(0) = lam / (eta psi'(eta)), p(1) = 0, and for k >= 2
    p(k) = |psi^(k)(eta)| eta^(k-1) / (psi'(eta) k!).  The series is cut once
    the remaining mass drops below tail_tol; mechanisms with a stable term
    have a polynomial tail and need a looser tolerance than the default.
    """
    if not lam > 0:
        raise DomainError("tree law needs lam > 0")
    eta = mech_mod.invert(mech, lam)
    rate = mech_mod.evaluate(mech, eta, 1)
    if not rate > 0:
        raise DegenerateError("branching rate psi'(eta) must be positive")
    log_eta = math.log(eta)
    log_rate = math.log(rate)
    values = [0]
    probs = [lam / (eta * rate)]
    remaining = 1.0 - probs[0]
    k = 2
    while remaining > tail_tol:
        if k > max_terms:
            raise TruncationError(
                f"offspring series still carries {remaining:.3g} after "
                f"{max_terms} terms; loosen tail_tol")
        lp = mech_mod.log_abs_deriv(mech, eta, k)
        if lp > -math.inf:
            p = math.exp(lp + (k - 1) * log_eta - log_rate - math.lgamma(k + 1))
            if p > 0:
                values.append(k)
                probs.append(p)
                remaining -= p
        elif k > 2 and not mech.atoms and mech.stable_c == 0:
            break  # pure quadratic: series is exactly over
        k += 1
    tail = max(remaining, 0.0)
    probs = np.asarray(probs)
    mean = 1.0 - mech_mod.evaluate(mech, 0.0, 1) / rate
    return OffspringLaw(np.asarray(values), probs / probs.sum(), mean, tail)


def offspring_probability(mech: Mechanism, lam: float, k: int) -> float:
    """Single offspring coefficient p(k) at level lam, no series truncation.

    Same closed form as offspring_law term by term, so heavy-tailed
    mechanisms get full float accuracy at any k without paying for the
    whole series.
    """
    if not lam > 0:
        raise DomainError("tree law needs lam > 0")
    if k < 0:
        raise DomainError("offspring count must be non-negative")
    eta = mech_mod.invert(mech, lam)
    rate = mech_mod.evaluate(mech, eta, 1)
    if not rate > 0:
        raise DegenerateError("branching rate psi'(eta) must be positive")
    if k == 0:
        return lam / (eta * rate)
    if k == 1:
        return 0.0
    lp = mech_mod.log_abs_deriv(mech, eta, k)
    if lp == -math.inf:
        return 0.0
    return math.exp(lp + (k - 1) * math.log(eta) - math.log(rate)
                    - math.lgamma(k + 1))


def tree_law(mech: Mechanism, lam: float, tail_tol: float = 1e-12) -> TreeLaw:
    law = offspring_law(mech, lam, tail_tol=tail_tol)
    eta = mech_mod.invert(mech, lam)
    rate = mech_mod.evaluate(mech, eta, 1)
    return TreeLaw(mech, lam, eta, rate, law)


def extinction_probability(law: OffspringLaw, tol: float = 1e-14,
                           max_iter: int = 200000) -> float:
    """Smallest fixed point of the offspring pgf."""
    if law.mean <= 1.0 + 1e-12:
        return 1.0
    q = 0.0
    for _ in range(max_iter):
        nxt = float(law.pgf(q))
        if abs(nxt - q) < tol:
            return nxt
        q = nxt
    raise ConvergenceError("extinction iteration did not settle")


# -- flat batch sampling ---------------------------------------------------

@dataclass
class FlatForest:
    """Many replicates in one generation-major arena.

    Rows are nodes across all replicates; parents sit in earlier rows, and
    gen_bounds gives the row range of each generation (generation zero is
    the block of per-replicate roots).  Vectorised passes over marks and
    retention run directly on this layout; per-replicate trees are built
    only on demand.
    """
    n_rep: int
    rep: np.ndarray        # replicate id per row
    par: np.ndarray        # global parent row, -1 for roots
    length: np.ndarray
    depth: np.ndarray
    trunc: np.ndarray
    n_nodes: np.ndarray    # per replicate
    exceeded: np.ndarray   # per replicate
    gen_bounds: List[Tuple[int, int]]
    leaf_mass: float

    @cached_property
    def child_counts(self) -> np.ndarray:
        if self.rep.size <= self.n_rep:
            return np.zeros(self.rep.size, dtype=np.int64)
        return np.bincount(self.par[self.n_rep:], minlength=self.rep.size)

    @cached_property
    def _order(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        order = np.argsort(self.rep, kind="stable")
        starts = np.searchsorted(self.rep[order], np.arange(self.n_rep + 1))
        local = np.empty(self.rep.size, dtype=np.int64)
        local[order] = np.arange(self.rep.size) - starts[self.rep[order]]
        return order, starts, local

    def tree(self, r: int) -> Union[Tree, Exceeded]:
        if self.exceeded[r]:
            return Exceeded(int(self.n_nodes[r]))
        order, starts, local = self._order
        rows = order[starts[r]:starts[r + 1]]
        p = self.par[rows]
        return Tree(np.where(p < 0, -1, local[np.maximum(p, 0)]),
                    self.length[rows], self.trunc[rows], self.leaf_mass,
                    depth=self.depth[rows])

    def trees(self) -> List[Union[Tree, Exceeded]]:
        return [self.tree(r) for r in range(self.n_rep)]


def sample_flat(tl: TreeLaw, n_rep: int, rng: np.random.Generator,
                node_cap: int = 1 << 20,
                height_cap: Optional[float] = None) -> FlatForest:
    """Grow n_rep independent trees generation by generation.

    A replicate whose node count would pass node_cap stops growing and is
    flagged.  With height_cap, edges reaching that height are cut into
    truncation leaves, which samples the height-restricted tree exactly.
    """
    if node_cap < 2:
        raise DomainError("node_cap must allow at least the root edge")
    law = tl.offspring
    scale = 1.0 / tl.edge_rate
    rep_b: List[np.ndarray] = [np.arange(n_rep, dtype=np.int64)]
    par_b: List[np.ndarray] = [np.full(n_rep, -1, dtype=np.int64)]
    len_b: List[np.ndarray] = [np.zeros(n_rep)]
    dep_b: List[np.ndarray] = [np.zeros(n_rep)]
    trn_b: List[np.ndarray] = [np.zeros(n_rep, dtype=bool)]
    bounds = [(0, n_rep)]
    n_nodes = np.ones(n_rep, dtype=np.int64)
    exceeded = np.zeros(n_rep, dtype=bool)
    next_row = n_rep

    # generation one: the root's single child
    cur_rep = np.arange(n_rep, dtype=np.int64)
    first = True
    while cur_rep.size:
        if first:
            child_rep = cur_rep
            child_par = np.arange(n_rep, dtype=np.int64)
            pdep = np.zeros(n_rep)
            first = False
        else:
            k = law.draw(rng, cur_rep.size)
            child_rep = np.repeat(cur_rep, k)
            child_par = np.repeat(cur_rows, k)
            pdep = np.repeat(cur_dep, k)
        born = np.bincount(child_rep, minlength=n_rep)
        exceeded |= n_nodes + born > node_cap
        ok = ~exceeded[child_rep]
        child_rep, child_par, pdep = child_rep[ok], child_par[ok], pdep[ok]
        n_nodes += np.bincount(child_rep, minlength=n_rep)
        lengths = rng.exponential(scale, child_rep.size)
        depth = pdep + lengths
        trunc = np.zeros(child_rep.size, dtype=bool)
        if height_cap is not None:
            over = depth > height_cap
            lengths = np.where(over, height_cap - pdep, lengths)
            depth = np.where(over, height_cap, depth)
            trunc = over
        rows = next_row + np.arange(child_rep.size, dtype=np.int64)
        next_row += child_rep.size
        bounds.append((rows[0] if rows.size else next_row, next_row))
        rep_b.append(child_rep)
        par_b.append(child_par)
        len_b.append(lengths)
        dep_b.append(depth)
        trn_b.append(trunc)
        grow = ~trunc
        cur_rep, cur_rows, cur_dep = child_rep[grow], rows[grow], depth[grow]

    return FlatForest(n_rep, np.concatenate(rep_b), np.concatenate(par_b),
                      np.concatenate(len_b), np.concatenate(dep_b),
                      np.concatenate(trn_b), n_nodes, exceeded,
                      [(int(a), int(b)) for a, b in bounds], tl.leaf_mass)


def sample_forest(tl: TreeLaw, n_rep: int, rng: np.random.Generator,
                  node_cap: int = 1 << 20,
                  height_cap: Optional[float] = None
                  ) -> List[Union[Tree, Exceeded]]:
    return sample_flat(tl, n_rep, rng, node_cap=node_cap,
                       height_cap=height_cap).trees()


def sample_gw(tl: TreeLaw, rng: np.random.Generator, node_cap: int = 1 << 20,
              height_cap: Optional[float] = None) -> Union[Tree, Exceeded]:
    return sample_forest(tl, 1, rng, node_cap=node_cap, height_cap=height_cap)[0]


def leaf_counts_chain(law: OffspringLaw, n_rep: int, rng: np.random.Generator,
                      total_cap: int = 1 << 20) -> Tuple[np.ndarray, np.ndarray]:
    """Leaf counts of n_rep trees via generation sizes only.

    Returns (leaves, exceeded); a replicate whose total progeny passes
    total_cap stops growing and is flagged.  Equivalent in law to counting
    mass leaves of sample_forest, at a fraction of the cost.
    """
    zero_pos = np.flatnonzero(law.values == 0)
    if zero_pos.size == 0:
        raise DegenerateError("offspring law has no mass at zero")
    zp = int(zero_pos[0])
    leaves = np.zeros(n_rep, dtype=np.int64)
    exceeded = np.zeros(n_rep, dtype=bool)
    total = np.ones(n_rep, dtype=np.int64)
    idx = np.arange(n_rep)
    z = np.ones(n_rep, dtype=np.int64)
    while idx.size:
        counts = rng.multinomial(z, law.probs)
        leaves[idx] += counts[:, zp]
        z = counts @ law.values
        total[idx] += z
        over = total[idx] > total_cap
        exceeded[idx[over]] = True
        live = (z > 0) & ~over
        idx, z = idx[live], z[live]
    return leaves, exceeded


def thin_and_span(tree: Tree, p: float, rng: np.random.Generator) -> Optional[Tree]:
    """Mark each mass leaf with probability p; span of the marked set.

    Returns None when no leaf survives (the span would be empty).
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError("thinning probability must lie in [0, 1]")
    ids = tree.leaf_ids()
    kept = ids[rng.random(ids.size) < p]
    if kept.size == 0:
        return None
    return tree.span(kept)
