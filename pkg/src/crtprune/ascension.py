"""The blow-up time of the reverse dynamic and the trees seen there.

Growing a critical tree past its base level (theta moving below zero) keeps
it finite only for a while: at a random theta the grafted mass explodes.
That time A has CDF

    F(theta) = 1 - (conj(theta) - theta)/eta    on (theta_lam, 0),

where conj is the mechanism's same-value point on the increasing branch.
F(theta) is also the extinction probability of the theta-grown tree, which
the tests lean on.  Densities follow by differentiating through conj.

The tree seen at the blow-up time is a spine tree: a single distinguished
path of exponential segments that at each internal point sprouts a
size-biased bush of ordinary trees and finally ends in a mass leaf.  The
same construction with no stopping gives the immortal tree of a critical
mechanism, which only exists here restricted below a height.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from . import mechanism as mech_mod
from .errors import DegenerateError, DomainError
from .galton_watson import Exceeded, TreeLaw, sample_forest, tree_law
from .mechanism import Mechanism
from .tree import Tree

_TOL = 1e-12


def _require_critical(mech: Mechanism) -> None:
    if mech_mod.landmarks(mech).criticality != "critical":
        raise DomainError("blow-up law is defined for critical mechanisms")


@dataclass(frozen=True)
class AscensionLaw:
    mech: Mechanism
    lam: float
    eta: float
    theta_lam: float

    def cdf(self, theta: float) -> float:
        if theta <= self.theta_lam:
            return 0.0
        if theta >= 0:
            return 1.0
        conj = mech_mod.conjugate(self.mech, theta)
        return 1.0 - (conj - theta) / self.eta

    def pdf(self, theta: float) -> float:
        if theta <= self.theta_lam or theta >= 0:
            return 0.0
        conj = mech_mod.conjugate(self.mech, theta)
        return (1.0 - mech_mod.evaluate(self.mech, theta, 1)
                / mech_mod.evaluate(self.mech, conj, 1)) / self.eta

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if not self.mech.atoms and self.mech.stable_c == 0:
            return self.theta_lam * (1.0 - u)
        out = np.empty(n)
        for i, ui in enumerate(u):
            lo, hi = self.theta_lam, 0.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if self.cdf(mid) < ui:
                    lo = mid
                else:
                    hi = mid
            out[i] = 0.5 * (lo + hi)
        return out


def ascension_law(mech: Mechanism, lam: float) -> AscensionLaw:
    _require_critical(mech)
    eta = mech_mod.invert(mech, lam)
    theta_lam = mech_mod.theta_lambda(mech, lam)
    if not theta_lam < 0:
        raise DomainError("mechanism domain leaves no room below zero")
    return AscensionLaw(mech, lam, eta, theta_lam)


def ascension_cdf(mech: Mechanism, lam: float, theta: float) -> float:
    return ascension_law(mech, lam).cdf(theta)


def ascension_pdf(mech: Mechanism, lam: float, theta: float) -> float:
    return ascension_law(mech, lam).pdf(theta)


def sample_ascension_time(mech: Mechanism, lam: float,
                          rng: np.random.Generator, n: int = 1) -> np.ndarray:
    return ascension_law(mech, lam).sample(rng, n)


# -- spine trees --------------------------------------------------------------

def sample_spine_tree(tl: TreeLaw, rng: np.random.Generator,
                      node_cap: int = 1 << 20) -> Union[Tree, Exceeded]:
    """Size-biased tree of the law: a spine of Exp(psi'(eta)) segments that
    stops with probability psi'(0)/psi'(eta) into a mass leaf, and otherwise
    branches into a size-biased bush of ordinary trees.
    """
    a = mech_mod.evaluate(tl.mech, 0.0, 1) / tl.edge_rate
    if not a > 0:
        raise DegenerateError("spine never terminates at a critical shift; "
                              "use the height-restricted immortal sampler")
    bush = tl.offspring.size_biased
    parent: List[int] = [-1]
    length: List[float] = [0.0]
    trunc: List[bool] = [False]
    grafts: List[Tuple[int, Tree]] = []
    spine_at = 0
    budget = node_cap
    while True:
        parent.append(spine_at)
        length.append(float(rng.exponential(1.0 / tl.edge_rate)))
        trunc.append(False)
        spine_at = len(parent) - 1
        budget -= 1
        if budget <= 0:
            return Exceeded(node_cap)
        if rng.random() < a:
            break
        k_star = int(bush.draw(rng, 1)[0]) - 1
        pieces = sample_forest(tl, k_star, rng, node_cap=max(2, budget))
        for p in pieces:
            if isinstance(p, Exceeded):
                return Exceeded(node_cap)
            budget -= p.n - 1
            if budget <= 0:
                return Exceeded(node_cap)
            grafts.append((spine_at, p))
    host = Tree(parent, length, trunc, tl.leaf_mass)
    return host.graft(grafts) if grafts else host


def sample_ascension_tree(mech: Mechanism, lam: float, rng: np.random.Generator,
                          node_cap: int = 1 << 20
                          ) -> Tuple[float, Union[Tree, Exceeded]]:
    """Draw a blow-up time and the tree standing at that moment.

    The tree is a spine tree of the conjugate shift: with U the sampled
    time and Ub = conj(U), the spine law lives at shift Ub and level
    psi_U(eta), whose own level inverse is eta - Ub + U.
    """
    law = ascension_law(mech, lam)
    u = float(law.sample(rng, 1)[0])
    ub = mech_mod.conjugate(mech, u)
    lam_star = float(mech_mod.evaluate(mech, u + law.eta, 0)
                     - mech_mod.evaluate(mech, u, 0))
    spine_law = tree_law(mech_mod.shift(mech, ub), lam_star)
    want_eta = law.eta - ub + u
    if abs(spine_law.eta - want_eta) > 1e-8 * (1 + abs(want_eta)):
        raise DegenerateError("conjugate level inversion drifted")
    return u, sample_spine_tree(spine_law, rng, node_cap=node_cap)


def sample_immortal_restricted(mech: Mechanism, lam: float, a: float,
                               rng: np.random.Generator,
                               node_cap: int = 1 << 20) -> Union[Tree, Exceeded]:
    """The never-dying critical tree, cut below height a.

    One spine runs straight to a truncation tip at a; bushes hang off it at
    Poisson(psi'(eta) a) many uniform heights, each an ordinary tree cut at
    the remaining height.
    """
    _require_critical(mech)
    if not a > 0:
        raise DomainError("restriction height must be positive")
    tl = tree_law(mech, lam)
    n_bush = int(rng.poisson(tl.edge_rate * a))
    heights = np.sort(rng.random(n_bush)) * a
    bush = tl.offspring.size_biased
    parent: List[int] = [-1]
    length: List[float] = [0.0]
    trunc: List[bool] = [False]
    grafts: List[Tuple[int, Tree]] = []
    prev_h = 0.0
    spine_at = 0
    budget = node_cap
    for h in heights:
        parent.append(spine_at)
        length.append(float(h - prev_h))
        trunc.append(False)
        spine_at = len(parent) - 1
        prev_h = float(h)
        k_star = int(bush.draw(rng, 1)[0]) - 1
        pieces = sample_forest(tl, k_star, rng, node_cap=max(2, budget),
                               height_cap=a - prev_h)
        for p in pieces:
            if isinstance(p, Exceeded):
                return Exceeded(node_cap)
            budget -= p.n - 1
            if budget <= 0:
                return Exceeded(node_cap)
            grafts.append((spine_at, p))
    parent.append(spine_at)
    length.append(float(a - prev_h))
    trunc.append(True)
    host = Tree(parent, length, trunc, tl.leaf_mass)
    return host.graft(grafts) if grafts else host
