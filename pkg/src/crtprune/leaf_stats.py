"""Leaf-count transforms and change-of-measure weights.

Everything here is a deterministic functional of the mechanism, its level,
and possibly a sampled tree; no randomness.  The tree sampled at level lam
and cut at theta has

  mean leaf count   psi_theta(eta) / (eta psi'(theta)),  infinite at the
                    critical point,
  leaf pgf          the smallest root of x = g(x) + g(0)(zeta - 1) with g
                    the cut law's offspring pgf,

and several exponential reweightings connect the laws at different levels
and cut times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mechanism as mech_mod
from .dynamics import growth_offspring_law, pruned_law
from .errors import ConvergenceError, DomainError
from .mechanism import Mechanism
from .tree import Tree

_PGF_TOL = 1e-12
_PGF_CAP = 100_000


def mean_leaf_count(mech: Mechanism, lam: float, theta: float = 0.0) -> float:
    """Expected number of mass leaves after cutting at theta."""
    eta = mech_mod.invert(mech, lam)
    lam_theta = float(mech_mod.evaluate(mech, theta + eta, 0)
                      - mech_mod.evaluate(mech, theta, 0))
    if not lam_theta > 0:
        raise DomainError("cut leaves no mass at this theta")
    slope = float(mech_mod.evaluate(mech, theta, 1))
    if slope <= 0:
        return math.inf
    return lam_theta / (eta * slope)


@dataclass(frozen=True)
class PgfSolve:
    zeta: float
    value: float
    residual: float
    iterations: int


def leaf_pgf(mech: Mechanism, lam: float, theta: float, zeta: float,
             tol: float = _PGF_TOL, max_iter: int = _PGF_CAP) -> PgfSolve:
    """E[zeta^(leaf count)] of the tree cut at theta.

    Fixed-point iteration from zero converges upward to the smallest root;
    near criticality it crawls, so a bisection pass finishes the job if the
    iteration budget runs out.
    """
    if not 0.0 <= zeta <= 1.0:
        raise DomainError("zeta must lie in [0, 1]")
    g = pruned_law(mech, lam, theta).offspring.pgf
    c = float(g(0.0)) * (zeta - 1.0)

    def step(x: float) -> float:
        return float(g(x)) + c

    x = 0.0
    for it in range(max_iter):
        nxt = step(x)
        if abs(nxt - x) <= tol:
            return PgfSolve(zeta, nxt, abs(nxt - x), it + 1)
        x = nxt
    lo, hi = x, 1.0
    for it2 in range(200):
        mid = 0.5 * (lo + hi)
        if step(mid) > mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            mid = 0.5 * (lo + hi)
            return PgfSolve(zeta, mid, abs(step(mid) - mid), max_iter + it2 + 1)
    raise ConvergenceError("leaf pgf fixed point did not settle")


def joint_leaf_pgf(mech: Mechanism, lam: float, theta: float, q: float,
                   zeta: float, z: float) -> float:
    """E[zeta^(leaves at theta) * z^(leaves at q)] under the growth coupling.

    Each theta-leaf contributes w(z) = g(h_q(z)) + g(0)(z - 1) with g the
    graft-count pgf, and the outer tree mixes through its own leaf pgf.
    """
    if not 0.0 <= z <= 1.0:
        raise DomainError("z must lie in [0, 1]")
    glaw = growth_offspring_law(mech, lam, theta, q)
    h_q = leaf_pgf(mech, lam, q, z).value
    w = float(glaw.pgf(h_q)) + float(glaw.pgf(0.0)) * (z - 1.0)
    return leaf_pgf(mech, lam, theta, zeta * w).value


def leaf_count_martingale(mech: Mechanism, lam: float, theta: float,
                          leaf_count: int) -> float:
    """psi'(theta) L / psi_theta(eta); has constant mean 1/eta across cuts."""
    eta = mech_mod.invert(mech, lam)
    lam_theta = float(mech_mod.evaluate(mech, theta + eta, 0)
                      - mech_mod.evaluate(mech, theta, 0))
    if not lam_theta > 0:
        raise DomainError("cut leaves no mass at this theta")
    return float(mech_mod.evaluate(mech, theta, 1)) * leaf_count / lam_theta


def level_count_tilt(mech: Mechanism, lam: float, crossings: int) -> float:
    """Weight turning the recentred supercritical tree into the plain one.

    With q0 the largest zero of the mechanism and eta its inverse at lam,
    samples of the q0-recentred tree weighted by (eta/(eta-q0))^(L(a)-1)
    reproduce the original tree's level-a crossing statistics.  Subcritical
    mechanisms have q0 = 0 and weight one.
    """
    eta = mech_mod.invert(mech, lam)
    q0 = mech_mod.landmarks(mech).q0
    if not eta - q0 > 0:
        raise DomainError("level inverse does not clear the largest zero")
    return float((eta / (eta - q0)) ** (crossings - 1))


def restricted_tilt(mech: Mechanism, lam: float, theta: float, q: float,
                    tree: Tree, a: float) -> float:
    """Weight converting the theta-cut law into the q-cut law on trees
    restricted below height a.

    Multiplies a level ratio per mass leaf, an exponential of total length,
    and a derivative ratio per branch point; for a pure quadratic mechanism
    the branch factor is one.
    """
    eta = mech_mod.invert(mech, lam)
    lam_t = float(mech_mod.evaluate(mech, theta + eta, 0) - mech_mod.evaluate(mech, theta, 0))
    lam_q = float(mech_mod.evaluate(mech, q + eta, 0) - mech_mod.evaluate(mech, q, 0))
    if not (lam_t > 0 and lam_q > 0):
        raise DomainError("both cut levels must keep positive mass")
    log_w = tree.leaf_count() * math.log(lam_q / lam_t)
    log_w += (float(mech_mod.evaluate(mech, theta + eta, 1))
              - float(mech_mod.evaluate(mech, q + eta, 1))) * tree.total_length()
    cc = tree.children_counts()
    for i in np.flatnonzero(cc >= 2):
        if i == 0:
            continue
        k = int(cc[i])
        log_w += (mech_mod.log_abs_deriv(mech, q + eta, k)
                  - mech_mod.log_abs_deriv(mech, theta + eta, k))
    return math.exp(log_w)


def crossing_martingale(tree: Tree, leaf_times: np.ndarray, z: float,
                        a: float, mech: Mechanism) -> float:
    """(eta_z/(eta_z - q0)) ^ crossings, where the crossing count at height a
    only sees the subtree spanned by leaves revealed up to time z.

    leaf_times aligns with tree.leaf_ids(); a leaf is revealed when its time
    is at most z.  No revealed leaf means no crossings and weight one.
    """
    if not a > 0:
        raise DomainError("crossing level must be positive")
    eta_z = mech_mod.invert(mech, z)
    q0 = mech_mod.landmarks(mech).q0
    if not eta_z - q0 > 0:
        raise DomainError("revelation level does not clear the largest zero")
    ids = tree.leaf_ids()
    times = np.asarray(leaf_times, dtype=float)
    if times.shape != (ids.size,):
        raise DomainError("need one revelation time per mass leaf")
    mask = np.zeros(tree.n, dtype=bool)
    mask[ids[times <= z]] = True
    if not mask.any():
        return 1.0
    crossings = tree.crossing_count(a, mask)
    return float((eta_z / (eta_z - q0)) ** crossings)
