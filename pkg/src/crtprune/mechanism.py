"""Branching mechanisms with closed-form derivatives.

A mechanism is

    psi(u) = alpha*u + beta*u^2 + c*u^gamma
             + sum_i m_i * (exp(-u*r_i) - 1 + u*r_i)

together with a shift offset theta0, representing the recentred map
psi_theta0(u) = psi(u + theta0) - psi(theta0).  All derivatives of the
shifted mechanism are plain translates of the base ones, so a shift is
stored as data instead of being applied symbolically.

Only the families above are supported: every derivative is exact, no
quadrature is involved, and the jump part must carry an infinite-variation
component (beta > 0 or a stable term), which keeps the excursion measure
sigma-finite and psi'' strictly positive on the domain interior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConvergenceError, DomainError, OrderError

ArrayLike = Union[float, np.ndarray]

_RESID_TOL = 1e-12
_ITER_CAP = 500


@dataclass(frozen=True)
class Mechanism:
    """Branching mechanism in the closed-form family, plus a shift offset."""

    alpha: float = 0.0
    beta: float = 0.0
    stable_c: float = 0.0
    stable_gamma: float = 1.5
    atoms: Tuple[Tuple[float, float], ...] = ()
    shift: float = 0.0
    # psi_base(shift), cached so k=0 evaluations are one subtraction
    _base_at_shift: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError("quadratic coefficient must be >= 0")
        if self.stable_c < 0:
            raise DomainError("stable coefficient must be >= 0")
        if self.stable_c > 0 and not 1.0 < self.stable_gamma < 2.0:
            raise DomainError("stable exponent must lie in (1, 2)")
        for r, m in self.atoms:
            if r <= 0 or m <= 0:
                raise DomainError("jump atoms need r > 0 and m > 0")
        if self.beta == 0 and self.stable_c == 0:
            # finite-variation jump parts (atoms alone) are out of scope
            raise DomainError("mechanism needs beta > 0 or a stable term")
        if self.stable_c > 0 and self.shift < 0:
            raise DomainError("negative shift leaves the stable domain")
        object.__setattr__(self, "atoms", tuple((float(r), float(m)) for r, m in self.atoms))
        object.__setattr__(self, "_base_at_shift", float(_psi_base(self, self.shift)))

    @property
    def domain_lo(self) -> float:
        """Lowest admissible argument of the shifted mechanism."""
        return -self.shift if self.stable_c > 0 else -math.inf


@dataclass(frozen=True)
class Landmarks:
    theta_star: Optional[float]
    q0: float
    criticality: str  # "subcritical" | "critical" | "supercritical"


def _psi_base(m: Mechanism, w: ArrayLike) -> ArrayLike:
    out = m.alpha * w + m.beta * w * w
    if m.stable_c > 0:
        out = out + m.stable_c * np.power(w, m.stable_gamma)
    for r, mass in m.atoms:
        out = out + mass * (np.exp(-w * r) - 1.0 + w * r)
    return out


def _falling(gamma: float, k: int) -> float:
    """gamma * (gamma-1) * ... * (gamma-k+1)."""
    out = 1.0
    for j in range(k):
        out *= gamma - j
    return out


def evaluate(m: Mechanism, q: ArrayLike, k: int = 0) -> ArrayLike:
    """k-th derivative of the shifted mechanism at q.

    k = 0 returns psi(q + shift) - psi(shift).  Derivative orders above 64
    are refused; use deriv_ratio for high-order ratios.  The stable term
    makes orders >= 2 blow up at the domain boundary; those evaluate to
    signed infinity rather than raising.
    """
    if not isinstance(k, (int, np.integer)) or k < 0 or k > 64:
        raise OrderError(f"derivative order {k!r} outside 0..64")
    w = np.asarray(q, dtype=float) + m.shift
    if m.stable_c > 0 and np.any(w < 0):
        raise DomainError("argument below the stable domain boundary")
    with np.errstate(divide="ignore"):
        if k == 0:
            out = _psi_base(m, w) - m._base_at_shift
        elif k == 1:
            out = m.alpha + 2.0 * m.beta * w
            if m.stable_c > 0:
                g = m.stable_gamma
                out = out + m.stable_c * g * np.power(w, g - 1.0)
            for r, mass in m.atoms:
                out = out + mass * r * (1.0 - np.exp(-w * r))
        elif k == 2:
            out = 2.0 * m.beta + np.zeros_like(w)
            if m.stable_c > 0:
                g = m.stable_gamma
                out = out + m.stable_c * g * (g - 1.0) * np.power(w, g - 2.0)
            for r, mass in m.atoms:
                out = out + mass * r * r * np.exp(-w * r)
        else:
            out = np.zeros_like(w)
            if m.stable_c > 0:
                g = m.stable_gamma
                out = out + m.stable_c * _falling(g, k) * np.power(w, g - k)
            sgn = 1.0 if k % 2 == 0 else -1.0
            for r, mass in m.atoms:
                out = out + sgn * mass * r**k * np.exp(-w * r)
    if np.ndim(q) == 0:
        return float(out)
    return out


def deriv_sign(k: int) -> int:
    """Sign of psi^(k) on the domain interior for k >= 2."""
    return 1 if k % 2 == 0 else -1


def log_abs_deriv(m: Mechanism, q: ArrayLike, k: int) -> ArrayLike:
    """log |psi^(k)(q)| for k >= 2, stable for arbitrarily large k.

    Components of psi^(k) share the sign (-1)^k, so their magnitudes add.
    """
    if k < 2:
        raise OrderError("log_abs_deriv needs k >= 2")
    w = np.asarray(q, dtype=float) + m.shift
    if m.stable_c > 0 and np.any(w < 0):
        raise DomainError("argument below the stable domain boundary")
    terms = []
    if k == 2 and m.beta > 0:
        terms.append(np.log(2.0 * m.beta) + np.zeros_like(w))
    if m.stable_c > 0:
        # prod_{j<k} |g - j| = g (g-1) Gamma(k-g) / Gamma(2-g) for g in (1,2)
        g = m.stable_gamma
        lf = (math.log(g) + math.log(g - 1.0)
              + math.lgamma(k - g) - math.lgamma(2.0 - g))
        with np.errstate(divide="ignore"):
            terms.append(math.log(m.stable_c) + lf + (g - k) * np.log(w))
    for r, mass in m.atoms:
        terms.append(math.log(mass) + k * math.log(r) - w * r)
    if not terms:
        return np.full_like(w, -np.inf) if np.ndim(q) else -math.inf
    out = terms[0]
    for t in terms[1:]:
        out = np.logaddexp(out, t)
    if np.ndim(q) == 0:
        return float(out)
    return out


def deriv_ratio(m: Mechanism, q1: ArrayLike, q0: ArrayLike, k: int) -> ArrayLike:
    """psi^(k)(q1) / psi^(k)(q0) for k >= 2 (same sign, so the ratio is >= 0)."""
    return np.exp(log_abs_deriv(m, q1, k) - log_abs_deriv(m, q0, k))


def shift(m: Mechanism, theta: float) -> Mechanism:
    """Recentre: shift(m, a) has psi_a(u) = psi_m(u + a) - psi_m(a).

    Composes additively with any existing offset.
    """
    new = m.shift + theta
    if m.stable_c > 0 and new < 0:
        raise DomainError("shift would leave the stable domain")
    return Mechanism(m.alpha, m.beta, m.stable_c, m.stable_gamma, m.atoms, new)


def _hybrid_root(f, fp, lo: float, hi: float, tol: float = _RESID_TOL,
                 cap: int = _ITER_CAP) -> float:
    """Newton iteration safeguarded by a bisection bracket; residual-based stop."""
    flo, fhi = f(lo), f(hi)
    if flo > tol or fhi < -tol:
        raise DomainError("root not bracketed")
    if abs(flo) <= tol:
        return lo
    if abs(fhi) <= tol:
        return hi
    x = 0.5 * (lo + hi)
    for _ in range(cap):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if fx > 0:
            hi = x
        else:
            lo = x
        d = fp(x)
        step = x - fx / d if d > 0 and math.isfinite(d) else math.nan
        x = step if lo < step < hi else 0.5 * (lo + hi)
    raise ConvergenceError(f"root solve stalled after {cap} iterations")


def _theta_star_eff(m: Mechanism) -> float:
    """theta_star when psi' has a root, else the domain lower end."""
    ts = _theta_star(m)
    return m.domain_lo if ts is None else ts


def _theta_star(m: Mechanism) -> Optional[float]:
    dlo = m.domain_lo
    if math.isfinite(dlo):
        v = evaluate(m, dlo, 1)
        if v > _RESID_TOL:
            return None
        if abs(v) <= _RESID_TOL:
            return dlo
        lo = dlo
        hi = max(dlo + 1.0, 0.0)
        while evaluate(m, hi, 1) < 0:
            hi = dlo + 2.0 * (hi - dlo)
    else:
        lo, hi = -1.0, 1.0
        for _ in range(_ITER_CAP):
            if evaluate(m, lo, 1) < 0:
                break
            lo *= 2.0
        for _ in range(_ITER_CAP):
            if evaluate(m, hi, 1) > 0:
                break
            hi *= 2.0
    return _hybrid_root(lambda x: evaluate(m, x, 1), lambda x: evaluate(m, x, 2), lo, hi)


def _grow_until(m: Mechanism, target: float, lo: float) -> float:
    """Upper bracket end with psi(hi) >= target."""
    hi = lo + 1.0
    for _ in range(_ITER_CAP):
        if evaluate(m, hi, 0) >= target:
            return hi
        hi = lo + 2.0 * (hi - lo)
    raise ConvergenceError("could not bracket the inverse")


def invert(m: Mechanism, lam: float) -> float:
    """psi^{-1}(lam) on the increasing branch [theta_star, infinity)."""
    if lam < 0:
        raise DomainError("invert expects lam >= 0")
    lo = _theta_star_eff(m)
    hi = _grow_until(m, lam, lo)
    return _hybrid_root(lambda x: evaluate(m, x, 0) - lam,
                        lambda x: evaluate(m, x, 1), lo, hi)


def landmarks(m: Mechanism) -> Landmarks:
    """theta_star, q0 = psi^{-1}(0), and criticality read off psi'(0)."""
    ts = _theta_star(m)
    slope0 = evaluate(m, 0.0, 1)
    if slope0 < -_RESID_TOL:
        crit = "supercritical"
        lo = ts if ts is not None else m.domain_lo
        hi = _grow_until(m, 0.0, lo)
        # psi(theta_star) < 0 here, so the positive root is bracketed
        q0 = _hybrid_root(lambda x: evaluate(m, x, 0), lambda x: evaluate(m, x, 1),
                          lo, hi)
    else:
        crit = "critical" if slope0 <= _RESID_TOL else "subcritical"
        q0 = 0.0
    return Landmarks(theta_star=ts, q0=q0, criticality=crit)


def conjugate(m: Mechanism, theta: float) -> float:
    """The point >= theta_star where psi takes the same value as at theta."""
    if theta + m.shift < 0 and m.stable_c > 0:
        raise DomainError("theta below the stable domain boundary")
    ts = _theta_star_eff(m)
    if theta >= ts:
        return float(theta)
    val = evaluate(m, theta, 0)
    hi = _grow_until(m, val, ts)
    return _hybrid_root(lambda x: evaluate(m, x, 0) - val,
                        lambda x: evaluate(m, x, 1), ts, hi)


def theta_lambda(m: Mechanism, lam: float) -> float:
    """Lowest shift theta <= 0 with psi_theta(eta) >= 0, eta = psi^{-1}(lam).

    Equivalently the root of psi(theta + eta) = psi(theta); the map is
    strictly increasing in theta, and the stable domain clamps the answer
    at its lower end.
    """
    eta = invert(m, lam)

    def h(t):
        return evaluate(m, t + eta, 0) - evaluate(m, t, 0)

    def hp(t):
        return evaluate(m, t + eta, 1) - evaluate(m, t, 1)

    dlo = m.domain_lo
    if math.isfinite(dlo):
        if h(dlo) >= 0:
            return dlo
        return _hybrid_root(h, hp, dlo, 0.0)
    lo = -1.0
    for _ in range(_ITER_CAP):
        if h(lo) < 0:
            break
        lo *= 2.0
    else:
        raise ConvergenceError("could not bracket theta_lambda")
    return _hybrid_root(h, hp, lo, 0.0)
