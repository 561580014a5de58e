"""Constitutive laws: power-law flux phi, pressure p, and growth rate G.

The admissible class is: phi odd, increasing, phi(0) = 0; p nonnegative
and nondecreasing on u >= 0; G continuous, nonincreasing, with G(0) > 0
(pure-diffusion validation mode allows G identically zero).  Power laws:

    phi(u) = sign(u) |u|^gamma,   p(u) = gamma/(gamma-1) |u|^(gamma-1).

An optional closed-form regularization replaces phi by

    phi_eps(u) = sign(u) ((|u| + eps)^gamma - eps^gamma) + eps u,

which keeps phi_eps(0) = 0, has phi_eps' >= eps everywhere, and has
phi_eps' -> phi' uniformly on compact sets as eps -> 0.  That is exactly
what the solver's continuation strategy needs; derivatives are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ModelError(ValueError):
    """Invalid constitutive-law parameter or evaluation input."""


@dataclass(frozen=True)
class PowerLaw:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ModelError(f"gamma must exceed 1, got {self.gamma}")


class GrowthKind(Enum):
    CONSTANT = "constant"
    RATIONAL = "rational"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class GrowthLaw:
    """Pressure-limited proliferation rate, nonincreasing with G(0) = g0.

    Constant: G = g0.  Rational: G = g0/(1 + beta p).  Exponential:
    G = g0 exp(-beta p).  All have |G'| <= g0 beta, so the family sits in
    W^{1,inf} with certified derivative bounds.  g0 = 0 is the labelled
    pure-diffusion validation mode (growth term switched off).
    """

    kind: GrowthKind = GrowthKind.CONSTANT
    g0: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.g0 < 0:
            raise ModelError(f"g0 must be >= 0, got {self.g0}")
        if self.beta < 0:
            raise ModelError(f"beta must be >= 0, got {self.beta}")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p < 0):
            raise ModelError("growth law evaluated at negative pressure")
        if self.kind is GrowthKind.CONSTANT:
            out = np.full_like(p, self.g0)
        elif self.kind is GrowthKind.RATIONAL:
            out = self.g0 / (1.0 + self.beta * p)
        else:
            out = self.g0 * np.exp(-self.beta * p)
        return out if out.ndim else float(out)

    def prime(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p < 0):
            raise ModelError("growth law derivative evaluated at negative pressure")
        if self.kind is GrowthKind.CONSTANT:
            out = np.zeros_like(p)
        elif self.kind is GrowthKind.RATIONAL:
            out = -self.g0 * self.beta / (1.0 + self.beta * p) ** 2
        else:
            out = -self.g0 * self.beta * np.exp(-self.beta * p)
        return out if out.ndim else float(out)

    def sup_abs_prime(self, p_lo: float, p_hi: float) -> float:
        """Exact sup of |G'| over [p_lo, p_hi]; |G'| is nonincreasing for
        every member of the family, so the max sits at the left endpoint."""
        if p_hi < p_lo:
            p_lo, p_hi = p_hi, p_lo
        return abs(self.prime(max(p_lo, 0.0)))


def growth_sup_diff(g1: GrowthLaw, g2: GrowthLaw, p_lo: float, p_hi: float,
                    n_grid: int = 4097) -> float:
    """Certified upper bound for sup |G2 - G1| over [p_lo, p_hi].

    Grid maximum plus a Lipschitz correction (both laws have Lipschitz
    constant <= g0*beta), so the returned value dominates the true sup.
    """
    if g1 == g2:
        return 0.0
    if p_hi < p_lo:
        p_lo, p_hi = p_hi, p_lo
    p_lo = max(p_lo, 0.0)
    p_hi = max(p_hi, p_lo)
    if p_hi == p_lo:
        return abs(float(g2(p_lo)) - float(g1(p_lo)))
    ps = np.linspace(p_lo, p_hi, n_grid)
    grid_max = float(np.max(np.abs(g2(ps) - g1(ps))))
    lip = g1.g0 * g1.beta + g2.g0 * g2.beta
    return grid_max + lip * (p_hi - p_lo) / (2 * (n_grid - 1))


def growth_sup_diff_global(g1: GrowthLaw, g2: GrowthLaw) -> float:
    """Certified upper bound for sup |G2 - G1| over all pressures p >= 0.

    Beyond a cutoff P both laws sit below their values at P (nonincreasing),
    so the tail sup is at most G1(P) + G2(P); the head is grid-certified.
    Everything is also trivially bounded by max(g0_1, g0_2).
    """
    if g1 == g2:
        return 0.0
    trivial = max(g1.g0, g2.g0)
    best = trivial
    cutoff = 1.0
    for _ in range(40):
        head = growth_sup_diff(g1, g2, 0.0, cutoff)
        tail = float(g1(cutoff)) + float(g2(cutoff))
        best = min(best, max(head, tail))
        if tail <= 1e-12 * max(best, 1e-300) or tail <= head:
            break
        cutoff *= 4.0
    return best


@dataclass(frozen=True)
class Regularization:
    epsilon: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ModelError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class ConstitutiveModel:
    law: PowerLaw
    growth: GrowthLaw = GrowthLaw()
    reg: Regularization = Regularization()

    @property
    def gamma(self) -> float:
        return self.law.gamma

    @property
    def epsilon(self) -> float:
        return self.reg.epsilon

    def with_epsilon(self, epsilon: float) -> "ConstitutiveModel":
        return ConstitutiveModel(self.law, self.growth, Regularization(epsilon))

    # -- flux nonlinearity ------------------------------------------------

    def phi(self, u):
        g, eps = self.gamma, self.epsilon
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if eps == 0.0:
            out = np.sign(u) * a**g
        else:
            out = np.sign(u) * ((a + eps) ** g - eps**g) + eps * u
        return out if out.ndim else float(out)

    def phi_prime(self, u):
        g, eps = self.gamma, self.epsilon
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if eps == 0.0:
            out = g * a ** (g - 1.0)
        else:
            out = g * (a + eps) ** (g - 1.0) + eps
        return out if out.ndim else float(out)

    def phi_inverse(self, v):
        g, eps = self.gamma, self.epsilon
        v = np.asarray(v, dtype=float)
        if eps == 0.0:
            out = np.sign(v) * np.abs(v) ** (1.0 / g)
            return out if out.ndim else float(out)
        # phi_eps is odd; solve on |v| with Newton.  phi_eps is convex on
        # u >= 0 and phi_eps(t) >= t^g + eps*t, so t = b^(1/g) starts at or
        # above the root and Newton descends monotonically.
        b = np.abs(v)
        t = b ** (1.0 / g)
        for _ in range(100):
            r = (t + eps) ** g - eps**g + eps * t - b
            dr = g * (t + eps) ** (g - 1.0) + eps
            step = r / dr
            t = np.maximum(t - step, 0.0)
            if np.all(np.abs(step) <= 4e-16 * np.abs(t) + 1e-300):
                break
        out = np.sign(v) * t
        return out if out.ndim else float(out)

    def phi_inverse_prime(self, v, clamp: float = 1e12):
        """(phi^-1)'(v) = 1/phi'(phi^-1(v)), clamped where phi degenerates."""
        u = self.phi_inverse(v)
        d = self.phi_prime(u)
        out = 1.0 / np.maximum(np.asarray(d, dtype=float), 1.0 / clamp)
        return out if out.ndim else float(out)

    # -- pressure and growth ----------------------------------------------

    def pressure(self, u):
        g = self.gamma
        u = np.asarray(u, dtype=float)
        out = g / (g - 1.0) * np.abs(u) ** (g - 1.0)
        return out if out.ndim else float(out)

    def pressure_prime_abs(self, u):
        """d/du pressure(u) for u > 0 (= gamma u^(gamma-2)), by |u| symmetry."""
        g = self.gamma
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            out = g * np.abs(u) ** (g - 2.0)
        return out if out.ndim else float(out)

    def sqrt_phi_prime(self, u):
        out = np.sqrt(self.phi_prime(u))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class SupMetrics:
    """Sampled suprema entering the stability bounds, over a state interval."""

    sqrtphi_diff: float
    pressure_diff: float
    growth_diff: float
    growth2_prime: float
    samples_used: int


def _refined_sup(fn, a: float, b: float, rel_tol: float = 1e-6,
                 n0: int = 1025, n_max: int = 2**21) -> tuple[float, int]:
    """Sup of |fn| on [a, b] by dyadic grid refinement until two successive
    estimates agree to rel_tol (relative)."""
    n = n0
    prev = None
    while True:
        s = np.linspace(a, b, n)
        cur = float(np.max(np.abs(fn(s))))
        if prev is not None and abs(cur - prev) <= rel_tol * max(cur, 1e-300):
            return cur, n
        if n >= n_max:
            return cur, n
        prev = cur
        n = 2 * n - 1


def pressure_image(m: ConstitutiveModel, a: float, b: float) -> tuple[float, float]:
    """Image of [a, b] under the (even in u) pressure law."""
    pa, pb = m.pressure(a), m.pressure(b)
    lo = 0.0 if a <= 0.0 <= b else min(pa, pb)
    return lo, max(pa, pb)


def sup_metrics(m1: ConstitutiveModel, m2: ConstitutiveModel,
                interval: tuple[float, float]) -> SupMetrics:
    """Suprema of |sqrt(phi1') - sqrt(phi2')|, |p2 - p1|, |G2 - G1| and |G2'|
    over the state interval [a, b]; the growth laws see the pressure image
    of that interval."""
    a, b = interval
    if b < a:
        raise ModelError(f"empty interval [{a}, {b}]")
    sq, n1 = _refined_sup(lambda s: m1.sqrt_phi_prime(s) - m2.sqrt_phi_prime(s), a, b)
    pd, n2 = _refined_sup(lambda s: m2.pressure(s) - m1.pressure(s), a, b)
    lo1, hi1 = pressure_image(m1, a, b)
    lo2, hi2 = pressure_image(m2, a, b)
    gd = growth_sup_diff(m1.growth, m2.growth, lo1, hi1)
    g2p = m2.growth.sup_abs_prime(min(lo1, lo2), max(hi1, hi2))
    return SupMetrics(sqrtphi_diff=sq, pressure_diff=pd, growth_diff=gd,
                      growth2_prime=g2p, samples_used=max(n1, n2))
