"""Explicit stability bounds for mild solutions and their discrete iterates.

The L1 gap between two evolutions (different flux exponents, growth laws,
or initial data) is bounded by four additive terms:

    e^{tG0} ||u01 - u02||_1                                (initial data)
  + 4 sqrt(d t) e^{tG0} ||u01||_TV  sup |sqrt(phi1') - sqrt(phi2')|
  + t e^{tG0} ||G2'||_inf  sup |p2 - p1|  ||u01||_1        (pressure law)
  + t e^{tG0} ||G2 - G1||_inf  ||u01||_1                   (growth law)

with G0 = max(G1(0), G2(0)) and suprema over the state interval
[-||(u01)_-||_inf, e^{tG0} ||(u01)_+||_inf].  The discrete counterpart for
n resolvent steps of size tau replaces e^{tG0} by (1 - tau G0)^-n on the
initial term and (1 - tau G0)^-(n+1) on the rest, with the correspondingly
inflated state interval.  For power laws there are closed-form majorants
of the suprema, assembled in `bound_powerlaw`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import GridField, l1_distance, l1_norm, linf_norm, pos_neg_linf, tv_norm
from .model import (ConstitutiveModel, growth_sup_diff, growth_sup_diff_global,
                    pressure_image, sup_metrics)
from .evolution import EvolutionConfig, evolve


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalSet:
    """State interval and its pressure images used by the bound's suprema."""

    i_state: tuple[float, float]
    i_p1: tuple[float, float]
    i_p12: tuple[float, float]


@dataclass(frozen=True)
class StabilityBreakdown:
    term_initial: float
    term_diffusion: float
    term_pressure: float
    term_growthlaw: float
    intervals: IntervalSet | None = None
    empirical_gap: float | None = None
    certified: bool | None = None

    @property
    def total(self) -> float:
        return (self.term_initial + self.term_diffusion
                + self.term_pressure + self.term_growthlaw)

    def with_empirical(self, gap: float, slack_scale: float = 1e-8) -> "StabilityBreakdown":
        slack = slack_scale * (1.0 + self.total)
        return StabilityBreakdown(
            term_initial=self.term_initial, term_diffusion=self.term_diffusion,
            term_pressure=self.term_pressure, term_growthlaw=self.term_growthlaw,
            intervals=self.intervals, empirical_gap=gap,
            certified=bool(gap <= self.total + slack))


@dataclass(frozen=True)
class GammaBoundInputs:
    """Inputs of the power-law closed forms; enforces gamma1 < gamma2 by
    swapping and recording the swap."""

    gamma1: float
    gamma2: float
    m_sup: float       # e^{tG0} ||u01||_inf
    t: float
    dim: int
    g0: float
    swapped: bool = False

    def __post_init__(self):
        if not (self.gamma1 > 1.0 and self.gamma2 > 1.0):
            raise StabilityError("both exponents must exceed 1")
        if self.gamma1 > self.gamma2:
            g1, g2 = self.gamma2, self.gamma1
            object.__setattr__(self, "gamma1", g1)
            object.__setattr__(self, "gamma2", g2)
            object.__setattr__(self, "swapped", True)
        if self.m_sup < 0:
            raise StabilityError("state sup bound must be >= 0")


def _max_g0(m1: ConstitutiveModel, m2: ConstitutiveModel) -> float:
    return max(m1.growth.g0, m2.growth.g0)


def _intervals(u01: GridField, m1: ConstitutiveModel, m2: ConstitutiveModel,
               amplification: float) -> IntervalSet:
    pos, neg = pos_neg_linf(u01)
    a, b = -neg, amplification * pos
    lo1, hi1 = pressure_image(m1, a, b)
    lo2, hi2 = pressure_image(m2, a, b)
    return IntervalSet(i_state=(a, b), i_p1=(lo1, hi1),
                       i_p12=(min(lo1, lo2), max(hi1, hi2)))


def _assemble(u01: GridField, u02: GridField, m1: ConstitutiveModel,
              m2: ConstitutiveModel, t: float, factor_initial: float,
              factor_rest: float, amplification: float) -> StabilityBreakdown:
    if t <= 0:
        raise StabilityError(f"t must be positive, got {t}")
    ivs = _intervals(u01, m1, m2, amplification)
    mets = sup_metrics(m1, m2, ivs.i_state)
    d = u01.spec.dim
    tv1 = tv_norm(u01)
    l1_1 = l1_norm(u01)
    # growth suprema use the family's certified evaluations over the
    # pressure intervals (cheap exact maxima, no sampling error)
    g2p = m2.growth.sup_abs_prime(*ivs.i_p12)
    gdiff = growth_sup_diff(m1.growth, m2.growth, *ivs.i_p1)
    return StabilityBreakdown(
        term_initial=factor_initial * l1_distance(u01, u02),
        term_diffusion=4.0 * math.sqrt(d * t) * factor_rest * tv1 * mets.sqrtphi_diff,
        term_pressure=t * factor_rest * g2p * mets.pressure_diff * l1_1,
        term_growthlaw=t * factor_rest * gdiff * l1_1,
        intervals=ivs)


def bound_general(u01: GridField, u02: GridField, m1: ConstitutiveModel,
                  m2: ConstitutiveModel, t: float) -> StabilityBreakdown:
    """Continuous-time bound; suprema sampled over the state interval."""
    if not np.all(np.isfinite(u01.values)) or not np.all(np.isfinite(u02.values)):
        raise StabilityError("non-finite initial data")
    g0 = _max_g0(m1, m2)
    factor = math.exp(t * g0)
    return _assemble(u01, u02, m1, m2, t, factor, factor, factor)


def bound_discrete(u01: GridField, u02: GridField, m1: ConstitutiveModel,
                   m2: ConstitutiveModel, n: int, tau: float) -> StabilityBreakdown:
    """Bound for the n-step resolvent iterates with step tau (t = n tau).

    Prefactors (1 - tau G0)^-n on the initial term and (1 - tau G0)^-(n+1)
    on the rest; the state interval carries the same (1 - tau G0)^-n
    amplification.  These factors dominate e^{tG0} and decrease to it as
    the step is refined, so this bound is the one the discrete iterates
    actually satisfy at finite n.
    """
    g0 = _max_g0(m1, m2)
    if tau * g0 >= 1.0:
        raise StabilityError("tau*G(0) >= 1 violates resolvent admissibility")
    if n < 1:
        raise StabilityError(f"need n >= 1, got {n}")
    t = n * tau
    f_init = (1.0 - tau * g0) ** (-n)
    f_rest = (1.0 - tau * g0) ** (-(n + 1))
    return _assemble(u01, u02, m1, m2, t, f_init, f_rest, f_init)


# -- power-law closed forms -------------------------------------------------


def _pow_ln(m_sup: float, a: float) -> float:
    """M^a |ln M| with the M -> 0 limit handled (a > 0)."""
    if m_sup == 0.0:
        return 0.0
    return m_sup**a * abs(math.log(m_sup))


def sup_sqrtphi_closed(inputs: GammaBoundInputs) -> float:
    """Closed-form majorant of sup_{[0,M]} |sqrt(phi1') - sqrt(phi2')| for
    power laws: |g2-g1| (sqrt(g1)/(g2-1) + M^((g1-1)/2)/(sqrt(g2)+sqrt(g1))
    + sqrt(g2) M^((g2-1)/2) |ln M| / 2)."""
    g1, g2, M = inputs.gamma1, inputs.gamma2, inputs.m_sup
    if g1 == g2:
        return 0.0
    return abs(g2 - g1) * (
        math.sqrt(g1) / (g2 - 1.0)
        + M ** ((g1 - 1.0) / 2.0) / (math.sqrt(g2) + math.sqrt(g1))
        + math.sqrt(g2) * _pow_ln(M, (g2 - 1.0) / 2.0) / 2.0)


def sup_pressure_closed(inputs: GammaBoundInputs) -> float:
    """Closed-form majorant of sup_{[0,M]} |p2 - p1| for power laws:
    |g2-g1| (g1/((g2-1)(g1-1)) + M^(g1-1)/((g2-1)(g1-1))
    + g2/(g2-1) M^(g2-1) |ln M|)."""
    g1, g2, M = inputs.gamma1, inputs.gamma2, inputs.m_sup
    if g1 == g2:
        return 0.0
    return abs(g2 - g1) * (
        g1 / ((g2 - 1.0) * (g1 - 1.0))
        + M ** (g1 - 1.0) / ((g2 - 1.0) * (g1 - 1.0))
        + g2 / (g2 - 1.0) * _pow_ln(M, g2 - 1.0))


def upsilon_check(gamma1: float, gamma2: float) -> float:
    """Upsilon^((g1-1)/(g2-g1)) with Upsilon = sqrt(g1)(g1-1)/(sqrt(g2)(g2-1));
    always <= 1 for 1 < g1 < g2, which pins the interior maximum of the
    sqrt-flux gap at |g2-g1| sqrt(g1)/(g2-1)."""
    if not (1.0 < gamma1 < gamma2):
        raise StabilityError(f"need 1 < gamma1 < gamma2, got ({gamma1}, {gamma2})")
    upsilon = math.sqrt(gamma1) * (gamma1 - 1.0) / (math.sqrt(gamma2) * (gamma2 - 1.0))
    return upsilon ** ((gamma1 - 1.0) / (gamma2 - gamma1))


def brute_force_sup_g(gamma1: float, gamma2: float, m_sup: float,
                      n_points: int = 10**6) -> float:
    """Dense-scan lower witness for sup |sqrt(phi1') - sqrt(phi2')| on [0, M]."""
    s = np.linspace(0.0, m_sup, n_points)
    g = np.sqrt(gamma1) * s ** ((gamma1 - 1.0) / 2.0) - np.sqrt(gamma2) * s ** ((gamma2 - 1.0) / 2.0)
    return float(np.max(np.abs(g)))


def brute_force_sup_h(gamma1: float, gamma2: float, m_sup: float,
                      n_points: int = 10**6) -> float:
    """Dense-scan lower witness for sup |p1 - p2| on [0, M]."""
    s = np.linspace(0.0, m_sup, n_points)
    h = (gamma1 / (gamma1 - 1.0)) * s ** (gamma1 - 1.0) - (gamma2 / (gamma2 - 1.0)) * s ** (gamma2 - 1.0)
    return float(np.max(np.abs(h)))


def bound_powerlaw(u01: GridField, u02: GridField, m1: ConstitutiveModel,
                   m2: ConstitutiveModel, t: float,
                   cross_check_tol: float = 1e-9) -> StabilityBreakdown:
    """Fully explicit power-law bound with global growth-law norms.

    The explicit form requires the exponents in increasing order; a pair
    arriving out of order is relabelled wholesale (datum and model swap
    together, so the first-datum norms track the relabelling).  Hypotheses
    checked individually: nonnegative initial data, first datum of bounded
    variation, growth laws with bounded derivative.  The closed forms
    majorize the sampled suprema of `bound_general`; that domination is
    asserted here as a drift check on the sampler.
    """
    if m1.gamma > m2.gamma:
        u01, u02 = u02, u01
        m1, m2 = m2, m1
    if float(np.min(u01.values)) < 0 or float(np.min(u02.values)) < 0:
        raise StabilityError("power-law bound needs nonnegative initial data")
    if not np.all(np.isfinite(u01.values)):
        raise StabilityError("first datum must have finite sup and variation")
    g0 = _max_g0(m1, m2)
    factor = math.exp(t * g0)
    m_sup = factor * linf_norm(u01)
    inputs = GammaBoundInputs(gamma1=m1.gamma, gamma2=m2.gamma, m_sup=m_sup,
                              t=t, dim=u01.spec.dim, g0=g0)
    d = u01.spec.dim
    sup_g = sup_sqrtphi_closed(inputs)
    sup_h = sup_pressure_closed(inputs)
    g2p_global = m2.growth.sup_abs_prime(0.0, float("inf"))
    gdiff_global = growth_sup_diff_global(m1.growth, m2.growth)
    p_hi = max(pressure_image(m1, 0.0, m_sup)[1], pressure_image(m2, 0.0, m_sup)[1])
    closed = StabilityBreakdown(
        term_initial=factor * l1_distance(u01, u02),
        term_diffusion=4.0 * math.sqrt(d * t) * factor * tv_norm(u01) * sup_g,
        term_pressure=t * factor * g2p_global * sup_h * l1_norm(u01),
        term_growthlaw=t * factor * gdiff_global * l1_norm(u01),
        intervals=IntervalSet((0.0, m_sup), pressure_image(m1, 0.0, m_sup), (0.0, p_hi)))
    sampled = bound_general(u01, u02, m1, m2, t)
    if closed.total < sampled.total - cross_check_tol:
        raise StabilityError(
            f"closed-form total {closed.total:.12g} fell below sampled total "
            f"{sampled.total:.12g}; supremum sampler has drifted")
    return closed


@dataclass(frozen=True)
class CertificationResult:
    breakdown_discrete: StabilityBreakdown
    breakdown_general: StabilityBreakdown
    breakdown_powerlaw: StabilityBreakdown | None
    empirical_gap: float
    n: int
    tau: float

    @property
    def certified(self) -> bool:
        return bool(self.breakdown_discrete.certified)

    @property
    def chain_ok(self) -> bool:
        """empirical <= discrete <= power-law closed bound (when available)."""
        if not self.certified:
            return False
        if self.breakdown_powerlaw is None:
            return True
        slack = 1e-8 * (1.0 + self.breakdown_powerlaw.total)
        return self.breakdown_discrete.total <= self.breakdown_powerlaw.total + slack


def certify(u01: GridField, u02: GridField, m1: ConstitutiveModel,
            m2: ConstitutiveModel, t: float, n: int,
            newton_tol: float | None = None,
            continuation_epsilons: tuple[float, ...] = (1e-2, 1e-4, 0.0),
            slack_scale: float = 1e-8) -> CertificationResult:
    """Run both n-step evolutions with shared tau = t/n and certify the
    measured L1 gap against the discrete bound."""
    cfg = EvolutionConfig(t_final=t, n_steps=n, newton_tol=newton_tol,
                          continuation_epsilons=continuation_epsilons)
    traj1 = evolve(u01, m1, cfg)
    traj2 = evolve(u02, m2, cfg)
    gap = l1_distance(traj1.final, traj2.final)
    disc = bound_discrete(u01, u02, m1, m2, n, cfg.tau).with_empirical(gap, slack_scale)
    gen = bound_general(u01, u02, m1, m2, t)
    try:
        plaw = bound_powerlaw(u01, u02, m1, m2, t)
    except StabilityError:
        plaw = None
    return CertificationResult(breakdown_discrete=disc, breakdown_general=gen,
                               breakdown_powerlaw=plaw, empirical_gap=gap,
                               n=n, tau=cfg.tau)
