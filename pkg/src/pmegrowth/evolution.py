"""Mild-solution marching: u_n = (I + tau A)^-1 u_{n-1} with tau = t/n.

Snapshots follow the piecewise-constant-in-time interpolant (the iterate
with index floor(s/tau)), uniform steps only -- the rate certificate and
the discrete stability estimate are stated for exactly this scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import (Boundary, GridField, GridSpec, boundary_mass_fraction,
                    l1_distance, pos_neg_linf)
from .model import ConstitutiveModel
from .resolvent import NonConvergence, ResolventConfig, solve_resolvent


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    t_final: float
    n_steps: int
    newton_tol: float | None = None
    max_iters: int = 200
    continuation_epsilons: tuple[float, ...] = (1e-2, 1e-4, 0.0)
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.t_final > 0:
            raise EvolutionError(f"t_final must be positive, got {self.t_final}")
        if self.n_steps < 1:
            raise EvolutionError(f"n_steps must be >= 1, got {self.n_steps}")
        for s in self.snapshot_times:
            if not (0.0 <= s <= self.t_final * (1 + 1e-12)):
                raise EvolutionError(f"snapshot time {s} outside [0, {self.t_final}]")

    @property
    def tau(self) -> float:
        return self.t_final / self.n_steps

    def resolvent_config(self) -> ResolventConfig:
        return ResolventConfig(tau=self.tau, newton_tol=self.newton_tol,
                               max_iters=self.max_iters,
                               continuation_epsilons=self.continuation_epsilons)


@dataclass(frozen=True)
class StepFlags:
    step: int
    residual_l1: float
    bounds_ok: bool
    growth_cap_ok: bool       # ||(u_k)_+||_inf <= (1 - tau G0)^-k ||(u0)_+||_inf
    boundary_mass: float


@dataclass(frozen=True)
class Trajectory:
    snapshots: list[tuple[float, GridField]]
    mass_series: list[tuple[float, float]]
    step_flags: list[StepFlags] = field(repr=False, default_factory=list)
    tau: float = 0.0
    n_steps: int = 0

    def at(self, time: float) -> GridField:
        for t, f in self.snapshots:
            if abs(t - time) <= 1e-9 * max(1.0, abs(time)):
                return f
        raise EvolutionError(f"no snapshot recorded at t={time}")

    @property
    def final(self) -> GridField:
        return self.snapshots[-1][1]

    def boundary_flagged(self, threshold: float = 1e-8) -> bool:
        """True when any iterate parked more than `threshold` of its mass in
        the outermost cell layer (box truncation visibly active)."""
        return any(fl.boundary_mass > threshold for fl in self.step_flags)


def snapshot_index(s: float, tau: float, n_steps: int) -> int:
    """Piecewise-constant interpolant index: floor(s/tau), clamped to [0, n]."""
    k = math.floor(s / tau + 1e-9)
    return max(0, min(k, n_steps))


def evolve(u0: GridField, m: ConstitutiveModel, cfg: EvolutionConfig) -> Trajectory:
    tau = cfg.tau
    g0 = m.growth.g0
    if tau * g0 >= 1.0:
        raise EvolutionError(
            f"tau*G(0) = {tau * g0:.6g} >= 1 violates resolvent admissibility "
            f"(raise n_steps or shrink t_final)")
    rcfg = cfg.resolvent_config()
    want = sorted(set([0.0, cfg.t_final] + list(cfg.snapshot_times)))
    want_idx: dict[int, list[float]] = {}
    for s in want:
        want_idx.setdefault(snapshot_index(s, tau, cfg.n_steps), []).append(s)

    u = u0
    mass0_pos = pos_neg_linf(u0)[0]
    snapshots: list[tuple[float, GridField]] = []
    mass_series = [(0.0, l1_mass(u0))]
    flags: list[StepFlags] = []
    for s in want_idx.get(0, []):
        snapshots.append((s, u0))
    for k in range(1, cfg.n_steps + 1):
        try:
            rep = solve_resolvent(u, m, rcfg)
        except NonConvergence as exc:
            raise NonConvergence(f"step {k}/{cfg.n_steps}: {exc}") from exc
        u = rep.u
        cap = (1.0 - tau * g0) ** (-k) * mass0_pos + 1e-8 * (1.0 + mass0_pos)
        flags.append(StepFlags(
            step=k,
            residual_l1=rep.final_residual_l1,
            bounds_ok=rep.invariant_flags.all_ok,
            growth_cap_ok=pos_neg_linf(u)[0] <= cap,
            boundary_mass=boundary_mass_fraction(u),
        ))
        mass_series.append((k * tau, l1_mass(u)))
        for s in want_idx.get(k, []):
            snapshots.append((s, u))
    return Trajectory(snapshots=snapshots, mass_series=mass_series,
                      step_flags=flags, tau=tau, n_steps=cfg.n_steps)


def l1_mass(f: GridField) -> float:
    """Signed total mass: cell-measure quadrature of f."""
    return float(np.sum(f.values) * f.spec.cell_measure)


mass = l1_mass


def _aligned_index(edge: float, spec: GridSpec) -> int:
    """Cell-edge index of a window coordinate, or -1 if not aligned."""
    pos = (edge + spec.half_width) / spec.h
    k = round(pos)
    if abs(pos - k) <= 1e-9 * max(1.0, abs(pos)) and 0 <= k <= spec.points_per_axis:
        return int(k)
    return -1


def window_mass(f: GridField, window) -> float:
    """Integral of f over a cell-aligned box window.

    1-D window: (lo, hi); 2-D window: ((xlo, xhi), (ylo, yhi)).  Windows
    must be unions of whole cells so the observation is exact quadrature.
    """
    spec = f.spec
    if spec.dim == 1:
        boxes = [tuple(window)]
    else:
        boxes = [tuple(w) for w in window]
        if len(boxes) != 2:
            raise EvolutionError(f"2-D window needs two (lo, hi) pairs, got {window}")
    slices = []
    for lo, hi in boxes:
        if hi < lo:
            raise EvolutionError(f"window ({lo}, {hi}) has hi < lo")
        i_lo, i_hi = _aligned_index(lo, spec), _aligned_index(hi, spec)
        if i_lo < 0 or i_hi < 0:
            h, L = spec.h, spec.half_width
            near = (round((lo + L) / h) * h - L, round((hi + L) / h) * h - L)
            raise EvolutionError(
                f"window ({lo}, {hi}) is not aligned to cell edges; "
                f"nearest aligned window is ({near[0]:.12g}, {near[1]:.12g})")
        slices.append(slice(i_lo, i_hi))
    return float(np.sum(f.values[tuple(slices)]) * spec.cell_measure)


def self_convergence_gaps(u0: GridField, m: ConstitutiveModel, t: float,
                          n_list: list[int], newton_tol: float | None = None,
                          continuation_epsilons: tuple[float, ...] = (1e-2, 1e-4, 0.0),
                          ) -> list[tuple[int, float]]:
    """Successive-refinement gaps ||u^(2n)(t) - u^(n)(t)||_1 for each n.

    The product-formula error bound guarantees these decay at least like
    n^(-1/2); the harness fits the observed exponent.
    """
    finals: dict[int, GridField] = {}
    for n in sorted(set(list(n_list) + [2 * n for n in n_list])):
        cfg = EvolutionConfig(t_final=t, n_steps=n, newton_tol=newton_tol,
                              continuation_epsilons=continuation_epsilons)
        finals[n] = evolve(u0, m, cfg).final
    return [(n, l1_distance(finals[2 * n], finals[n])) for n in n_list]


def fit_decay_exponent(pairs: list[tuple[int, float]]) -> float:
    """Least-squares slope of -log(gap) vs log(n); gaps at zero are skipped."""
    xs, ys = [], []
    for n, gap in pairs:
        if gap > 0:
            xs.append(math.log(n))
            ys.append(math.log(gap))
    if len(xs) < 2:
        return float("inf")
    slope = np.polyfit(xs, ys, 1)[0]
    return float(-slope)


# -- pure-diffusion validation oracle --------------------------------------

def barenblatt_profile(spec: GridSpec, gamma: float, t: float, c: float) -> GridField:
    """Self-similar source solution of the pure power-law diffusion equation
    (growth switched off), used as an external validation oracle:

        U(t, x) = t^-alpha * (c - kappa |x|^2 t^(-2 alpha / d))_+^(1/(gamma-1)),
        alpha = d / (d (gamma - 1) + 2),   kappa = alpha (gamma - 1) / (2 d gamma).
    """
    if t <= 0:
        raise EvolutionError("barenblatt_profile needs t > 0")
    d = spec.dim
    alpha = d / (d * (gamma - 1.0) + 2.0)
    kappa = alpha * (gamma - 1.0) / (2.0 * d * gamma)
    if spec.dim == 1:
        (x,) = spec.meshgrid()
        r2 = x**2
    else:
        xx, yy = spec.meshgrid()
        r2 = xx**2 + yy**2
    core = c - kappa * r2 * t ** (-2.0 * alpha / d)
    vals = t ** (-alpha) * np.maximum(core, 0.0) ** (1.0 / (gamma - 1.0))
    return GridField(spec, vals)


def barenblatt_support_radius(gamma: float, t: float, c: float, d: int) -> float:
    alpha = d / (d * (gamma - 1.0) + 2.0)
    kappa = alpha * (gamma - 1.0) / (2.0 * d * gamma)
    return math.sqrt(c / kappa) * t ** (alpha / d)


def barenblatt_refinement_errors(gamma: float, t0: float, t1: float, c: float,
                                 levels: list[tuple[int, int]], half_width: float = 1.0,
                                 boundary: Boundary = Boundary.DIRICHLET_ZERO,
                                 ) -> list[tuple[int, int, float]]:
    """March the profile from t0 to t1 and report the L1 error against the
    closed form at t1, per (N, n_steps) refinement level."""
    out = []
    model = pure_diffusion_model(gamma)
    for n_cells, n_steps in levels:
        spec = GridSpec(1, half_width, n_cells, boundary)
        u0 = barenblatt_profile(spec, gamma, t0, c)
        cfg = EvolutionConfig(t_final=t1 - t0, n_steps=n_steps)
        traj = evolve(u0, model, cfg)
        exact = barenblatt_profile(spec, gamma, t1, c)
        out.append((n_cells, n_steps, l1_distance(traj.final, exact)))
    return out


def pure_diffusion_model(gamma: float) -> ConstitutiveModel:
    """Power-law model with the growth term switched off (validation mode)."""
    from .model import GrowthKind, GrowthLaw, PowerLaw

    return ConstitutiveModel(PowerLaw(gamma), GrowthLaw(GrowthKind.CONSTANT, g0=0.0))
