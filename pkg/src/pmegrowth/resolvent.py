"""One implicit time step: solve u - tau*Lap(phi(u)) - tau*(u)_+ G(p(u)) = f.

The solve works in the transformed variable v = phi(u), where the problem
reads -tau*Lap(v) + H(v) = f with the monotone increasing scalar map

    H(v) = phi^-1(v) - tau * (phi^-1(v))_+ G(p(phi^-1(v))).

Strategy: continuation over a decreasing list of regularization epsilons
(warm-starting each stage, ending at the raw degenerate law), and within a
stage a semismooth Newton iteration with backtracking on the L1 residual.
The Newton linearization diag(H') - tau*Lap is symmetric positive definite;
1-D systems are factorized directly, 2-D systems use Jacobi-preconditioned
conjugate gradients.  A pointwise nonlinear Gauss-Seidel sweep serves as a
globally convergent fallback when a Newton step cannot reduce the residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .field import Boundary, GridField, GridSpec, laplacian, l1_norm, lr_norm, pos_neg_linf
from .model import ConstitutiveModel

_DERIV_CLAMP = 1e12


class ResolventError(RuntimeError):
    pass


class TauTooLarge(ResolventError):
    """tau * G(0) >= 1 violates resolvent admissibility."""


class NonConvergence(ResolventError):
    """Iteration budget exhausted; caller may refine continuation_epsilons."""


@dataclass(frozen=True)
class ResolventConfig:
    tau: float
    newton_tol: float | None = None      # None -> 1e-10*||f||_1 + 1e-14
    max_iters: int = 200
    continuation_epsilons: Sequence[float] = (1e-2, 1e-4, 0.0)
    cg_rel_tol: float = 1e-12

    def tol_for(self, f_l1: float) -> float:
        if self.newton_tol is not None:
            return self.newton_tol
        return 1e-10 * f_l1 + 1e-14


@dataclass(frozen=True)
class ResolventInvariants:
    """A-posteriori checks of the positive/negative-part bounds: for
    r in {1, 2, inf}, ||u_+||_r <= (1 - tau G(0))^-1 ||f_+||_r and
    ||u_-||_r <= ||f_-||_r, plus the cell-wise two-sided bound."""

    lr_pos_ok: bool
    lr_neg_ok: bool
    pointwise_ok: bool
    worst_margin: float  # most negative slack across all checks (>= 0 is clean)

    @property
    def all_ok(self) -> bool:
        return self.lr_pos_ok and self.lr_neg_ok and self.pointwise_ok


@dataclass(frozen=True)
class ResolventReport:
    u: GridField
    iterations: int
    final_residual_l1: float
    invariant_flags: ResolventInvariants
    phi_u_l1_ratio: float = float("nan")  # ||phi(u)||_1 / ||f||_1, logged only


def _positive_part(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _growth_term(u: np.ndarray, m: ConstitutiveModel) -> np.ndarray:
    up = _positive_part(u)
    return up * np.asarray(m.growth(m.pressure(up)), dtype=float)


def _growth_term_prime(u: np.ndarray, m: ConstitutiveModel) -> np.ndarray:
    """d/du [(u)_+ G(p(u))]; subgradient 0 at u = 0 keeps the Jacobian
    symmetric and errs on the stiff side."""
    out = np.zeros_like(u)
    pos = u > 0.0
    if np.any(pos):
        up = u[pos]
        p = np.asarray(m.pressure(up), dtype=float)
        g = np.asarray(m.growth(p), dtype=float)
        gp = np.asarray(m.growth.prime(p), dtype=float)
        # u * p'(u) = gamma * u^(gamma-1), finite for every gamma > 1
        out[pos] = g + m.gamma * up ** (m.gamma - 1.0) * gp
    return out


def _residual(v: np.ndarray, f: np.ndarray, tau: float, m: ConstitutiveModel,
              spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(m.phi_inverse(v), dtype=float)
    r = u - tau * _growth_term(u, m) - tau * laplacian(v, spec) - f
    return r, u


def _h_prime(v: np.ndarray, u: np.ndarray, tau: float, m: ConstitutiveModel) -> np.ndarray:
    dinv = np.asarray(m.phi_inverse_prime(v, clamp=_DERIV_CLAMP), dtype=float)
    hp = dinv * (1.0 - tau * _growth_term_prime(u, m))
    return np.maximum(hp, 1.0 / _DERIV_CLAMP)


def _banded_tridiag_solve(diag: np.ndarray, off: float, rhs: np.ndarray) -> np.ndarray:
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1, :] = diag
    ab[2, :-1] = off
    return la.solve_banded((1, 1), ab, rhs)


def _solve_linear_1d(hp: np.ndarray, tau: float, spec: GridSpec, rhs: np.ndarray) -> np.ndarray:
    c = tau / spec.h**2
    diag = hp + 2.0 * c
    if spec.boundary is not Boundary.PERIODIC:
        return _banded_tridiag_solve(diag, -c, rhs)
    # cyclic tridiagonal via Sherman-Morrison: two banded solves
    n = diag.size
    gamma = -diag[0]
    d_mod = diag.copy()
    d_mod[0] -= gamma
    d_mod[-1] -= c * c / gamma
    y = _banded_tridiag_solve(d_mod, -c, rhs)
    uvec = np.zeros(n)
    uvec[0] = gamma
    uvec[-1] = -c
    z = _banded_tridiag_solve(d_mod, -c, uvec)
    vy = y[0] + (-c / gamma) * y[-1]
    vz = z[0] + (-c / gamma) * z[-1]
    return y - (vy / (1.0 + vz)) * z


def _solve_linear_cg(hp: np.ndarray, tau: float, spec: GridSpec, rhs: np.ndarray,
                     rel_tol: float) -> np.ndarray:
    """Jacobi-preconditioned CG on (diag(hp) - tau*Lap) x = rhs, matrix-free."""
    shape = spec.shape

    def apply_j(x_flat):
        x = x_flat.reshape(shape)
        return (hp * x - tau * laplacian(x, spec)).ravel()

    b = rhs.ravel()
    d_inv = 1.0 / (hp + 2.0 * spec.dim * tau / spec.h**2).ravel()
    x = np.zeros_like(b)
    r = b - apply_j(x)
    z = d_inv * r
    p = z.copy()
    rz = float(r @ z)
    b_norm = float(np.linalg.norm(b)) or 1.0
    for _ in range(max(200, 20 * b.size)):
        if np.linalg.norm(r) <= rel_tol * b_norm:
            break
        jp = apply_j(p)
        alpha = rz / float(p @ jp)
        x += alpha * p
        r -= alpha * jp
        z = d_inv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x.reshape(shape)


def _newton_step(v: np.ndarray, r: np.ndarray, u: np.ndarray, f: np.ndarray,
                 tau: float, m: ConstitutiveModel, spec: GridSpec,
                 cg_rel_tol: float) -> np.ndarray:
    hp = _h_prime(v, u, tau, m)
    if spec.dim == 1:
        delta = _solve_linear_1d(hp, tau, spec, -r)
    else:
        delta = _solve_linear_cg(hp, tau, spec, -r, cg_rel_tol)
    return delta.reshape(spec.shape)


def _neighbor_sum(v: np.ndarray, spec: GridSpec) -> np.ndarray:
    return laplacian(v, spec) * spec.h**2 + 2.0 * spec.dim * v


def _pointwise_solve(rhs: np.ndarray, tau: float, m: ConstitutiveModel,
                     two_d_c: float, u_start: np.ndarray | None = None,
                     max_iter: int = 40) -> np.ndarray:
    """Vectorized exact solve of the per-cell monotone scalar equations

        u - tau (u)_+ G(p(u)) + 2*d*c*phi(u) = rhs

    in the u variable, where the left side has slope >= 1 - tau G(0) > 0
    everywhere (no degeneracy).  Safeguarded Newton on the closed-form
    bracket [min(rhs, 0), max(rhs, 0)/(1 - tau g0)]."""
    g0 = m.growth.g0

    def q(u):
        return (u - tau * _growth_term(u, m)
                + two_d_c * np.asarray(m.phi(u), dtype=float) - rhs)

    def q_prime(u):
        return (1.0 - tau * _growth_term_prime(u, m)
                + two_d_c * np.asarray(m.phi_prime(u), dtype=float))

    lo = np.minimum(rhs, 0.0)
    hi = np.maximum(rhs, 0.0) / (1.0 - tau * g0)
    u = np.clip(u_start if u_start is not None else rhs, lo, hi)
    scale = 1.0 + float(np.max(np.abs(rhs))) if rhs.size else 1.0
    for _ in range(max_iter):
        qv = q(u)
        if np.max(np.abs(qv)) <= 1e-15 * scale:
            break
        neg = qv <= 0.0
        lo = np.where(neg, u, lo)
        hi = np.where(neg, hi, u)
        u_new = u - qv / q_prime(u)
        bad = (u_new < lo) | (u_new > hi) | ~np.isfinite(u_new)
        u = np.where(bad, 0.5 * (lo + hi), u_new)
    return u


def _checker_mask(spec: GridSpec, color: int) -> np.ndarray:
    n = spec.points_per_axis
    if spec.dim == 1:
        idx = np.arange(n)
        return (idx % 2) == color
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return ((ii + jj) % 2) == color


def _relaxation_sweep(v: np.ndarray, f: np.ndarray, tau: float,
                      m: ConstitutiveModel, spec: GridSpec) -> np.ndarray:
    """One red-black sweep of pointwise exact solves (nonlinear
    Gauss-Seidel on the 2d+1-point stencil).  Globally convergent for this
    monotone discretization; it resolves the degenerate far field where the
    transformed Newton iteration moves too slowly."""
    c = tau / spec.h**2
    two_d_c = 2.0 * spec.dim * c
    v = v.copy()
    u_cur = np.asarray(m.phi_inverse(v), dtype=float)
    for color in (0, 1):
        mask = _checker_mask(spec, color)
        rhs = f + c * _neighbor_sum(v, spec)
        u_new = _pointwise_solve(rhs, tau, m, two_d_c, u_start=u_cur)
        v_new = np.asarray(m.phi(u_new), dtype=float)
        v[mask] = v_new[mask]
        u_cur = np.where(mask, u_new, u_cur)
    return v


def _solve_stage(v0: np.ndarray, f: np.ndarray, tau: float, m: ConstitutiveModel,
                 spec: GridSpec, tol: float, max_iters: int,
                 cg_rel_tol: float) -> tuple[np.ndarray, int, float]:
    meas = spec.cell_measure
    v = v0.copy()
    r, u = _residual(v, f, tau, m, spec)
    res = float(np.sum(np.abs(r))) * meas
    iters = 0
    while res > tol and iters < max_iters:
        res_before = res
        delta = _newton_step(v, r, u, f, tau, m, spec, cg_rel_tol)
        step = 1.0
        improved = False
        for _ in range(25):
            v_try = v + step * delta
            r_try, u_try = _residual(v_try, f, tau, m, spec)
            res_try = float(np.sum(np.abs(r_try))) * meas
            if res_try <= res * (1.0 - 1e-4 * step) or res_try <= tol:
                v, r, u, res = v_try, r_try, u_try, res_try
                improved = True
                break
            step *= 0.5
        # slow or failed Newton progress: pointwise relaxation resolves the
        # degenerate cells the transformed linearization cannot move
        if res > tol and (not improved or res > 0.5 * res_before):
            v_rel = _relaxation_sweep(v, f, tau, m, spec)
            r_rel, u_rel = _residual(v_rel, f, tau, m, spec)
            res_rel = float(np.sum(np.abs(r_rel))) * meas
            if res_rel < res or not improved:
                v, r, u, res = v_rel, r_rel, u_rel, res_rel
        iters += 1
    return v, iters, res


def verify_resolvent_bounds(f: GridField, u: GridField, m: ConstitutiveModel,
                            cfg: ResolventConfig) -> ResolventInvariants:
    """Positive/negative-part bounds for r in {1, 2, inf} and cell-wise;
    violations are reported, never raised."""
    g0 = m.growth.g0
    factor = 1.0 / (1.0 - cfg.tau * g0)
    margins = []
    lr_pos_ok = lr_neg_ok = True
    for r in (1.0, 2.0, np.inf):
        tol = 1e-8 * (1.0 + lr_norm(f, r))
        fp = GridField(f.spec, _positive_part(f.values))
        fm = GridField(f.spec, _positive_part(-f.values))
        up = GridField(u.spec, _positive_part(u.values))
        um = GridField(u.spec, _positive_part(-u.values))
        m_pos = factor * lr_norm(fp, r) + tol - lr_norm(up, r)
        m_neg = lr_norm(fm, r) + tol - lr_norm(um, r)
        margins += [m_pos, m_neg]
        lr_pos_ok &= m_pos >= 0
        lr_neg_ok &= m_neg >= 0
    f_pos_sup, f_neg_sup = pos_neg_linf(f)
    tol_inf = 1e-8 * (1.0 + lr_norm(f, np.inf))
    hi = factor * f_pos_sup + tol_inf
    lo = -f_neg_sup - tol_inf
    m_hi = float(hi - np.max(u.values))
    m_lo = float(np.min(u.values) - lo)
    margins += [m_hi, m_lo]
    pointwise_ok = m_hi >= 0 and m_lo >= 0
    return ResolventInvariants(lr_pos_ok=lr_pos_ok, lr_neg_ok=lr_neg_ok,
                               pointwise_ok=pointwise_ok,
                               worst_margin=float(min(margins)))


def solve_resolvent(f: GridField, m: ConstitutiveModel, cfg: ResolventConfig) -> ResolventReport:
    g0 = m.growth.g0
    if cfg.tau * g0 >= 1.0:
        raise TauTooLarge(f"tau*G(0) = {cfg.tau * g0:.6g} >= 1 violates resolvent admissibility")
    if cfg.tau <= 0:
        raise ResolventError(f"tau must be positive, got {cfg.tau}")
    f_l1 = l1_norm(f)
    tol = cfg.tol_for(f_l1)

    eps_list = list(cfg.continuation_epsilons)
    if not eps_list:
        eps_list = [m.epsilon]
    if eps_list[-1] != m.epsilon:
        eps_list = [e for e in eps_list if e > m.epsilon] + [m.epsilon]

    spec = f.spec
    u_guess = f.values.copy()  # identity warm start
    total_iters = 0
    res = np.inf
    for eps in eps_list:
        m_eps = m.with_epsilon(eps)
        v = np.asarray(m_eps.phi(u_guess), dtype=float)
        v, iters, res = _solve_stage(v, f.values, cfg.tau, m_eps, spec, tol,
                                     cfg.max_iters, cfg.cg_rel_tol)
        u_guess = np.asarray(m_eps.phi_inverse(v), dtype=float)
        total_iters += iters
    if res > tol:
        raise NonConvergence(
            f"resolvent solve stalled at L1 residual {res:.3e} (target {tol:.3e}) "
            f"after {total_iters} iterations")
    u = GridField(spec, u_guess)
    flags = verify_resolvent_bounds(f, u, m, cfg)
    phi_ratio = (l1_norm(GridField(spec, np.asarray(m.phi(u.values), dtype=float))) / f_l1
                 if f_l1 > 0 else 0.0)
    return ResolventReport(u=u, iterations=total_iters, final_residual_l1=res,
                           invariant_flags=flags, phi_u_l1_ratio=phi_ratio)


def contraction_check(f1: GridField, f2: GridField, m: ConstitutiveModel,
                      cfg: ResolventConfig) -> tuple[float, float]:
    """(lhs, rhs) of the L1 contraction ||u1 - u2||_1 <= (1 - tau G(0))^-1 ||f1 - f2||_1."""
    from .field import l1_distance

    u1 = solve_resolvent(f1, m, cfg).u
    u2 = solve_resolvent(f2, m, cfg).u
    lhs = l1_distance(u1, u2)
    rhs = l1_distance(f1, f2) / (1.0 - cfg.tau * m.growth.g0)
    return lhs, rhs


def tv_check(f: GridField, m: ConstitutiveModel, cfg: ResolventConfig) -> tuple[float, float]:
    """(lhs, rhs) of the TV contraction ||u||_TV <= (1 - tau G(0))^-1 ||f||_TV."""
    from .field import tv_norm

    u = solve_resolvent(f, m, cfg).u
    return tv_norm(u), tv_norm(f) / (1.0 - cfg.tau * m.growth.g0)
