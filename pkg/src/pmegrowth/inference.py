"""Bayesian recovery of the diffusion exponent from windowed mass data.

Forward operator: evolve the model at a candidate exponent, integrate the
state over disjoint cell-aligned windows at the observation times.  The
negative log-posterior is

    V(gamma) = 1/2 |y - M(gamma)|_Sigma^2 + (gamma - m0)^2 / (2 sigma0^2)

with a truncated Gaussian prior (hard support, the parameter space is
bounded).  Samplers: random-walk Metropolis-Hastings and MALA with a
consistency-controlled finite-difference gradient; a dense quadrature
posterior on the support serves as the deterministic ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .evolution import EvolutionConfig, evolve, window_mass
from .field import GridField
from .model import ConstitutiveModel, GrowthLaw, PowerLaw, Regularization


class InferenceError(ValueError):
    pass


class StepUnderflow(InferenceError):
    """Finite-difference step reached its floor without two-scale agreement."""


@dataclass(frozen=True)
class ObservationSet:
    """Windows Q_k (disjoint, cell-aligned), times t_j, data y and noise
    covariance; entries of y are ordered time-major: (j, k) row-major."""

    windows: tuple
    times: tuple[float, ...]
    y: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if list(times) != sorted(times):
            raise InferenceError("observation times must be sorted")
        y = np.asarray(self.y, dtype=float).ravel()
        n = len(times) * len(self.windows)
        if y.size != n:
            raise InferenceError(f"y has {y.size} entries, expected {n}")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (n, n):
            raise InferenceError(f"sigma shape {sigma.shape} != ({n}, {n})")
        try:
            chol = la.cho_factor(sigma, lower=True)
        except la.LinAlgError as exc:
            raise InferenceError(f"noise covariance is not SPD: {exc}") from exc
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    def mahalanobis_sq(self, r: np.ndarray) -> float:
        return float(r @ la.cho_solve(self._chol, r))

    def check_windows_disjoint(self, spec) -> None:
        ivs = []
        for w in self.windows:
            box = (tuple(w),) if spec.dim == 1 else tuple(tuple(b) for b in w)
            ivs.append(box)
        for i in range(len(ivs)):
            for j in range(i + 1, len(ivs)):
                if all(a[0] < b[1] and b[0] < a[1] for a, b in zip(ivs[i], ivs[j])):
                    raise InferenceError(f"windows {i} and {j} overlap")


@dataclass(frozen=True)
class PriorSpec:
    m0: float
    sigma0: float
    support: tuple[float, float] = (1.0 + 1e-9, 10.0)

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InferenceError(f"prior std must be positive, got {self.sigma0}")
        lo, hi = self.support
        if not (1.0 < lo < hi):
            raise InferenceError(f"support [{lo}, {hi}] must sit inside (1, inf)")
        if not math.isfinite(self.m0):
            raise InferenceError("prior mean must be finite")

    def contains(self, gamma: float) -> bool:
        return self.support[0] <= gamma <= self.support[1]


@dataclass(frozen=True)
class ForwardScenario:
    """Everything the forward operator needs except the exponent itself."""

    u0: GridField
    growth: GrowthLaw
    t_final: float
    n_steps: int
    epsilon: float = 0.0
    newton_tol: float | None = None
    continuation_epsilons: tuple[float, ...] = (0.0,)

    def model_for(self, gamma: float) -> ConstitutiveModel:
        return ConstitutiveModel(PowerLaw(gamma), self.growth, Regularization(self.epsilon))

    def with_steps(self, n_steps: int) -> "ForwardScenario":
        return replace(self, n_steps=n_steps)

    def key(self) -> tuple:
        import hashlib

        digest = hashlib.sha1(self.u0.values.tobytes()
                              + repr(self.u0.spec).encode()).hexdigest()
        return (digest, self.growth, self.t_final, self.n_steps,
                self.epsilon, self.continuation_epsilons)


class ForwardCache:
    """Exact-key memo of forward solves; MH chains revisit the current state
    on every rejected step, and the two-scale gradient reuses potentials.
    No interpolation in gamma: a cache hit returns the bit-identical vector."""

    def __init__(self):
        self._data: dict[tuple, np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: tuple) -> np.ndarray | None:
        out = self._data.get(key)
        if out is not None:
            self.hits += 1
        return out

    def put(self, key: tuple, value: np.ndarray) -> None:
        self.misses += 1
        self._data[key] = value


def forward(gamma: float, scenario: ForwardScenario, obs: ObservationSet,
            cache: ForwardCache | None = None) -> np.ndarray:
    """Observation vector m_kj = integral of u_gamma(t_j) over Q_k, ordered
    time-major to match ObservationSet.y."""
    key = (float(gamma),) + scenario.key()
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    m = scenario.model_for(gamma)
    cfg = EvolutionConfig(t_final=scenario.t_final, n_steps=scenario.n_steps,
                          newton_tol=scenario.newton_tol,
                          continuation_epsilons=scenario.continuation_epsilons,
                          snapshot_times=tuple(obs.times))
    try:
        traj = evolve(scenario.u0, m, cfg)
    except Exception as exc:
        raise InferenceError(f"forward solve failed at gamma={gamma}: {exc}") from exc
    out = np.array([window_mass(traj.at(t), w) for t in obs.times for w in obs.windows])
    if cache is not None:
        cache.put(key, out)
    return out


def potential(gamma: float, scenario: ForwardScenario, obs: ObservationSet | None,
              prior: PriorSpec, cache: ForwardCache | None = None) -> float:
    """Negative log-posterior; +inf outside the truncated prior support.
    obs=None drops the data term (prior-only target, used by diagnostics)."""
    if not prior.contains(gamma):
        return float("inf")
    v = (gamma - prior.m0) ** 2 / (2.0 * prior.sigma0**2)
    if obs is not None:
        r = obs.y - forward(gamma, scenario, obs, cache)
        v += 0.5 * obs.mahalanobis_sq(r)
    return float(v)


@dataclass(frozen=True)
class GradientEstimate:
    value: float
    delta: float
    agreement: float  # |g(delta) - g(delta/2)| / max(|g|, floor)


def grad_potential(gamma: float, scenario: ForwardScenario, obs: ObservationSet | None,
                   prior: PriorSpec, cache: ForwardCache | None = None,
                   delta0: float = 1e-2, delta_min: float = 1e-4,
                   rel_tol: float = 0.01) -> GradientEstimate:
    """Central-difference gradient with a two-scale consistency rule: the
    estimate at delta must agree with the one at delta/2 to `rel_tol`
    relative (with a small absolute floor so flat gradients pass), else
    delta is halved down to delta_min."""
    lo, hi = prior.support
    room = min(gamma - lo, hi - gamma)
    if room <= 0:
        raise StepUnderflow(f"gamma={gamma} sits on the support boundary")
    delta = min(delta0, 0.5 * room)

    def central(d: float) -> float:
        vp = potential(gamma + d, scenario, obs, prior, cache)
        vm = potential(gamma - d, scenario, obs, prior, cache)
        return (vp - vm) / (2.0 * d)

    floor = 1e-8 * (1.0 + abs(potential(gamma, scenario, obs, prior, cache)))
    while True:
        g_c = central(delta)
        g_f = central(delta / 2.0)
        scale = max(abs(g_c), abs(g_f), floor)
        agreement = abs(g_c - g_f) / scale
        if agreement <= rel_tol:
            return GradientEstimate(value=g_f, delta=delta, agreement=agreement)
        if delta / 2.0 < delta_min:
            raise StepUnderflow(
                f"two-scale agreement {agreement:.3g} > {rel_tol} at the "
                f"delta floor {delta_min} (gamma={gamma})")
        delta /= 2.0


@dataclass(frozen=True)
class StepRecord:
    step: int
    gamma: float
    v: float
    accepted: bool
    grad: float | None = None
    grad_agreement: float | None = None
    fallback: bool = False


@dataclass(frozen=True)
class PosteriorSummary:
    samples: np.ndarray
    acceptance_rate: float
    bin_edges: np.ndarray
    masses: np.ndarray
    map_estimate: float
    records: list[StepRecord] = field(repr=False, default_factory=list)
    tuned_step: float | None = None

    def __post_init__(self):
        total = float(np.sum(self.masses))
        if self.masses.size and abs(total - 1.0) > 1e-12:
            raise InferenceError(f"histogram masses sum to {total}, not 1")


def _histogram_masses(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(samples, bins=edges)
    total = counts.sum()
    if total == 0:
        raise InferenceError("no samples fell inside the histogram support")
    return counts / total


def support_bin_edges(prior: PriorSpec, n_bins: int = 40) -> np.ndarray:
    return np.linspace(prior.support[0], prior.support[1], n_bins + 1)


def mh_accept_log_ratio(v_old: float, v_new: float) -> float:
    """log acceptance ratio of symmetric-proposal Metropolis: V(old) - V(new)."""
    return v_old - v_new


def mh_chain(init: float, n_samples: int, proposal_std: float,
             scenario: ForwardScenario, obs: ObservationSet | None, prior: PriorSpec,
             seed: int, burn_in: int = 0, cache: ForwardCache | None = None,
             bin_edges: np.ndarray | None = None, tune: bool = False) -> PosteriorSummary:
    """Random-walk Metropolis-Hastings with Gaussian proposals.

    Optional pilot tuning adapts the proposal scale during burn-in only
    (blocks of 25, pushed toward the 0.2-0.5 acceptance window), then the
    scale freezes so the retained chain has the exact stationary law.
    """
    if not prior.contains(init):
        raise InferenceError(f"init {init} outside prior support {prior.support}")
    rng = np.random.default_rng(seed)
    cache = cache if cache is not None else ForwardCache()
    gamma = float(init)
    v = potential(gamma, scenario, obs, prior, cache)
    std = proposal_std
    records: list[StepRecord] = []
    kept: list[float] = []
    accepted_after_burn = 0
    best_gamma, best_v = gamma, v
    block_acc = 0
    total = n_samples + burn_in
    for step in range(total):
        prop = gamma + std * rng.standard_normal()
        v_prop = potential(prop, scenario, obs, prior, cache) if std > 0 else v
        if std > 0:
            log_alpha = mh_accept_log_ratio(v, v_prop)
            accept = math.log(rng.uniform()) < log_alpha
        else:
            accept = False  # degenerate proposal: chain stays at init
        if accept:
            gamma, v = prop, v_prop
            block_acc += 1
        if v < best_v:
            best_gamma, best_v = gamma, v
        in_burn = step < burn_in
        if tune and in_burn and std > 0 and (step + 1) % 25 == 0:
            rate = block_acc / 25.0
            if rate < 0.2:
                std /= 1.5
            elif rate > 0.5:
                std *= 1.5
            block_acc = 0
        if not in_burn:
            kept.append(gamma)
            accepted_after_burn += int(accept)
            records.append(StepRecord(step=step - burn_in, gamma=gamma, v=v,
                                      accepted=accept))
    samples = np.asarray(kept)
    edges = bin_edges if bin_edges is not None else support_bin_edges(prior)
    return PosteriorSummary(samples=samples,
                            acceptance_rate=accepted_after_burn / max(len(kept), 1),
                            bin_edges=np.asarray(edges),
                            masses=_histogram_masses(samples, np.asarray(edges)),
                            map_estimate=best_gamma, records=records,
                            tuned_step=std)


def mala_chain(init: float, n_samples: int, step_h: float,
               scenario: ForwardScenario, obs: ObservationSet | None, prior: PriorSpec,
               seed: int, burn_in: int = 0, cache: ForwardCache | None = None,
               bin_edges: np.ndarray | None = None, tune: bool = False,
               grad_fn=None) -> PosteriorSummary:
    """Metropolis-adjusted Langevin: proposal gamma' = gamma - h grad V +
    sqrt(2h) xi with the asymmetric-density correction.  A step whose
    gradient hits the consistency floor falls back to the matched random
    walk (recorded per step).  `grad_fn` overrides the gradient (test hook).
    """
    if not prior.contains(init):
        raise InferenceError(f"init {init} outside prior support {prior.support}")
    if step_h <= 0:
        raise InferenceError(f"step_h must be positive, got {step_h}")
    rng = np.random.default_rng(seed)
    cache = cache if cache is not None else ForwardCache()
    grad_cache: dict[float, GradientEstimate] = {}

    def gradient(g: float) -> GradientEstimate:
        if grad_fn is not None:
            return GradientEstimate(value=float(grad_fn(g)), delta=0.0, agreement=0.0)
        if g not in grad_cache:
            grad_cache[g] = grad_potential(g, scenario, obs, prior, cache)
        return grad_cache[g]

    def log_q(dst: float, src: float, grad_src: float, h: float) -> float:
        mean = src - h * grad_src
        return -((dst - mean) ** 2) / (4.0 * h)

    gamma = float(init)
    v = potential(gamma, scenario, obs, prior, cache)
    h = step_h
    records: list[StepRecord] = []
    kept: list[float] = []
    accepted_after_burn = 0
    best_gamma, best_v = gamma, v
    block_acc = 0
    total = n_samples + burn_in
    for step in range(total):
        fallback = False
        try:
            g_here = gradient(gamma)
        except StepUnderflow:
            g_here = None
            fallback = True
        xi = rng.standard_normal()
        if fallback:
            prop = gamma + math.sqrt(2.0 * h) * xi
        else:
            prop = gamma - h * g_here.value + math.sqrt(2.0 * h) * xi
        v_prop = potential(prop, scenario, obs, prior, cache)
        if math.isinf(v_prop):
            accept = False
        elif fallback:
            accept = math.log(rng.uniform()) < (v - v_prop)
        else:
            try:
                g_prop = gradient(prop)
                log_alpha = (v - v_prop
                             + log_q(gamma, prop, g_prop.value, h)
                             - log_q(prop, gamma, g_here.value, h))
                accept = math.log(rng.uniform()) < log_alpha
            except StepUnderflow:
                accept = False
                fallback = True
        if accept:
            gamma, v = float(prop), v_prop
            block_acc += 1
        if v < best_v:
            best_gamma, best_v = gamma, v
        in_burn = step < burn_in
        if tune and in_burn and (step + 1) % 25 == 0:
            rate = block_acc / 25.0
            if rate < 0.3:
                h /= 2.0
            elif rate > 0.9:
                h *= 2.0
            block_acc = 0
        if not in_burn:
            kept.append(gamma)
            accepted_after_burn += int(accept)
            records.append(StepRecord(
                step=step - burn_in, gamma=gamma, v=v, accepted=accept,
                grad=None if fallback else g_here.value,
                grad_agreement=None if fallback else g_here.agreement,
                fallback=fallback))
    samples = np.asarray(kept)
    edges = bin_edges if bin_edges is not None else support_bin_edges(prior)
    return PosteriorSummary(samples=samples,
                            acceptance_rate=accepted_after_burn / max(len(kept), 1),
                            bin_edges=np.asarray(edges),
                            masses=_histogram_masses(samples, np.asarray(edges)),
                            map_estimate=best_gamma, records=records,
                            tuned_step=h)


@dataclass(frozen=True)
class QuadraturePosterior:
    gammas: np.ndarray
    masses: np.ndarray      # trapezoid-weighted node masses, sum to 1
    potentials: np.ndarray

    @property
    def mode(self) -> float:
        dens = self.masses / _trapezoid_weights(self.gammas)
        return float(self.gammas[int(np.argmax(dens))])

    @property
    def mean(self) -> float:
        return float(np.sum(self.gammas * self.masses))


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    w[1:] += 0.5 * np.diff(x)
    w[:-1] += 0.5 * np.diff(x)
    return w


def quadrature_posterior(gammas: np.ndarray, scenario: ForwardScenario,
                         obs: ObservationSet | None, prior: PriorSpec,
                         cache: ForwardCache | None = None) -> QuadraturePosterior:
    """Direct trapezoidal normalization of exp(-V) on a parameter grid;
    the deterministic oracle both samplers are compared against."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.size < 2 or np.any(np.diff(gammas) <= 0):
        raise InferenceError("gamma grid must be increasing with >= 2 nodes")
    vs = np.array([potential(g, scenario, obs, prior, cache) for g in gammas])
    finite = np.isfinite(vs)
    if not np.any(finite):
        raise InferenceError("posterior is degenerate: no finite potential on the grid")
    v_min = float(np.min(vs[finite]))
    w = np.where(finite, np.exp(-(vs - v_min)), 0.0) * _trapezoid_weights(gammas)
    total = float(np.sum(w))
    if total <= 0:
        raise InferenceError("posterior is degenerate: zero normalization")
    return QuadraturePosterior(gammas=gammas, masses=w / total, potentials=vs)


def tv_distance_masses(m1: np.ndarray, m2: np.ndarray) -> float:
    """Total-variation distance between two mass vectors on a shared grid."""
    return 0.5 * float(np.sum(np.abs(m1 - m2)))


def histogram_on_grid(samples: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Sample masses binned to the quadrature nodes (edges at midpoints)."""
    edges = np.concatenate(([gammas[0] - 0.5 * (gammas[1] - gammas[0])],
                            0.5 * (gammas[1:] + gammas[:-1]),
                            [gammas[-1] + 0.5 * (gammas[-1] - gammas[-2])]))
    counts, _ = np.histogram(samples, bins=edges)
    total = counts.sum()
    if total == 0:
        raise InferenceError("no samples inside the quadrature grid")
    return counts / total


def posterior_tv_convergence(gammas: np.ndarray, scenario: ForwardScenario,
                             obs: ObservationSet | None, prior: PriorSpec,
                             n_list: list[int]) -> list[tuple[int, float]]:
    """TV distance between the quadrature posteriors built with n and 2n
    marching steps, for each n; the step-count error transfers to the
    posterior at the product-formula rate, so these decay like n^(-1/2)."""
    if sorted(n_list) != list(n_list):
        raise InferenceError("n_list must be increasing")
    posts: dict[int, QuadraturePosterior] = {}
    for n in sorted(set(list(n_list) + [2 * n for n in n_list])):
        posts[n] = quadrature_posterior(gammas, scenario.with_steps(n), obs, prior,
                                        cache=ForwardCache())
    return [(n, tv_distance_masses(posts[n].masses, posts[2 * n].masses))
            for n in n_list]


def effective_sample_size(samples: np.ndarray, max_lag: int | None = None) -> float:
    """ESS via the initial positive sequence estimator on autocorrelations."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0:
        return float(n)
    max_lag = max_lag or min(n - 2, 2000)
    acf = np.array([float(x[:n - k] @ x[k:]) / (n * var) for k in range(max_lag + 1)])
    # Geyer: sum consecutive pairs while positive
    tau = 1.0
    for k in range(1, max_lag, 2):
        pair = acf[k] + (acf[k + 1] if k + 1 <= max_lag else 0.0)
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / tau)


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    allv = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, allv, side="right") / a.size
    cdf_b = np.searchsorted(b, allv, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def make_synthetic_observations(gamma_true: float, scenario: ForwardScenario,
                                windows, times, noise_rel: float, seed: int,
                                generator_step_factor: int = 4) -> ObservationSet:
    """Generate data at a finer time discretization than inference uses
    (default 4x steps) and add Gaussian noise sized relative to the clean
    signal range -- the standard guard against the inverse crime."""
    gen = scenario.with_steps(scenario.n_steps * generator_step_factor)
    times = tuple(float(t) for t in times)
    dummy_sigma = np.eye(len(times) * len(windows))
    clean_obs = ObservationSet(windows=tuple(windows), times=times,
                               y=np.zeros(len(times) * len(windows)),
                               sigma=dummy_sigma)
    clean = forward(gamma_true, gen, clean_obs)
    rng = np.random.default_rng(seed)
    spread = float(np.max(clean) - np.min(clean))
    noise_std = noise_rel * (spread if spread > 0 else max(abs(float(np.max(clean))), 1.0))
    y = clean + noise_std * rng.standard_normal(clean.size)
    sigma = noise_std**2 * np.eye(clean.size)
    return ObservationSet(windows=tuple(windows), times=times, y=y, sigma=sigma)
