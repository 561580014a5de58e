"""Implicit resolvent marching for degenerate diffusion with pressure-limited
growth, explicit stability certificates, and Bayesian exponent recovery."""

__version__ = "0.1.0"

from .field import (Boundary, GridField, GridSpec, NormReport, bump_field,
                    constant_field, l1_distance, l1_norm, linf_norm, lr_norm,
                    norm_report, pos_neg_linf, tv_norm, zero_field)
from .model import (ConstitutiveModel, GrowthKind, GrowthLaw, PowerLaw,
                    Regularization, SupMetrics, sup_metrics)
from .resolvent import (NonConvergence, ResolventConfig, ResolventReport,
                        TauTooLarge, contraction_check, solve_resolvent,
                        tv_check, verify_resolvent_bounds)
from .evolution import (EvolutionConfig, Trajectory, barenblatt_profile,
                        evolve, fit_decay_exponent, l1_mass, mass,
                        pure_diffusion_model, self_convergence_gaps,
                        window_mass)
from .stability import (CertificationResult, GammaBoundInputs, IntervalSet,
                        StabilityBreakdown, bound_discrete, bound_general,
                        bound_powerlaw, certify, sup_pressure_closed,
                        sup_sqrtphi_closed, upsilon_check)
from .inference import (ForwardCache, ForwardScenario, ObservationSet,
                        PosteriorSummary, PriorSpec, StepUnderflow,
                        effective_sample_size, forward, grad_potential,
                        make_synthetic_observations, mala_chain, mh_chain,
                        posterior_tv_convergence, potential,
                        quadrature_posterior, tv_distance_masses)
