"""Dataclass configuration for the filter, policy, simulator, and training."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class FilterConfig:
    num_particles: int = 20
    ess_threshold_frac: float = 0.5      # resample when ESS < frac * N
    weight_floor: float = 1e-9           # normalization guard
    dp_alpha: float = 1.0                # Dirichlet-process concentration
    dp_base: float = 0.05                # base likelihood for a NEW grounding
    label_accuracy: float = 0.9          # p(observed label | true type)
    validity_prior: float = 0.8          # p(hypothesized region is real)
    constraint_resample_nats: float = 1.0   # log-lik shift that forces a resample
    revisit_radius_m: float = 2.0        # proximity match to visited extents
    full_convergence: bool = False       # iterate Gauss-Newton to a fixed point
    gn_max_iters: int = 50
    gn_tol: float = 1e-9
    odom_sigma_xy: float = 0.05          # per-step translational noise, meters
    odom_sigma_theta: float = 0.02       # per-step rotational noise, radians


@dataclass
class PolicyConfig:
    moments_k: int = 2                   # number of belief moments in the embedding
    reg_lambda: float = 1e-3
    alpha0: float = 0.5
    decay_gamma: float = 0.5
    dagger_iterations: int = 10
    epochs_per_iteration: int = 3
    rollout_cap_factor: int = 3          # training rollouts stop after
                                         # factor * shortest-path steps + 20


@dataclass
class GroundingTrainConfig:
    l2: float = 0.1
    learning_rate: float = 0.5
    epochs: int = 150


@dataclass
class SimConfig:
    step_m: float = 0.5                  # one motion quantum = one filter step
    speed_mps: float = 0.5
    label_noise: float = 0.1             # chance a region-type observation is wrong
    sense_radius: float = 3.0


@dataclass
class RunConfig:
    """End-to-end scenario settings shared by run/eval/xval."""
    filter: FilterConfig = field(default_factory=FilterConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    step_cap_factor: int = 40            # abort after factor * shortest-path steps
    seed: int = 0
