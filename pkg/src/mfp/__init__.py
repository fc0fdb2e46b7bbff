"""Multi-agent trajectory forecasting with discrete latent futures.

Agents encode their own past with a shared GRU, read the joint scene state
through RBF slot attention, pick one of K latent modes, and decode a
bivariate-normal step distribution per future step.  Training uses exact
per-agent mode posteriors (EM), enabled by classmates forcing; prediction
runs interactive joint rollouts where every agent reacts to everyone
else's evolving predictions.
"""

from .data import (
    Scene,
    ScenarioConfig,
    WindowSpec,
    generate_synthetic,
    load_labels,
    load_trajectories,
    save_labels,
    save_trajectories,
    split_dataset,
    window_scenes,
)
from .decoder import (
    ConditionalRollout,
    JointSamples,
    RolloutConfig,
    RolloutResult,
    argmax_prior_modes,
    conditional_rollout,
    decode_step,
    enumerate_rollouts,
    prior_probs,
    rollout,
    sample_joint,
)
from .encoder import AgentFeature, EncoderConfig
from .geometry import PovFrame, estimate_heading, pov_inverse, pov_transform, wrap_angle
from .latent import elbo, em_loss, exact_posterior, marginal_loglik
from .model import Model

__version__ = "0.1.0"

__all__ = [
    "AgentFeature", "ConditionalRollout", "EncoderConfig", "JointSamples",
    "Model", "PovFrame", "RolloutConfig", "RolloutResult", "ScenarioConfig",
    "Scene", "WindowSpec", "argmax_prior_modes", "conditional_rollout",
    "decode_step", "elbo", "em_loss", "enumerate_rollouts", "estimate_heading",
    "exact_posterior", "generate_synthetic", "load_labels", "load_trajectories",
    "marginal_loglik", "pov_inverse", "pov_transform", "prior_probs",
    "rollout", "sample_joint", "save_labels", "save_trajectories",
    "split_dataset", "window_scenes", "wrap_angle",
]
