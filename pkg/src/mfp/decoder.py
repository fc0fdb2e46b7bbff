"""Rollout front end.

decode_step is the single-agent reference step (plain numpy).  The rollout
functions build engine plans:

- rollout: one mode per agent, with interactive forcing (all agents feed
  back their own predictions), classmates forcing (each decoded agent sees
  ground truth for everyone else), or teacher forcing (all inputs ground
  truth, nothing feeds back).
- sample_joint: S joint futures; each sample draws one mode per agent from
  the prior with its own seed stream, so sample s is identical no matter
  how many samples follow it.  Samples sharing a joint mode assignment
  share one deterministic rollout, so duplicates cost nothing.
- conditional_rollout: pin one agent to a hypothetical future and roll the
  rest out interactively around it, one group per mode assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .encoder import EncoderConfig, gru_step_values, param_values
from .model import FIXED, GT, PRED, Model, Plan


def decode_step(e: np.ndarray, z_onehot: np.ndarray, f: np.ndarray,
                h: np.ndarray, params: dict, cfg: EncoderConfig):
    """One decoder step for one agent: input [dynamic encoding | mode
    one-hot | fused feature] -> GRU -> 5-way head, constrained to a
    bivariate normal over the next displacement in the agent's local frame.
    Returns (BivariateNormalParams, next hidden state).  Mean offsets from
    the dataset-mean future are applied by the rollout layer, not here.
    """
    x = np.concatenate([np.asarray(e), np.asarray(z_onehot), np.asarray(f)])
    h_next = gru_step_values(
        x, np.asarray(h, dtype=np.float64),
        params["dec_gru.wx"], params["dec_gru.wh_ru"],
        params["dec_gru.wh_c"], params["dec_gru.b"],
    )
    raw = h_next @ param_values(params["head.w"]) + param_values(params["head.b"])
    return dc.constrain_output(raw), h_next


@dataclass
class RolloutConfig:
    horizon: int | None = None
    forcing: str = "interactive"
    feedback: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.forcing not in ("interactive", "classmates", "teacher"):
            raise ValueError(f"unknown forcing {self.forcing!r}")
        if self.feedback not in ("mean", "sample"):
            raise ValueError(f"unknown feedback {self.feedback!r}")


@dataclass
class RolloutResult:
    modes: np.ndarray        # (N,) mode index per agent
    means: np.ndarray        # (N,T,2) world-frame step means
    sigmas: np.ndarray       # (N,T,2) world-frame sigmas
    rhos: np.ndarray         # (N,T)
    realized: np.ndarray     # (N,T,2) what actually fed back
    log_prior: np.ndarray    # (N,K) values


def _mode_onehot(modes: np.ndarray, k: int) -> np.ndarray:
    z = np.zeros((modes.shape[0], k))
    z[np.arange(modes.shape[0]), modes] = 1.0
    return z


def rollout(model: Model, scene, modes, config: RolloutConfig | None = None
            ) -> RolloutResult:
    """Joint rollout with one fixed mode per agent."""
    config = config or RolloutConfig()
    n = scene.num_agents
    modes = np.asarray(modes, dtype=np.int64)
    if modes.shape != (n,):
        raise ValueError(f"modes must be ({n},)")
    if np.any(modes < 0) or np.any(modes >= model.modes):
        raise ValueError("mode index out of range")
    horizon = config.horizon if config.horizon is not None else scene.future_len
    rng = (np.random.default_rng(np.random.SeedSequence([config.seed, 4]))
           if config.feedback == "sample" else None)
    if config.forcing == "interactive":
        plan = Plan(
            groups=1, ego_agent=np.arange(n), ego_group=np.zeros(n, np.int64),
            z_onehot=_mode_onehot(modes, model.modes),
            sources=np.full((1, n), PRED, dtype=np.int8),
            horizon=horizon, want_loglik=False,
            feedback=config.feedback, rng=rng,
        )
    else:
        src = GT if config.forcing == "teacher" else PRED
        sources = np.full((n, n), GT, dtype=np.int8)
        sources[np.arange(n), np.arange(n)] = src
        plan = Plan(
            groups=n, ego_agent=np.arange(n), ego_group=np.arange(n),
            z_onehot=_mode_onehot(modes, model.modes), sources=sources,
            feed_back=(config.forcing == "classmates"),
            horizon=horizon, want_loglik=False,
            feedback=config.feedback, rng=rng,
        )
    out = model.run(scene, plan)
    return RolloutResult(
        modes=modes, means=out.means, sigmas=out.sigmas, rhos=out.rhos,
        realized=out.realized, log_prior=out.log_prior.v.copy(),
    )


def prior_probs(model: Model, scene) -> np.ndarray:
    """Mode prior per agent (N,K), computed without a tape."""
    return np.exp(model.encode(model.scene_ctx(scene)).log_prior.v)


def argmax_prior_modes(model: Model, scene) -> np.ndarray:
    return np.argmax(prior_probs(model, scene), axis=1)


@dataclass
class JointSamples:
    assignments: np.ndarray      # (S,N) sampled mode per agent
    unique: np.ndarray           # (U,N) distinct joint assignments
    sample_to_unique: np.ndarray  # (S,)
    counts: np.ndarray           # (U,) samples per distinct assignment
    means: np.ndarray            # (U,N,T,2)
    realized: np.ndarray         # (U,N,T,2)
    log_prior: np.ndarray        # (N,K)

    @property
    def num_samples(self) -> int:
        return self.assignments.shape[0]

    def trajectories(self) -> np.ndarray:
        """Per-sample realized joint futures (S,N,T,2)."""
        return self.realized[self.sample_to_unique]


def sample_joint(model: Model, scene, num_samples: int, seed: int = 0,
                 horizon: int | None = None) -> JointSamples:
    """Draw joint futures by sampling each agent's mode from the prior and
    rolling out interactively with mean feedback.  Sample s derives its
    randomness from SeedSequence([seed, 3, s]) alone."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    n = scene.num_agents
    horizon = horizon if horizon is not None else scene.future_len
    probs = prior_probs(model, scene)
    cdf = np.cumsum(probs, axis=1)
    assignments = np.zeros((num_samples, n), dtype=np.int64)
    for s in range(num_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, s]))
        u = rng.random(n)
        assignments[s] = np.minimum(
            (u[:, None] > cdf).sum(axis=1), model.modes - 1)
    unique, inverse = np.unique(assignments, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=unique.shape[0])
    res = enumerate_rollouts(model, scene, unique, horizon)
    return JointSamples(
        assignments=assignments, unique=unique,
        sample_to_unique=inverse.reshape(-1), counts=counts,
        means=res[0], realized=res[1], log_prior=np.log(probs),
    )


def enumerate_rollouts(model: Model, scene, assignments: np.ndarray,
                       horizon: int | None = None):
    """Deterministic interactive rollouts for each joint mode assignment
    (R,N).  Returns (means, realized), each (R,N,T,2)."""
    assignments = np.asarray(assignments, dtype=np.int64)
    r, n = assignments.shape
    horizon = horizon if horizon is not None else scene.future_len
    ego_agent = np.tile(np.arange(n), r)
    ego_group = np.repeat(np.arange(r), n)
    plan = Plan(
        groups=r, ego_agent=ego_agent, ego_group=ego_group,
        z_onehot=_mode_onehot(assignments.reshape(-1), model.modes),
        sources=np.full((r, n), PRED, dtype=np.int8),
        horizon=horizon, want_loglik=False,
    )
    out = model.run(scene, plan)
    return (out.means.reshape(r, n, horizon, 2),
            out.realized.reshape(r, n, horizon, 2))


@dataclass
class ConditionalRollout:
    agent: int
    assignments: np.ndarray  # (R,N); the pinned agent's entry is ignored
    means: np.ndarray        # (R,N,T,2); pinned agent's row is its track
    sigmas: np.ndarray       # (R,N,T,2); zero at the pinned row
    rhos: np.ndarray         # (R,N,T); zero at the pinned row
    realized: np.ndarray     # (R,N,T,2)
    log_prior: np.ndarray    # (N,K)


def conditional_rollout(model: Model, scene, agent: int,
                        fixed_track: np.ndarray,
                        assignments: np.ndarray | None = None
                        ) -> ConditionalRollout:
    """Roll the scene out with one agent pinned to a hypothetical future.

    fixed_track is (T,2) in world coordinates.  The other agents react to
    it through the joint state exactly as they would to a prediction.  One
    rollout group per row of assignments; by default the K shared-mode
    assignments (every agent in mode k)."""
    n = scene.num_agents
    if not 0 <= agent < n:
        raise ValueError("agent out of range")
    fixed_track = np.asarray(fixed_track, dtype=np.float64)
    if fixed_track.ndim != 2 or fixed_track.shape[1] != 2:
        raise ValueError("fixed_track must be (T,2)")
    horizon = fixed_track.shape[0]
    if assignments is None:
        assignments = np.tile(np.arange(model.modes)[:, None], (1, n))
    assignments = np.asarray(assignments, dtype=np.int64)
    r = assignments.shape[0]
    others = np.array([m for m in range(n) if m != agent], dtype=np.int64)
    ego_agent = np.tile(others, r)
    ego_group = np.repeat(np.arange(r), others.shape[0])
    sources = np.full((r, n), PRED, dtype=np.int8)
    sources[:, agent] = FIXED
    fixed = {(g, agent): fixed_track for g in range(r)}
    plan = Plan(
        groups=r, ego_agent=ego_agent, ego_group=ego_group,
        z_onehot=_mode_onehot(assignments[:, others].reshape(-1), model.modes),
        sources=sources, fixed_tracks=fixed,
        horizon=horizon, want_loglik=False,
    )
    out = model.run(scene, plan)
    means = np.zeros((r, n, horizon, 2))
    sigmas = np.zeros((r, n, horizon, 2))
    rhos = np.zeros((r, n, horizon))
    realized = np.zeros((r, n, horizon, 2))
    means[:, agent] = fixed_track
    realized[:, agent] = fixed_track
    b = others.shape[0]
    means[:, others] = out.means.reshape(r, b, horizon, 2)
    sigmas[:, others] = out.sigmas.reshape(r, b, horizon, 2)
    rhos[:, others] = out.rhos.reshape(r, b, horizon)
    realized[:, others] = out.realized.reshape(r, b, horizon, 2)
    return ConditionalRollout(
        agent=agent, assignments=assignments, means=means, sigmas=sigmas,
        rhos=rhos, realized=realized, log_prior=out.log_prior.v.copy(),
    )
