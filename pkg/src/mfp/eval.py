"""Metric suite: per-horizon NLL and RMSE, best-of-S displacement metrics,
mode-recovery diagnostics, and paired hypothetical-rollout comparisons.

Conventions, fixed here because aggregation order changes the numbers:
RMSE at a horizon is the root of the mean squared error over every
agent-scene pair at that step.  Min-metrics are joint: one sample's error
pools all agents and steps of the scene, then the best sample is chosen
per scene and the chosen errors average over scenes.  All reductions run
in fixed order, so reports are deterministic given model, data, and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import latent
from .decoder import (argmax_prior_modes, conditional_rollout,
                      enumerate_rollouts, rollout, sample_joint, RolloutConfig)
from .model import Model

MIN_METRIC_KINDS = ("ADE", "FDE", "MSD", "RMSE")


def nll_per_horizon(model: Model, scenes, horizons) -> dict[int, float]:
    """Mean per-agent NLL of the single step at each horizon, teacher
    forced, with the mode marginalized exactly: the score at horizon h is
    -logsumexp_k(log prior + per-step loglik at step h).

    horizons are 1-based step counts into the future.
    """
    horizons = _check_horizons(horizons, scenes)
    totals = {h: 0.0 for h in horizons}
    agents = 0
    for scene in scenes:
        ml = model.mode_logliks(scene, forcing="teacher")
        lp = ml.log_prior.v
        agents += scene.num_agents
        for h in horizons:
            step_ll = -ml.nll_steps[:, :, h - 1]
            totals[h] -= latent.marginal_loglik(lp, step_ll).sum()
    return {h: totals[h] / agents for h in horizons}


def rmse_per_horizon(model: Model, scenes, horizons) -> dict[int, float]:
    """RMSE of the interactive mean rollout under each agent's
    highest-prior mode, per horizon, pooled over agent-scene pairs."""
    horizons = _check_horizons(horizons, scenes)
    sq = {h: 0.0 for h in horizons}
    count = 0
    for scene in scenes:
        modes = argmax_prior_modes(model, scene)
        res = rollout(model, scene, modes,
                      RolloutConfig(forcing="interactive"))
        err2 = ((res.means - scene.future) ** 2).sum(axis=2)  # (N,T)
        count += scene.num_agents
        for h in horizons:
            sq[h] += err2[:, h - 1].sum()
    return {h: float(np.sqrt(sq[h] / count)) for h in horizons}


def constant_velocity_tracks(scene, smooth_steps: int = 3) -> np.ndarray:
    """Constant-velocity baseline: velocity smoothed over the trailing
    smooth_steps of the past (fewer when the past is shorter), then
    extrapolated over the full future."""
    past = scene.past
    n = scene.num_agents
    w = min(smooth_steps, scene.past_len - 1)
    vel = (past[:, -1] - past[:, -1 - w]) / (w * scene.dt)
    steps = np.arange(1, scene.future_len + 1)[None, :, None] * scene.dt
    return past[:, -1][:, None, :] + vel[:, None, :] * steps


def cv_rmse_per_horizon(scenes, horizons) -> dict[int, float]:
    """RMSE of the constant-velocity baseline, same pooling as the model."""
    horizons = _check_horizons(horizons, scenes)
    sq = {h: 0.0 for h in horizons}
    count = 0
    for scene in scenes:
        pred = constant_velocity_tracks(scene)
        err2 = ((pred - scene.future) ** 2).sum(axis=2)
        count += scene.num_agents
        for h in horizons:
            sq[h] += err2[:, h - 1].sum()
    return {h: float(np.sqrt(sq[h] / count)) for h in horizons}


def _check_horizons(horizons, scenes):
    horizons = [int(h) for h in horizons]
    if not horizons:
        raise ValueError("need at least one horizon")
    if not scenes:
        raise ValueError("need at least one scene")
    shortest = min(s.future_len for s in scenes)
    for h in horizons:
        if not 1 <= h <= shortest:
            raise ValueError(f"horizon {h} outside 1..{shortest}")
    return horizons


# ---------------------------------------------------------------------------
# best-of-S displacement metrics

def joint_sample_error(trajs: np.ndarray, gt: np.ndarray, kind: str,
                       agents: np.ndarray | None = None) -> np.ndarray:
    """Per-sample joint error (S,) of sampled futures (S,N,T,2) against the
    ground truth (N,T,2).  agents optionally restricts the pooled set."""
    if kind not in MIN_METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}")
    if agents is not None:
        trajs = trajs[:, agents]
        gt = gt[agents]
    d2 = ((trajs - gt[None]) ** 2).sum(axis=3)  # (S,N,T)
    if kind == "ADE":
        return np.sqrt(d2).mean(axis=(1, 2))
    if kind == "FDE":
        return np.sqrt(d2[:, :, -1]).mean(axis=1)
    if kind == "MSD":
        return d2.mean(axis=(1, 2))
    return np.sqrt(d2.mean(axis=(1, 2)))  # RMSE


def min_displacement(model: Model, scenes, num_samples: int,
                     kind: str = "ADE", seed: int = 0,
                     exhaustive: bool = False) -> float:
    """Best-of-S metric: per scene, draw S joint samples (or enumerate all
    K^N mode assignments when exhaustive), take the sample minimizing the
    joint error, and average the minima over scenes."""
    if kind not in MIN_METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}")
    if num_samples < 1 and not exhaustive:
        raise ValueError("num_samples must be >= 1")
    vals = []
    for scene in scenes:
        if exhaustive:
            grids = np.meshgrid(*([np.arange(model.modes)] * scene.num_agents),
                                indexing="ij")
            assignments = np.stack([g.reshape(-1) for g in grids], axis=1)
            _, trajs = enumerate_rollouts(model, scene, assignments)
        else:
            trajs = sample_joint(model, scene, num_samples,
                                 seed=seed).trajectories()
        vals.append(joint_sample_error(trajs, scene.future, kind).min())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# mode recovery

@dataclass
class ModeRecovery:
    confusion: np.ndarray     # (modes, labels) counts
    purity: float
    mode_of: np.ndarray       # argmax-posterior mode per labeled agent
    label_of: np.ndarray


def mode_recovery(model: Model, scenes) -> ModeRecovery:
    """Compare argmax-posterior modes against generator labels on every
    labeled agent (label >= 0).  Purity is the accuracy under the best
    one-to-one mode-to-label matching (Hungarian on the confusion matrix).
    """
    modes_found, labels_found = [], []
    for scene in scenes:
        if scene.labels is None or not np.any(scene.labels >= 0):
            continue
        ml = model.mode_logliks(scene)
        post = latent.exact_posterior(ml.log_prior.v, ml.loglik.v)
        pick = np.argmax(post, axis=1)
        for n in range(scene.num_agents):
            if scene.labels[n] >= 0:
                modes_found.append(pick[n])
                labels_found.append(scene.labels[n])
    if not modes_found:
        raise ValueError("no labeled agents in the given scenes")
    mode_of = np.asarray(modes_found, dtype=np.int64)
    label_of = np.asarray(labels_found, dtype=np.int64)
    n_labels = int(label_of.max()) + 1
    confusion = np.zeros((model.modes, n_labels), dtype=np.int64)
    np.add.at(confusion, (mode_of, label_of), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    purity = float(confusion[rows, cols].sum() / mode_of.size)
    return ModeRecovery(confusion=confusion, purity=purity,
                        mode_of=mode_of, label_of=label_of)


# ---------------------------------------------------------------------------
# hypothetical rollouts

def hypo_compare(model: Model, scenes, num_samples: int, agent: int = 0,
                 kinds=("ADE", "FDE"), seed: int = 0) -> dict:
    """Paired comparison of unconditional prediction against prediction
    conditioned on one agent's ground-truth future.

    Both arms draw the same per-sample mode assignments and measure only
    the non-designated agents, so any difference comes from the other
    agents reacting to the pinned track during the rollout.  Returns
    {"standard": {kind: value}, "hypothetical": {kind: value},
    "scenes": count}.
    """
    for kind in kinds:
        if kind not in MIN_METRIC_KINDS:
            raise ValueError(f"unknown metric kind {kind!r}")
    std_vals = {k: [] for k in kinds}
    hyp_vals = {k: [] for k in kinds}
    used = 0
    for scene in scenes:
        if scene.num_agents < 2:
            continue
        used += 1
        others = np.array(
            [m for m in range(scene.num_agents) if m != agent])
        samples = sample_joint(model, scene, num_samples, seed=seed)
        std_trajs = samples.trajectories()
        cond = conditional_rollout(model, scene, agent, scene.future[agent],
                                   assignments=samples.unique)
        hyp_trajs = cond.realized[samples.sample_to_unique]
        for kind in kinds:
            std_vals[kind].append(joint_sample_error(
                std_trajs, scene.future, kind, agents=others).min())
            hyp_vals[kind].append(joint_sample_error(
                hyp_trajs, scene.future, kind, agents=others).min())
    if used == 0:
        raise ValueError("no scenes with at least two agents")
    return {
        "standard": {k: float(np.mean(std_vals[k])) for k in kinds},
        "hypothetical": {k: float(np.mean(hyp_vals[k])) for k in kinds},
        "scenes": used,
    }


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class MetricReport:
    horizons: list
    traj_nll: float = float("nan")
    nll: dict = field(default_factory=dict)
    rmse: dict = field(default_factory=dict)
    cv_rmse: dict = field(default_factory=dict)
    min_metrics: dict = field(default_factory=dict)  # (kind, S) -> value
    sample_counts: tuple = (5, 6, 12)
    scene_count: int = 0

    def lines(self) -> list[str]:
        out = [f"traj_nll - {self.traj_nll:.6f}"]
        for h in self.horizons:
            out.append(f"nll {h} {self.nll[h]:.6f}")
        for h in self.horizons:
            out.append(f"rmse {h} {self.rmse[h]:.6f}")
        for h in self.horizons:
            out.append(f"cv_rmse {h} {self.cv_rmse[h]:.6f}")
        for (kind, s), v in self.min_metrics.items():
            out.append(f"min{kind.lower()} {s} {v:.6f}")
        out.append(f"scenes - {self.scene_count}")
        return out

    def to_csv(self) -> str:
        rows = ["metric,horizon_or_samples,value"]
        for line in self.lines():
            rows.append(",".join(line.split()))
        return "\n".join(rows) + "\n"


def evaluate(model: Model, scenes, horizons,
             sample_counts=(5, 6, 12), seed: int = 0) -> MetricReport:
    """Full metric sweep used by the evaluation command."""
    from .training import validation_nll

    report = MetricReport(horizons=[int(h) for h in horizons],
                          sample_counts=tuple(sample_counts),
                          scene_count=len(scenes))
    report.traj_nll = validation_nll(model, scenes)
    report.nll = nll_per_horizon(model, scenes, horizons)
    report.rmse = rmse_per_horizon(model, scenes, horizons)
    report.cv_rmse = cv_rmse_per_horizon(scenes, horizons)
    for s in report.sample_counts:
        # one sampling sweep per S, shared by every metric kind
        per_scene = [sample_joint(model, scene, s, seed=seed).trajectories()
                     for scene in scenes]
        for kind in MIN_METRIC_KINDS:
            report.min_metrics[(kind, s)] = float(np.mean(
                [joint_sample_error(t, scene.future, kind).min()
                 for t, scene in zip(per_scene, scenes)]))
    return report
