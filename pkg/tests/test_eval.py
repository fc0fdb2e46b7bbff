"""Metric definitions: per-horizon NLL and RMSE, the constant-velocity
baseline, best-of-S displacement metrics, mode recovery, and the paired
hypothetical comparison."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import logsumexp

from mfp import Scene, rollout, sample_joint
from mfp.eval import (
    MIN_METRIC_KINDS,
    constant_velocity_tracks,
    cv_rmse_per_horizon,
    evaluate,
    hypo_compare,
    joint_sample_error,
    min_displacement,
    mode_recovery,
    nll_per_horizon,
    rmse_per_horizon,
)
from mfp.training import validation_nll

from conftest import make_scene, stationary_scene, tiny_model, zero_params


def labeled_scene(seed=0, label=1, n_agents=2):
    s = make_scene(n_agents=n_agents, past_len=4, future_len=4, seed=seed,
                   noise=0.05)
    labels = np.full(n_agents, -1, dtype=np.int64)
    labels[0] = label
    return Scene(scene_id=s.scene_id, agent_ids=s.agent_ids,
                 positions=s.positions, past_len=s.past_len, dt=s.dt,
                 labels=labels)


class TestNllPerHorizon:
    def test_zero_model_parked_scene_is_standard_normal_nll(self):
        """A zero model emits a unit isotropic Gaussian at the current
        origin; a parked agent's target displacement is zero, so the NLL is
        log(2 pi) at every horizon."""
        model = zero_params(tiny_model(modes=1))
        scene = stationary_scene(n_agents=2, past_len=4, future_len=5)
        got = nll_per_horizon(model, [scene], [1, 3, 5])
        for h in (1, 3, 5):
            assert_allclose(got[h], np.log(2.0 * np.pi), rtol=1e-12)

    def test_dead_mode_matches_single_mode(self):
        """A second mode with a -50 prior logit contributes nothing: the
        marginalized NLL collapses to the live mode's."""
        m1 = tiny_model(modes=1, seed=5)
        m2 = tiny_model(modes=2, seed=5)
        for name, p in m1.params.items():
            if p.v.shape == m2.params[name].v.shape:
                m2.params[name].v[...] = p.v
        # widen the decoder input: both mode rows copy the single-mode row,
        # so either one-hot drives the identical decoder
        lo = m2.cfg.dyn_out
        wx1 = m1.params["dec_gru.wx"].v
        m2.params["dec_gru.wx"].v[...] = np.vstack(
            [wx1[:lo], wx1[lo:lo + 1], wx1[lo:lo + 1], wx1[lo + 1:]])
        m2.params["prior.w"].v[...] = 0.0
        m2.params["prior.b"].v[...] = np.array([0.0, -50.0])
        scene = make_scene(n_agents=2, past_len=4, future_len=4, seed=3)
        a = nll_per_horizon(m1, [scene], [1, 4])
        b = nll_per_horizon(m2, [scene], [1, 4])
        for h in (1, 4):
            assert_allclose(b[h], a[h], atol=1e-9)

    def test_horizons_validated(self):
        model = tiny_model()
        scene = make_scene(future_len=3)
        with pytest.raises(ValueError):
            nll_per_horizon(model, [scene], [4])
        with pytest.raises(ValueError):
            nll_per_horizon(model, [scene], [0])
        with pytest.raises(ValueError):
            nll_per_horizon(model, [], [1])


class TestConstantVelocityBaseline:
    def test_exact_on_constant_velocity_tracks(self):
        """The baseline is zero-error on straight constant-speed motion."""
        scene = make_scene(n_agents=3, past_len=4, future_len=5, seed=2)
        pred = constant_velocity_tracks(scene)
        assert_allclose(pred, scene.future, atol=1e-9)
        rm = cv_rmse_per_horizon([scene], [1, 5])
        assert rm[1] < 1e-9 and rm[5] < 1e-9

    def test_velocity_smoothing_window(self):
        """The velocity estimate spans the trailing three steps (or fewer
        when the past is shorter), not just the last pair."""
        scene = make_scene(n_agents=1, past_len=5, future_len=2, seed=0)
        pos = scene.positions.copy()
        pos[0, 4] += 0.3  # jitter only the last past point
        jittered = Scene(scene_id="j", agent_ids=scene.agent_ids,
                         positions=pos, past_len=5, dt=scene.dt)
        pred = constant_velocity_tracks(jittered)
        vel = (pos[0, 4] - pos[0, 1]) / (3 * scene.dt)
        assert_allclose(pred[0, 0], pos[0, 4] + vel * scene.dt, atol=1e-12)

    def test_error_grows_on_turning_tracks(self):
        t = np.linspace(0.0, 2.4, 13)
        pos = np.stack([5.0 * np.cos(t), 5.0 * np.sin(t)], axis=1)[None]
        scene = Scene(scene_id="arc", agent_ids=np.array([0]),
                      positions=pos, past_len=5, dt=0.2)
        rm = cv_rmse_per_horizon([scene], [1, 4, 8])
        assert rm[1] < rm[4] < rm[8]
        assert rm[8] > 0.1


class TestRmsePerHorizon:
    def test_pools_squared_error_over_agents(self):
        model = tiny_model(modes=2, seed=1)
        scene = make_scene(n_agents=2, past_len=4, future_len=3, seed=4)
        from mfp.decoder import argmax_prior_modes

        modes = argmax_prior_modes(model, scene)
        res = rollout(model, scene, modes)
        got = rmse_per_horizon(model, [scene], [2])
        want = np.sqrt(((res.means[:, 1] - scene.future[:, 1]) ** 2)
                       .sum() / 2)
        assert_allclose(got[2], want, rtol=1e-12)

    def test_perfect_model_zero(self):
        """Teacher-style sanity: a zero model on parked agents predicts the
        parked point, so RMSE vanishes."""
        model = zero_params(tiny_model(modes=1))
        scene = stationary_scene(n_agents=2, past_len=4, future_len=4)
        rm = rmse_per_horizon(model, [scene], [1, 4])
        assert rm[1] < 1e-12 and rm[4] < 1e-12


class TestJointSampleError:
    def test_kinds_against_formulas(self, rng):
        trajs = rng.normal(size=(4, 2, 3, 2))
        gt = rng.normal(size=(2, 3, 2))
        d2 = ((trajs - gt[None]) ** 2).sum(axis=3)
        assert_allclose(joint_sample_error(trajs, gt, "ADE"),
                        np.sqrt(d2).mean(axis=(1, 2)))
        assert_allclose(joint_sample_error(trajs, gt, "FDE"),
                        np.sqrt(d2[:, :, -1]).mean(axis=1))
        assert_allclose(joint_sample_error(trajs, gt, "MSD"),
                        d2.mean(axis=(1, 2)))
        assert_allclose(joint_sample_error(trajs, gt, "RMSE"),
                        np.sqrt(d2.mean(axis=(1, 2))))

    def test_agent_restriction(self, rng):
        trajs = rng.normal(size=(3, 4, 2, 2))
        gt = rng.normal(size=(4, 2, 2))
        sub = np.array([1, 3])
        assert_allclose(joint_sample_error(trajs, gt, "ADE", agents=sub),
                        joint_sample_error(trajs[:, sub], gt[sub], "ADE"))

    def test_unknown_kind_rejected(self, rng):
        with pytest.raises(ValueError):
            joint_sample_error(np.zeros((1, 1, 1, 2)), np.zeros((1, 1, 2)),
                               "MAE")


class TestMinDisplacement:
    def test_single_sample_is_plain_error(self):
        model = tiny_model(modes=2, seed=2)
        scene = make_scene(n_agents=2, past_len=4, future_len=3, seed=1)
        got = min_displacement(model, [scene], 1, "ADE", seed=0)
        trajs = sample_joint(model, scene, 1, seed=0).trajectories()
        assert_allclose(got, joint_sample_error(trajs, scene.future,
                                                "ADE")[0], rtol=1e-12)

    def test_more_samples_never_hurt(self):
        """Best-of-S over a nested sample set: the S=12 minimum can only be
        as good or better than the S=5 minimum, for every metric kind."""
        model = tiny_model(modes=3, seed=6)
        scenes = [make_scene(n_agents=2, past_len=4, future_len=3, seed=s,
                             noise=0.05) for s in range(4)]
        for kind in MIN_METRIC_KINDS:
            v5 = min_displacement(model, scenes, 5, kind, seed=0)
            v12 = min_displacement(model, scenes, 12, kind, seed=0)
            assert v12 <= v5 + 1e-12

    def test_exhaustive_matches_brute_force(self):
        """Two agents, two modes: enumerating the four joint assignments by
        hand reproduces the exhaustive minimum exactly."""
        model = tiny_model(modes=2, seed=3)
        scene = make_scene(n_agents=2, past_len=4, future_len=3, seed=2)
        best = {k: np.inf for k in MIN_METRIC_KINDS}
        for a0 in range(2):
            for a1 in range(2):
                res = rollout(model, scene, np.array([a0, a1]))
                for k in MIN_METRIC_KINDS:
                    e = joint_sample_error(res.realized[None], scene.future,
                                           k)[0]
                    best[k] = min(best[k], e)
        for k in MIN_METRIC_KINDS:
            got = min_displacement(model, [scene], 0, k, exhaustive=True)
            assert_allclose(got, best[k], rtol=1e-8)

    def test_sample_count_validated(self):
        with pytest.raises(ValueError):
            min_displacement(tiny_model(), [make_scene()], 0, "ADE")


class TestModeRecovery:
    def test_single_mode_single_label_is_pure(self):
        model = tiny_model(modes=1, seed=0)
        scenes = [labeled_scene(seed=s, label=0) for s in range(3)]
        rec = mode_recovery(model, scenes)
        assert rec.purity == 1.0
        assert rec.confusion.shape == (1, 1)

    def test_unlabeled_scenes_skipped(self):
        model = tiny_model(modes=2, seed=1)
        plain = make_scene(seed=9)
        with pytest.raises(ValueError):
            mode_recovery(model, [plain])

    def test_purity_counts_best_matching(self):
        """With labels spread over two classes and a random model, purity
        is the best one-to-one assignment accuracy, at least the majority
        class share."""
        model = tiny_model(modes=2, seed=7)
        scenes = [labeled_scene(seed=s, label=s % 2) for s in range(8)]
        rec = mode_recovery(model, scenes)
        assert rec.confusion.sum() == 8
        assert 0.5 <= rec.purity <= 1.0
        # purity recomputed from the confusion matrix directly
        from scipy.optimize import linear_sum_assignment

        r, c = linear_sum_assignment(rec.confusion, maximize=True)
        assert_allclose(rec.purity, rec.confusion[r, c].sum() / 8)

    def test_only_labeled_agents_counted(self):
        model = tiny_model(modes=2, seed=2)
        scenes = [labeled_scene(seed=1, label=1, n_agents=3)]
        rec = mode_recovery(model, scenes)
        assert rec.confusion.sum() == 1  # two unlabeled agents ignored


class TestHypoCompare:
    def test_designated_agent_excluded_from_metric(self):
        """Pinning agent 0 to its exact ground truth zeroes its own error;
        the reported metrics must not move because only the others count."""
        model = tiny_model(modes=2, seed=4)
        scenes = [make_scene(n_agents=3, past_len=4, future_len=3, seed=s)
                  for s in range(2)]
        out = hypo_compare(model, scenes, 4, agent=0)
        assert out["scenes"] == 2
        assert set(out["standard"]) == {"ADE", "FDE"}
        assert out["standard"]["ADE"] >= 0.0

    def test_interaction_free_model_sees_no_difference(self):
        """If the slot readout is disconnected (its output weights zeroed),
        agents cannot react to each other, so conditioning on one agent's
        future cannot change the rest: both arms agree exactly."""
        model = tiny_model(modes=2, seed=5)
        model.params["slot_net.w2"].v[...] = 0.0
        model.params["slot_net.b2"].v[...] = 0.0
        scenes = [make_scene(n_agents=3, past_len=4, future_len=4, seed=s,
                             noise=0.05) for s in range(3)]
        out = hypo_compare(model, scenes, 5, agent=0)
        assert_allclose(out["hypothetical"]["ADE"], out["standard"]["ADE"],
                        atol=1e-9)
        assert_allclose(out["hypothetical"]["FDE"], out["standard"]["FDE"],
                        atol=1e-9)

    def test_single_agent_scenes_rejected(self):
        model = tiny_model(modes=2)
        with pytest.raises(ValueError):
            hypo_compare(model, [make_scene(n_agents=1)], 3)

    def test_unknown_kind_rejected(self):
        model = tiny_model(modes=2)
        with pytest.raises(ValueError):
            hypo_compare(model, [make_scene(n_agents=2)], 3,
                         kinds=("ADE", "XDE"))


class TestEvaluateReport:
    def test_report_is_complete_and_deterministic(self):
        model = tiny_model(modes=2, seed=8)
        scenes = [make_scene(n_agents=2, past_len=4, future_len=4, seed=s,
                             noise=0.05) for s in range(3)]
        rep1 = evaluate(model, scenes, [1, 4], sample_counts=(2, 3), seed=0)
        rep2 = evaluate(model, scenes, [1, 4], sample_counts=(2, 3), seed=0)
        assert rep1.lines() == rep2.lines()
        assert rep1.scene_count == 3
        assert set(rep1.nll) == {1, 4}
        assert set(k for k, _ in rep1.min_metrics) == set(MIN_METRIC_KINDS)
        assert_allclose(rep1.traj_nll, validation_nll(model, scenes))

    def test_csv_shape(self):
        model = tiny_model(modes=2, seed=8)
        scenes = [make_scene(n_agents=2, past_len=4, future_len=3, seed=1)]
        rep = evaluate(model, scenes, [1, 3], sample_counts=(2,), seed=0)
        csv = rep.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "metric,horizon_or_samples,value"
        # traj_nll + 3 metric families x 2 horizons + 4 min kinds + scenes
        assert len(lines) == 1 + 1 + 6 + 4 + 1
        assert all(len(ln.split(",")) == 3 for ln in lines[1:])
