"""Encoder stack: state features, RBF slot attention, fused features, and
agreement between the plain-numpy reference path and the batched tape path."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import logsumexp

from mfp.encoder import (
    AgentFeature,
    EncoderConfig,
    dyn_encode,
    encode_history,
    fuse_features,
    key_value_net,
    prior_logits,
    rbf_weights,
    relative_feature,
    state_features,
)
from mfp.geometry import PovFrame, estimate_heading, pov_transform, wrap_angle

from conftest import make_scene, tiny_config, tiny_model


def random_params(cfg: EncoderConfig, modes: int = 3, seed: int = 42) -> dict:
    """Plain-array parameter dict shaped like the model's, nonzero biases so
    symmetry arguments do not accidentally pass."""
    rng = np.random.default_rng(seed)
    h, kh = cfg.enc_hidden, cfg.key_hidden
    cat = cfg.slots * cfg.dyn_out + cfg.dyn_out
    shapes = {
        "enc_gru.wx": (2, 3 * h), "enc_gru.wh_ru": (h, 2 * h),
        "enc_gru.wh_c": (h, h), "enc_gru.b": (3 * h,),
        "key_net.w1": (7, kh), "key_net.b1": (kh,),
        "key_net.w2": (kh, kh), "key_net.b2": (kh,),
        "key_head.w": (kh, cfg.key_dim), "key_head.b": (cfg.key_dim,),
        "val_head.w": (kh, cfg.dyn_out), "val_head.b": (cfg.dyn_out,),
        "slot_keys": (cfg.slots, cfg.key_dim),
        "slot_net.w1": (cat, cfg.slot_hidden), "slot_net.b1": (cfg.slot_hidden,),
        "slot_net.w2": (cfg.slot_hidden, cfg.dyn_out), "slot_net.b2": (cfg.dyn_out,),
        "prior.w": (cfg.fused_dim, modes), "prior.b": (modes,),
    }
    return {k: 0.3 * rng.standard_normal(s) for k, s in shapes.items()}


def random_features(rng, n: int) -> list:
    return [
        AgentFeature(position=rng.normal(size=2), velocity=rng.normal(size=2),
                     acceleration=rng.normal(size=2), heading=rng.uniform(-3, 3))
        for _ in range(n)
    ]


class TestConfig:
    def test_fused_dim_is_history_plus_dyn_plus_context(self):
        cfg = tiny_config()
        assert cfg.fused_dim == cfg.enc_hidden + cfg.dyn_out + cfg.context_dim

    def test_dict_round_trip(self):
        cfg = tiny_config()
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("field,value", [
        ("enc_hidden", 0), ("slots", 0), ("key_dim", -1), ("temperature", 0.0),
    ])
    def test_invalid_dimensions_rejected(self, field, value):
        with pytest.raises(ValueError, match=field):
            EncoderConfig(**{field: value})


class TestStateFeatures:
    def test_finite_difference_velocity_and_acceleration(self):
        track = np.array([[0.0, 0.0], [1.0, 0.5], [3.0, 2.0]])
        f = state_features(track, dt=0.5, heading=0.7)
        assert_allclose(f.position, [3.0, 2.0])
        assert_allclose(f.velocity, [(3.0 - 1.0) / 0.5, (2.0 - 0.5) / 0.5])
        assert_allclose(f.acceleration,
                        (track[2] - 2 * track[1] + track[0]) / 0.25)
        assert f.heading == 0.7

    def test_two_points_pad_acceleration_to_zero(self):
        f = state_features(np.array([[0.0, 0.0], [1.0, 1.0]]), dt=0.1, heading=0.0)
        assert_allclose(f.acceleration, [0.0, 0.0])

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            state_features(np.array([[0.0, 0.0]]), dt=0.1, heading=0.0)

    def test_vector_layout(self):
        """Feature vector is [pos, vel, acc, heading] in that order, 7 wide."""
        f = AgentFeature(np.array([1.0, 2.0]), np.array([3.0, 4.0]),
                         np.array([5.0, 6.0]), 0.25)
        assert_allclose(f.vector(), [1, 2, 3, 4, 5, 6, 0.25])


class TestRelativeFeature:
    def test_quarter_turn_frame(self):
        """In a frame heading +y, a world +x velocity points to the ego's
        right, i.e. local -y."""
        f = AgentFeature(np.array([0.0, 1.0]), np.array([2.0, 0.0]),
                         np.array([0.0, 3.0]), heading=np.pi / 2)
        frame = PovFrame(origin=np.zeros(2), heading=np.pi / 2)
        rel = relative_feature(f, frame)
        assert_allclose(rel.position, [1.0, 0.0], atol=1e-12)
        assert_allclose(rel.velocity, [0.0, -2.0], atol=1e-12)
        assert_allclose(rel.acceleration, [3.0, 0.0], atol=1e-12)
        assert_allclose(rel.heading, 0.0, atol=1e-12)

    def test_heading_wraps(self, rng):
        f = AgentFeature(np.zeros(2), np.zeros(2), np.zeros(2), heading=3.0)
        rel = relative_feature(f, PovFrame(np.zeros(2), heading=-3.0))
        assert_allclose(rel.heading, wrap_angle(6.0))
        assert -np.pi < rel.heading <= np.pi


class TestEncodeHistory:
    def test_zero_parameters_keep_zero_state(self):
        """With all weights and biases zero the candidate state is zero and
        the zero initial hidden state is a fixed point."""
        cfg = tiny_config()
        params = {k: np.zeros_like(v)
                  for k, v in random_params(cfg).items() if k.startswith("enc_gru")}
        h = encode_history(np.array([[1.0, -2.0], [0.5, 3.0]]), params, cfg)
        assert_allclose(h, np.zeros(cfg.enc_hidden))

    def test_identical_pasts_identical_encodings(self, rng):
        cfg = tiny_config()
        params = random_params(cfg)
        past = rng.normal(size=(5, 2))
        assert_allclose(encode_history(past, params, cfg),
                        encode_history(past.copy(), params, cfg))

    def test_input_shape_validated(self):
        with pytest.raises(ValueError):
            encode_history(np.zeros((4, 3)), random_params(tiny_config()),
                           tiny_config())


class TestRbfWeights:
    def test_matching_key_weight_one(self):
        k = np.array([[0.3, -1.2, 0.0, 2.0]])
        assert_allclose(rbf_weights(k, k.copy(), temperature=1.0), [[1.0]])

    def test_unit_distance_at_temperature_gives_inv_e(self):
        """A squared distance equal to the temperature scores exp(-1)."""
        k = np.zeros((1, 4))
        s = np.array([[np.sqrt(2.5), 0.0, 0.0, 0.0]])
        assert_allclose(rbf_weights(k, s, temperature=2.5), [[np.exp(-1.0)]],
                        rtol=1e-12)

    def test_matches_formula(self, rng):
        keys = rng.normal(size=(4, 3))
        slots = rng.normal(size=(5, 3))
        want = np.exp(-((keys[:, None] - slots[None]) ** 2).sum(-1) / 0.7)
        assert_allclose(rbf_weights(keys, slots, 0.7), want, rtol=1e-12)

    def test_weights_are_not_normalized(self, rng):
        w = rbf_weights(rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), 1.0)
        assert not np.allclose(w.sum(axis=1), 1.0)
        assert np.all(w > 0.0) and np.all(w <= 1.0)


class TestDynEncode:
    def test_single_agent_slots_are_empty(self, rng):
        """Alone in the scene, the ego is masked out of every slot, so the
        readout sees [zeros | own value vector]."""
        cfg = tiny_config()
        params = random_params(cfg)
        feats = random_features(rng, 1)
        got = dyn_encode(feats, 0, params, cfg)
        mat = feats[0].vector()
        mat[:6] *= cfg.feature_scale
        _, vals = key_value_net(mat, params)
        cat = np.concatenate([np.zeros(cfg.slots * cfg.dyn_out), vals[0]])
        hid = np.maximum(cat @ params["slot_net.w1"] + params["slot_net.b1"], 0.0)
        want = hid @ params["slot_net.w2"] + params["slot_net.b2"]
        assert_allclose(got, want, rtol=1e-12)

    def test_matches_weighted_sum_oracle(self, rng):
        """Each slot is the RBF-weighted sum of neighbor value vectors."""
        cfg = tiny_config()
        params = random_params(cfg)
        feats = random_features(rng, 4)
        got = dyn_encode(feats, 1, params, cfg)

        mat = np.stack([f.vector() for f in feats])
        mat[:, :6] *= cfg.feature_scale
        keys, vals = key_value_net(mat, params)
        slots = np.zeros((cfg.slots, cfg.dyn_out))
        for m in range(4):
            if m == 1:
                continue
            w = np.exp(-((keys[m] - params["slot_keys"]) ** 2).sum(-1)
                       / cfg.temperature)
            slots += w[:, None] * vals[m]
        cat = np.concatenate([slots.reshape(-1), vals[1]])
        hid = np.maximum(cat @ params["slot_net.w1"] + params["slot_net.b1"], 0.0)
        want = hid @ params["slot_net.w2"] + params["slot_net.b2"]
        assert_allclose(got, want, rtol=1e-10)

    def test_neighbor_permutation_invariant(self, rng):
        """Slot aggregation sums over neighbors, so shuffling the other
        agents (tracking the ego index) cannot change the encoding."""
        cfg = tiny_config()
        params = random_params(cfg)
        feats = random_features(rng, 5)
        base = dyn_encode(feats, 2, params, cfg)
        perm = [3, 0, 2, 4, 1]
        shuffled = [feats[i] for i in perm]
        assert_allclose(dyn_encode(shuffled, perm.index(2), params, cfg),
                        base, rtol=1e-12)

    def test_duplicated_neighbor_doubles_its_slot_mass(self, rng):
        """Unnormalized weights mean a duplicated neighbor contributes
        twice; the encoding must differ from the single-copy scene."""
        cfg = tiny_config()
        params = random_params(cfg)
        feats = random_features(rng, 2)
        single = dyn_encode(feats, 0, params, cfg)
        doubled = dyn_encode(feats + [feats[1]], 0, params, cfg)

        mat = np.stack([f.vector() for f in [feats[0], feats[1]]])
        mat[:, :6] *= cfg.feature_scale
        keys, vals = key_value_net(mat, params)
        w = np.exp(-((keys[1] - params["slot_keys"]) ** 2).sum(-1)
                   / cfg.temperature)
        slots = 2.0 * w[:, None] * vals[1]
        cat = np.concatenate([slots.reshape(-1), vals[0]])
        hid = np.maximum(cat @ params["slot_net.w1"] + params["slot_net.b1"], 0.0)
        want = hid @ params["slot_net.w2"] + params["slot_net.b2"]
        assert_allclose(doubled, want, rtol=1e-10)
        assert not np.allclose(doubled, single)

    def test_ego_index_validated(self, rng):
        with pytest.raises(ValueError):
            dyn_encode(random_features(rng, 2), 2,
                       random_params(tiny_config()), tiny_config())


class TestFuseAndPrior:
    def test_layout_history_dyn_context(self, rng):
        cfg = tiny_config()
        h = rng.normal(size=cfg.enc_hidden)
        dyn = rng.normal(size=cfg.dyn_out)
        f = fuse_features(h, dyn, cfg)
        assert f.shape == (cfg.fused_dim,)
        assert_allclose(f[:cfg.enc_hidden], h)
        assert_allclose(f[cfg.enc_hidden:cfg.enc_hidden + cfg.dyn_out], dyn)
        assert_allclose(f[-cfg.context_dim:], 0.0)

    def test_explicit_context_must_match_width(self, rng):
        cfg = tiny_config()
        with pytest.raises(ValueError):
            fuse_features(rng.normal(size=cfg.enc_hidden),
                          rng.normal(size=cfg.dyn_out), cfg,
                          context=np.zeros(cfg.context_dim + 1))

    def test_prior_logits_affine(self, rng):
        cfg = tiny_config()
        params = random_params(cfg, modes=4)
        f = rng.normal(size=cfg.fused_dim)
        assert_allclose(prior_logits(f, params),
                        f @ params["prior.w"] + params["prior.b"])


class TestModelAgreesWithReference:
    """The batched tape encoder must reproduce the single-scene numpy path
    agent by agent."""

    def test_full_encode_pipeline(self):
        model = tiny_model(modes=3, seed=9)
        scene = make_scene(n_agents=4, past_len=5, future_len=3, seed=3,
                           noise=0.05)
        ctx = model.scene_ctx(scene)
        enc = model.encode(ctx)
        vals = {k: v.v for k, v in model.params.items()}
        headings = [estimate_heading(scene.past[i]) for i in range(4)]
        for i in range(4):
            frame = PovFrame(scene.past[i, -1], headings[i])
            h_ref = encode_history(pov_transform(scene.past[i], frame),
                                   vals, model.cfg)
            assert_allclose(enc.h.v[i], h_ref, atol=1e-12)
            rel = [
                relative_feature(
                    state_features(ctx.tail[m], scene.dt, headings[m]), frame)
                for m in range(4)
            ]
            dyn_ref = dyn_encode(rel, i, vals, model.cfg)
            assert_allclose(enc.dyn.v[i], dyn_ref, atol=1e-10)
            f_ref = fuse_features(h_ref, dyn_ref, model.cfg)
            assert_allclose(enc.f.v[i], f_ref, atol=1e-10)
            logits = prior_logits(f_ref, vals)
            assert_allclose(enc.log_prior.v[i], logits - logsumexp(logits),
                            atol=1e-10)

    def test_identical_agents_get_identical_rows(self):
        """Two agents with the same relative geometry encode identically."""
        model = tiny_model(modes=2, seed=1)
        scene = make_scene(n_agents=2, past_len=4, future_len=2, seed=0)
        pos = scene.positions.copy()
        pos[1] = pos[0] + np.array([100.0, 0.0])  # same shape, far away
        twin = Scene_like(scene, pos)
        enc = model.encode(model.scene_ctx(twin))
        assert_allclose(enc.h.v[0], enc.h.v[1], atol=1e-12)

    def test_log_prior_rows_normalize(self):
        model = tiny_model(modes=3, seed=2)
        scene = make_scene(n_agents=3, past_len=4, future_len=2, seed=5)
        enc = model.encode(model.scene_ctx(scene))
        assert_allclose(np.exp(enc.log_prior.v).sum(axis=1), 1.0, rtol=1e-12)


def Scene_like(scene, positions):
    from mfp import Scene

    return Scene(scene_id=scene.scene_id, agent_ids=scene.agent_ids,
                 positions=positions, past_len=scene.past_len, dt=scene.dt)
