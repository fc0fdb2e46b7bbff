"""Scene encoding building blocks, in plain numpy.

These are the single-scene reference implementations of the encoder stack:
a shared GRU over each agent's own past, a key/value net over the joint
agent states, RBF matching against a fixed bank of learned slot keys (no
normalization of the weights), and the fused feature that conditions both
the mode prior and the decoder.

The training engine re-implements the same math batched on the gradient
tape; tests hold the two against each other.  Parameters may be passed as
the model's Var dict or as plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import PovFrame, pov_transform, wrap_angle

FEATURE_DIM = 7  # rel position (2), velocity (2), acceleration (2), heading (1)


@dataclass
class EncoderConfig:
    """Architecture dimensions.  Defaults follow the reference setup:
    64-d history GRU, 8 slots with 8-d keys, 32-d key-net hidden layers,
    32-d dynamic encoding, 32-d context placeholder (zeros), and a 128-d
    decoder GRU, so the fused feature is 64+32+32 = 128.  The RBF match
    temperature is sized so typical key-to-slot distances keep the
    (unnormalized) weights well away from zero, where the whole neighbor
    pathway would stop carrying gradient."""

    enc_hidden: int = 64
    slots: int = 8
    key_dim: int = 8
    temperature: float = 8.0
    key_hidden: int = 32
    dyn_out: int = 32
    slot_hidden: int = 64
    context_dim: int = 32
    dec_hidden: int = 128
    feature_scale: float = 0.1

    def __post_init__(self):
        for name in ("enc_hidden", "slots", "key_dim", "key_hidden", "dyn_out",
                     "slot_hidden", "context_dim", "dec_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    @property
    def fused_dim(self) -> int:
        return self.enc_hidden + self.dyn_out + self.context_dim

    def to_dict(self) -> dict:
        return {
            "enc_hidden": self.enc_hidden, "slots": self.slots,
            "key_dim": self.key_dim, "temperature": self.temperature,
            "key_hidden": self.key_hidden, "dyn_out": self.dyn_out,
            "slot_hidden": self.slot_hidden, "context_dim": self.context_dim,
            "dec_hidden": self.dec_hidden, "feature_scale": self.feature_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class AgentFeature:
    """Instantaneous state of one agent: position, velocity, acceleration,
    heading.  Frame depends on context; relative_feature moves world-frame
    states into an ego frame."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    heading: float

    def vector(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.position, dtype=np.float64),
            np.asarray(self.velocity, dtype=np.float64),
            np.asarray(self.acceleration, dtype=np.float64),
            [float(self.heading)],
        ])


def state_features(track: np.ndarray, dt: float, heading: float) -> AgentFeature:
    """State at the last point of a track by finite differencing.  With only
    two points the acceleration pads to zero."""
    track = np.asarray(track, dtype=np.float64)
    if track.ndim != 2 or track.shape[0] < 2 or track.shape[1] != 2:
        raise ValueError("track must be (P,2) with P >= 2")
    vel = (track[-1] - track[-2]) / dt
    if track.shape[0] >= 3:
        acc = (track[-1] - 2.0 * track[-2] + track[-3]) / (dt * dt)
    else:
        acc = np.zeros(2)
    return AgentFeature(track[-1].copy(), vel, acc, float(heading))


def relative_feature(feat: AgentFeature, frame: PovFrame) -> AgentFeature:
    """World-frame state re-expressed in the ego frame: position translated
    and rotated, velocity and acceleration rotated only, heading wrapped."""
    c, s = np.cos(frame.heading), np.sin(frame.heading)
    rot = np.array([[c, s], [-s, c]])
    return AgentFeature(
        position=pov_transform(np.asarray(feat.position)[None, :], frame)[0],
        velocity=rot @ np.asarray(feat.velocity, dtype=np.float64),
        acceleration=rot @ np.asarray(feat.acceleration, dtype=np.float64),
        heading=float(wrap_angle(feat.heading - frame.heading)),
    )


def param_values(p) -> np.ndarray:
    return np.asarray(getattr(p, "v", p), dtype=np.float64)


def gru_step_values(x: np.ndarray, h: np.ndarray, wx, wh_ru, wh_c, b):
    """Plain-array GRU step matching the differentiable one."""
    wx, wh_ru, wh_c, b = param_values(wx), param_values(wh_ru), param_values(wh_c), param_values(b)
    hid = wh_c.shape[0]
    xg = x @ wx + b
    hg = h @ wh_ru
    r = expit(xg[..., :hid] + hg[..., :hid])
    u = expit(xg[..., hid:2 * hid] + hg[..., hid:2 * hid])
    c = np.tanh(xg[..., 2 * hid:] + (r * h) @ wh_c)
    return (1.0 - u) * h + u * c


def encode_history(past_local: np.ndarray, params: dict,
                   cfg: EncoderConfig) -> np.ndarray:
    """Run the history GRU over one agent's past in its own frame.  Input
    coordinates are scaled by cfg.feature_scale before entering the GRU;
    the hidden state starts at zero."""
    past_local = np.asarray(past_local, dtype=np.float64)
    if past_local.ndim != 2 or past_local.shape[1] != 2:
        raise ValueError("past_local must be (P,2)")
    h = np.zeros(cfg.enc_hidden)
    for step in range(past_local.shape[0]):
        h = gru_step_values(
            past_local[step] * cfg.feature_scale, h,
            params["enc_gru.wx"], params["enc_gru.wh_ru"],
            params["enc_gru.wh_c"], params["enc_gru.b"],
        )
    return h


def rbf_weights(keys: np.ndarray, slot_keys, temperature: float) -> np.ndarray:
    """exp(-||k - s||^2 / T) for every key against every slot key.  The
    weights are used as-is, never normalized across agents or slots."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    sk = param_values(slot_keys)
    d2 = ((keys[:, None, :] - sk[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / temperature)


def key_value_net(features: np.ndarray, params: dict):
    """Shared two-layer ReLU trunk with linear key and value heads.
    features is (M,7); returns keys (M,key_dim) and values (M,dyn_out)."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.maximum(x @ param_values(params["key_net.w1"]) + param_values(params["key_net.b1"]), 0.0)
    t = np.maximum(t @ param_values(params["key_net.w2"]) + param_values(params["key_net.b2"]), 0.0)
    keys = t @ param_values(params["key_head.w"]) + param_values(params["key_head.b"])
    vals = t @ param_values(params["val_head.w"]) + param_values(params["val_head.b"])
    return keys, vals


def dyn_encode(features_rel: list, ego_index: int, params: dict,
               cfg: EncoderConfig) -> np.ndarray:
    """Dynamic interaction encoding for one ego agent.

    features_rel lists every agent's AgentFeature in the ego frame, ordered
    by agent id (ego included at ego_index).  Position, velocity, and
    acceleration are scaled by cfg.feature_scale; heading enters raw.  Each
    slot aggregates value vectors weighted by RBF key matches, with the ego
    masked out of the slots; the ego's own value vector is appended and the
    concatenation passes through the two-layer readout net.
    """
    n = len(features_rel)
    if not 0 <= ego_index < n:
        raise ValueError("ego_index out of range")
    mat = np.stack([f.vector() for f in features_rel])
    mat[:, :6] *= cfg.feature_scale
    keys, vals = key_value_net(mat, params)
    w = rbf_weights(keys, params["slot_keys"], cfg.temperature)
    w[ego_index, :] = 0.0
    slots = (w.T @ vals).reshape(-1)  # (slots*dyn_out,)
    cat = np.concatenate([slots, vals[ego_index]])
    hid = np.maximum(cat @ param_values(params["slot_net.w1"]) + param_values(params["slot_net.b1"]), 0.0)
    return hid @ param_values(params["slot_net.w2"]) + param_values(params["slot_net.b2"])


def fuse_features(h: np.ndarray, dyn: np.ndarray, cfg: EncoderConfig,
                  context: np.ndarray | None = None) -> np.ndarray:
    """Concatenate history encoding, dynamic encoding, and scene context.
    No context source exists yet, so the context block defaults to zeros of
    the configured width."""
    if context is None:
        context = np.zeros(cfg.context_dim)
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (cfg.context_dim,):
        raise ValueError(f"context must be ({cfg.context_dim},)")
    return np.concatenate([np.asarray(h), np.asarray(dyn), context])


def prior_logits(fused: np.ndarray, params: dict) -> np.ndarray:
    """Unnormalized mode-prior logits from the fused feature."""
    return np.asarray(fused) @ param_values(params["prior.w"]) + param_values(params["prior.b"])
