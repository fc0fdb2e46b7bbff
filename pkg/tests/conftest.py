"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from mfp import EncoderConfig, Model, Scene


def tiny_config() -> EncoderConfig:
    """Small dimensions so unit tests stay fast; same topology as the
    default configuration."""
    return EncoderConfig(enc_hidden=8, slots=3, key_dim=4, temperature=1.0,
                         key_hidden=6, dyn_out=5, slot_hidden=7,
                         context_dim=4, dec_hidden=12)


def make_scene(n_agents: int = 2, past_len: int = 4, future_len: int = 3,
               dt: float = 0.2, seed: int = 0, speed: float = 4.0,
               noise: float = 0.0, labels=None) -> Scene:
    """Straight constant-velocity tracks fanning out from spread origins."""
    rng = np.random.default_rng(seed)
    total = past_len + future_len
    t = np.arange(total) * dt
    positions = np.zeros((n_agents, total, 2))
    for n in range(n_agents):
        theta = 2.0 * np.pi * n / max(n_agents, 1) + 0.3
        origin = np.array([10.0 * np.cos(theta), 10.0 * np.sin(theta)])
        vel = speed * np.array([np.cos(theta + 1.1), np.sin(theta + 1.1)])
        positions[n] = origin + t[:, None] * vel
    if noise > 0:
        positions = positions + rng.normal(scale=noise, size=positions.shape)
    return Scene(scene_id=f"toy{seed}", agent_ids=np.arange(n_agents),
                 positions=positions, past_len=past_len, dt=dt, labels=labels)


def stationary_scene(n_agents: int = 2, past_len: int = 4,
                     future_len: int = 3, dt: float = 0.2) -> Scene:
    """Agents parked at distinct points for the whole window."""
    total = past_len + future_len
    positions = np.zeros((n_agents, total, 2))
    for n in range(n_agents):
        positions[n] = np.array([3.0 * n + 1.0, -2.0 * n])
    return Scene(scene_id="parked", agent_ids=np.arange(n_agents),
                 positions=positions, past_len=past_len, dt=dt)


def tiny_model(modes: int = 2, seed: int = 0, mean_future=None) -> Model:
    return Model(modes=modes, cfg=tiny_config(), seed=seed,
                 mean_future=mean_future)


def zero_params(model: Model) -> Model:
    for v in model.params.values():
        v.v[...] = 0.0
    return model


def fd_gradient(fn, arrays: dict, eps: float = 1e-6) -> dict:
    """Central finite differences of a scalar fn(arrays) per element."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + eps
            hi = fn(arrays)
            flat[i] = keep - eps
            lo = fn(arrays)
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


@pytest.fixture
def rng():
    return np.random.default_rng(42)
