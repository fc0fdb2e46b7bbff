"""Planar rigid frames and trajectory normalization.

Points are length-2 float arrays (x, y); tracks are (L, 2) arrays.  A PoV
frame places an agent at the origin with its heading along +x, so "forward"
is the positive x axis in every agent's own coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap radians into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


@dataclass(frozen=True)
class PovFrame:
    """Origin plus heading; heading is radians in (-pi, pi]."""

    origin: np.ndarray
    heading: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        if o.shape != (2,) or not np.all(np.isfinite(o)):
            raise ValueError("frame origin must be a finite (2,) point")
        if not np.isfinite(self.heading):
            raise ValueError("frame heading must be finite")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))


def estimate_heading(track: np.ndarray) -> float:
    """Heading at the end of a track.

    Uses the displacement over up to the 3 trailing steps (smooths
    observation noise); if that displacement is zero, falls back to the most
    recent nonzero single-step displacement; 0.0 if every displacement is
    zero.
    """
    track = np.asarray(track, dtype=np.float64)
    n = track.shape[0]
    if n < 2:
        return 0.0
    w = min(3, n - 1)
    d = track[-1] - track[-1 - w]
    if d[0] != 0.0 or d[1] != 0.0:
        return float(np.arctan2(d[1], d[0]))
    for i in range(n - 1, 0, -1):
        d = track[i] - track[i - 1]
        if d[0] != 0.0 or d[1] != 0.0:
            return float(np.arctan2(d[1], d[0]))
    return 0.0


def pov_transform(points: np.ndarray, frame: PovFrame) -> np.ndarray:
    """World points into the frame: translate by -origin, rotate by -heading."""
    p = np.asarray(points, dtype=np.float64) - frame.origin
    c, s = np.cos(frame.heading), np.sin(frame.heading)
    x, y = p[..., 0], p[..., 1]
    return np.stack([c * x + s * y, c * y - s * x], axis=-1)


def pov_inverse(points: np.ndarray, frame: PovFrame) -> np.ndarray:
    """Frame points back to world; exact inverse of pov_transform."""
    p = np.asarray(points, dtype=np.float64)
    c, s = np.cos(frame.heading), np.sin(frame.heading)
    x, y = p[..., 0], p[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1) + frame.origin


def scene_frames(scene) -> list[PovFrame]:
    """Each agent's frame at time t: origin at its last observed position,
    heading estimated from its past."""
    past = scene.positions[:, : scene.past_len]
    return [
        PovFrame(past[n, -1].copy(), estimate_heading(past[n]))
        for n in range(past.shape[0])
    ]


@dataclass
class NormalizedScene:
    """Per-agent local view of a scene.

    past_local[n] has agent n at (0,0) at time t with heading along +x.
    future_local[n] is the future in the same frame, minus the dataset-mean
    future ramp when one is supplied (residual targets).
    """

    past_local: np.ndarray
    future_local: np.ndarray
    frames: list[PovFrame]
    mean_future: np.ndarray | None


def normalize_scene(scene, mean_future: np.ndarray | None = None) -> NormalizedScene:
    frames = scene_frames(scene)
    n_agents = scene.positions.shape[0]
    past = scene.positions[:, : scene.past_len]
    future = scene.positions[:, scene.past_len :]
    past_local = np.stack([pov_transform(past[n], frames[n]) for n in range(n_agents)])
    future_local = np.stack(
        [pov_transform(future[n], frames[n]) for n in range(n_agents)]
    )
    if mean_future is not None:
        mean_future = np.asarray(mean_future, dtype=np.float64)
        if mean_future.shape != (future.shape[1], 2):
            raise ValueError(
                f"mean_future shape {mean_future.shape} does not match "
                f"future length {future.shape[1]}"
            )
        future_local = future_local - mean_future
    return NormalizedScene(past_local, future_local, frames, mean_future)


def denormalize_future(future_local: np.ndarray, frames, mean_future=None) -> np.ndarray:
    """Inverse of normalize_scene for the future channels."""
    future_local = np.asarray(future_local, dtype=np.float64)
    if mean_future is not None:
        future_local = future_local + np.asarray(mean_future, dtype=np.float64)
    return np.stack(
        [pov_inverse(future_local[n], frames[n]) for n in range(len(frames))]
    )


def compute_mean_future(scenes) -> np.ndarray:
    """Dataset-mean future trajectory in local frames, a (T,2) constant
    computed once over the training split.  Straight constant-speed tracks
    make it a linear ramp along +x."""
    if not scenes:
        raise ValueError("need at least one scene")
    total = None
    count = 0
    for scene in scenes:
        norm = normalize_scene(scene)
        s = norm.future_local.sum(axis=0)
        total = s if total is None else total + s
        count += norm.future_local.shape[0]
    return total / count
