"""Scenes, the synthetic intersection scenario, trajectory CSV I/O,
windowing, and dataset splits.

The built-in scenario is a three-vehicle intersection sampled at 20 Hz for
5 seconds (101 samples including t=0).  Vehicle A approaches from the south
and either speeds up and turns right across the near crossing lane, slows
and yields before turning, or stops.  Vehicle B crosses eastbound on the
lane A merges into; it brakes when A cuts in with a tight gap and eases off
behind an A that creeps slowly toward the junction mouth.  Vehicle C
crosses westbound on the far lane and independently goes straight or turns
right; it never conflicts with A or B.  Initial positions get sigma = 0.2 m
noise along the path, recorded positions get sigma = 0.05 m observation
noise per sample.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# scene container

@dataclass
class Scene:
    """Time-aligned cluster of agent tracks with a past/future split.

    positions: (N, L, 2) world-frame samples at uniform dt; the first
    past_len samples are history (time t is index past_len - 1), the rest
    are the prediction targets.  Agents are kept sorted by id so iteration
    order (and every sum over agents) is reproducible.
    """

    scene_id: str
    agent_ids: np.ndarray
    positions: np.ndarray
    past_len: int
    dt: float
    labels: np.ndarray | None = None
    source_id: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.agent_ids = np.asarray(self.agent_ids, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must be (N, L, 2)")
        n, length, _ = self.positions.shape
        if self.agent_ids.shape != (n,):
            raise ValueError("agent_ids must match the agent axis")
        if not 2 <= self.past_len <= length:
            raise ValueError("past_len must be >= 2 and <= track length")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must match the agent axis")
        if self.source_id is None:
            self.source_id = self.scene_id
        order = np.argsort(self.agent_ids, kind="stable")
        if not np.array_equal(order, np.arange(n)):
            self.agent_ids = self.agent_ids[order]
            self.positions = self.positions[order]
            if self.labels is not None:
                self.labels = self.labels[order]

    @property
    def num_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def future_len(self) -> int:
        return self.positions.shape[1] - self.past_len

    @property
    def past(self) -> np.ndarray:
        return self.positions[:, : self.past_len]

    @property
    def future(self) -> np.ndarray:
        return self.positions[:, self.past_len :]


# ---------------------------------------------------------------------------
# piecewise line/arc paths

class _Path:
    """Arc-length parameterized path made of line and circular-arc segments."""

    def __init__(self):
        self._segs = []
        self.length = 0.0

    def line(self, p0, heading, length):
        self._segs.append(("line", np.asarray(p0, float), heading, length))
        self.length += length
        return self

    def arc(self, p0, heading, radius, sweep):
        # sweep > 0 turns left (ccw), sweep < 0 turns right
        side = 1.0 if sweep > 0 else -1.0
        center = np.asarray(p0, float) + radius * np.array(
            [-side * math.sin(heading), side * math.cos(heading)]
        )
        beta0 = math.atan2(p0[1] - center[1], p0[0] - center[0])
        self._segs.append(("arc", center, radius, beta0, sweep, heading))
        self.length += radius * abs(sweep)
        return self

    def end_pose(self):
        kind, *rest = self._segs[-1]
        if kind == "line":
            p0, heading, length = rest
            p = p0 + length * np.array([math.cos(heading), math.sin(heading)])
            return p, heading
        center, radius, beta0, sweep, heading = rest
        beta = beta0 + sweep
        p = center + radius * np.array([math.cos(beta), math.sin(beta)])
        return p, heading + sweep

    def pose(self, s: float):
        """(x, y, heading) at arc length s; clamps beyond the ends."""
        s = min(max(s, 0.0), self.length)
        for seg in self._segs:
            kind = seg[0]
            seg_len = seg[3] if kind == "line" else seg[2] * abs(seg[4])
            if s <= seg_len or seg is self._segs[-1]:
                if kind == "line":
                    _, p0, heading, _ = seg
                    p = p0 + s * np.array([math.cos(heading), math.sin(heading)])
                    return p[0], p[1], heading
                _, center, radius, beta0, sweep, heading = seg
                frac = s / (radius * abs(sweep))
                beta = beta0 + sweep * frac
                x = center[0] + radius * math.cos(beta)
                y = center[1] + radius * math.sin(beta)
                return x, y, heading + sweep * frac
            s -= seg_len
        raise RuntimeError("empty path")


def _chain(path: _Path, kind: str, **kw) -> _Path:
    p, h = path.end_pose()
    if kind == "line":
        return path.line(p, h, kw["length"])
    return path.arc(p, h, kw["radius"], kw["sweep"])


_LANE = 1.75
_TURN_RADIUS = 3.5
_ARC_LEN = _TURN_RADIUS * math.pi / 2.0

# vehicle A: northbound approach, right turn into the eastbound lane.  The
# approach is short enough that the slow-yield mode reaches the arc inside
# the prediction window, so yield and stop differ laterally, not just in
# how far along the same line they get
_PATH_A = _Path().line((_LANE, -20.25), math.pi / 2.0, 15.0)
_chain(_PATH_A, "arc", radius=_TURN_RADIUS, sweep=-math.pi / 2.0)
_chain(_PATH_A, "line", length=35.0)
A_ENTRY = 15.0                        # arc entry arc-length
A_CONFLICT = 15.0 + _ARC_LEN          # merge point at arc exit

# vehicle B: eastbound on the lane A merges into
_PATH_B = _Path().line((-22.0, -_LANE), 0.0, 67.0)
B_CONFLICT = 27.25                    # x = 5.25, the merge point

# vehicle C: westbound on the far lane; straight or right turn to northbound
_PATH_C_STRAIGHT = _Path().line((20.0, _LANE), math.pi, 55.0)
_PATH_C_RIGHT = _Path().line((20.0, _LANE), math.pi, 18.25)
_chain(_PATH_C_RIGHT, "arc", radius=_TURN_RADIUS, sweep=-math.pi / 2.0)
_chain(_PATH_C_RIGHT, "line", length=25.0)
C_ENTRY = 18.25

MODE_FAST, MODE_YIELD, MODE_STOP = 0, 1, 2

# all of vehicle A's modes drive the same approach profile until this
# arc-length, which the 1 s observed history cannot see past; behaviors
# separate only in the prediction window
A_COMMON = 7.0
# the yield mode cruises to here before easing off, so early prediction
# steps contrast stop against the rest and later steps contrast yield
# against fast
YIELD_BRAKE = 12.0
# the yield crawl alternates between a slow and a brisk plateau at random
# switch times: a hesitant merger working the pedals.  A discrete mode
# label cannot carry the switching schedule, and the crawl only starts
# after the observation window, so the paced car behind is predictable
# only by tracking the yielding car's actual motion
CRAWL_LO = (2.3, 2.9)
CRAWL_HI = (5.1, 5.7)
CRAWL_FIRST_SWITCH = 1.2
CRAWL_HOLD = (0.8, 1.4)


@dataclass
class ScenarioConfig:
    num_scenes: int = 100
    seed: int = 0
    rate: float = 20.0
    duration: float = 5.0
    mode_weights_a: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    mode_weights_c: tuple = (0.5, 0.5)
    init_noise: float = 0.2
    obs_noise: float = 0.05
    subsample: int = 4
    past_steps: int = 6
    future_steps: int = 19


@dataclass
class RawScene:
    scene_id: str
    agent_ids: np.ndarray
    tracks: np.ndarray          # (3, samples, 2) at the generation rate
    labels: np.ndarray          # generator mode for A, -1 elsewhere
    meta: dict


def _accel_toward(v: float, v_target: float, dt: float,
                  a_min: float = -4.5, a_max: float = 2.5,
                  gain: float = 1.8) -> float:
    a = gain * (v_target - v)
    a = min(max(a, a_min), a_max)
    return max(0.0, v + a * dt)


def _simulate_scene(rng: np.random.Generator, cfg: ScenarioConfig):
    samples = int(round(cfg.rate * cfg.duration)) + 1
    dt = 1.0 / cfg.rate
    a_mode = int(rng.choice(3, p=np.asarray(cfg.mode_weights_a)))
    c_mode = int(rng.choice(2, p=np.asarray(cfg.mode_weights_c)))
    path_c = _PATH_C_STRAIGHT if c_mode == 0 else _PATH_C_RIGHT

    s_a = s_b = s_c = 0.0
    v_a = 7.0 + rng.normal(0.0, 0.3)
    v_b = float(rng.uniform(7.0, 11.0))
    v_c = 8.0 + rng.normal(0.0, 0.4)
    free_b = v_b
    offsets = rng.normal(0.0, cfg.init_noise, size=(3, 1, 2))

    # per-scene draws inside each behavior: how aggressively a fast A
    # commits, where a yielding A eases off and how its crawl plateaus are
    # pitched and timed, and where a stopping A starts braking.  Within-mode
    # spread keeps any single trajectory from standing in for its whole
    # behavior class
    fast_speed = float(rng.uniform(9.5, 12.5))
    yield_brake_s = float(rng.uniform(YIELD_BRAKE - 1.5, YIELD_BRAKE + 1.5))
    stop_brake_s = float(rng.uniform(7.5, 10.0))
    crawl_lo = float(rng.uniform(*CRAWL_LO))
    crawl_hi = float(rng.uniform(*CRAWL_HI))
    first_switch = float(rng.uniform(0.0, CRAWL_FIRST_SWITCH))
    holds = rng.uniform(*CRAWL_HOLD, size=8)
    switches = first_switch + np.concatenate([[0.0], np.cumsum(holds)])
    start_hi = bool(rng.integers(2))

    def crawl_level(t: float) -> float:
        # plateau the crawl sits on at time t since crawl onset; the level
        # flips at every switch time, and eight holds outlast any window
        seg = int(np.searchsorted(switches, t, side="right")) - 1
        hi = start_hi ^ (seg % 2 == 1)
        return crawl_hi if hi else crawl_lo

    tracks = np.zeros((3, samples, 2))
    b_braked = False
    b_eased = False
    crawl_t0 = None
    for i in range(samples):
        for j, (path, s) in enumerate(((_PATH_A, s_a), (_PATH_B, s_b), (path_c, s_c))):
            x, y, _ = path.pose(s)
            tracks[j, i, 0] = x
            tracks[j, i, 1] = y
        if i == samples - 1:
            break

        # vehicle A target speed: identical for every mode until A_COMMON.
        # The three behaviors then separate at staggered points so no pair
        # dominates: stop brakes hard (emergency limit) right away, fast
        # accelerates right away, and yield cruises a little further before
        # easing into a crawl carried through the turn until B clears the
        # merge point
        brake_a = -4.5
        if a_mode == MODE_FAST:
            vt_a = fast_speed if s_a > A_COMMON else 7.0
        elif a_mode == MODE_YIELD:
            if s_b > B_CONFLICT + 2.0:
                vt_a = 7.0
            elif s_a > yield_brake_s:
                # the switching schedule is drawn per scene and clocked
                # from crawl onset, past the observation window, so the
                # plateau pattern is invisible in any history and only
                # A's unfolding track reveals it
                if crawl_t0 is None:
                    crawl_t0 = i * dt
                vt_a = crawl_level(i * dt - crawl_t0)
            else:
                vt_a = 7.0
        else:  # MODE_STOP
            if s_a > stop_brake_s:
                vt_a, brake_a = 0.0, -6.5
            else:
                vt_a = 7.0

        # vehicle B reacts to A cutting in, eases off behind an A creeping
        # toward the junction, then car-follows after the merge.  The
        # cut-in reaction waits for A to commit past its cruise speed;
        # below that threshold a yielding A (which holds 7 m/s for a while)
        # is indistinguishable from traffic that will give way
        vt_b = free_b
        gain_b = 1.8
        cutting_in = s_a > A_COMMON + 1.0 and v_a > 7.5
        creeping = 1.5 < v_a < 6.5 and A_COMMON + 1.0 < s_a < A_CONFLICT
        if cutting_in and s_a < A_CONFLICT and s_b < B_CONFLICT:
            t_a = (A_CONFLICT - s_a) / max(v_a, 0.5)
            t_b = (B_CONFLICT - s_b) / max(v_b, 0.5)
            if t_a < t_b < t_a + 2.0:
                vt_b = min(vt_b, max(0.0, (B_CONFLICT - s_b) / (t_a + 2.0)))
                b_braked = True
        elif creeping and s_b < B_CONFLICT:
            # pace the creeper: B matches A's own crawl speed until it
            # clears the merge point, and tracks it tightly the way a
            # driver watching a hesitant merger does.  B's whole profile
            # then carries A's wandering crawl, which the observed
            # history cannot reveal (the crawl only starts later)
            vt_b = min(vt_b, max(v_a, 1.5))
            gain_b = 3.0
            b_eased = True
        elif s_a >= A_CONFLICT:
            gap = (B_CONFLICT + (s_a - A_CONFLICT)) - s_b
            # car-follow only applies with A ahead; gap <= 0 means B
            # already cleared the merge point first
            if 0.0 < gap < 4.0 + 1.2 * v_b:
                vt_b = min(vt_b, max(0.0, (gap - 4.0) / 1.2))
                if vt_b < free_b - 0.5:
                    b_braked = True

        # vehicle C slows through its turn
        if c_mode == 1 and C_ENTRY - 8.0 < s_c < C_ENTRY + _ARC_LEN:
            vt_c = 5.0
        else:
            vt_c = 8.0

        v_a = _accel_toward(v_a, vt_a, dt, a_min=brake_a)
        v_b = _accel_toward(v_b, vt_b, dt, gain=gain_b)
        v_c = _accel_toward(v_c, vt_c, dt)
        s_a += v_a * dt
        s_b += v_b * dt
        s_c += v_c * dt

    tracks += offsets
    tracks += rng.normal(0.0, cfg.obs_noise, size=tracks.shape)
    labels = np.array([a_mode, -1, -1], dtype=np.int64)
    meta = {"a_mode": a_mode, "c_mode": c_mode, "b_braked": bool(b_braked),
            "b_eased": bool(b_eased)}
    return tracks, labels, meta


def generate_raw_tracks(cfg: ScenarioConfig) -> list[RawScene]:
    """Full-rate tracks, one RawScene per simulation, bit-reproducible per
    (seed, index)."""
    out = []
    for i in range(cfg.num_scenes):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, i]))
        tracks, labels, meta = _simulate_scene(rng, cfg)
        out.append(
            RawScene(
                scene_id=f"s{i:05d}",
                agent_ids=np.array([0, 1, 2], dtype=np.int64),
                tracks=tracks,
                labels=labels,
                meta=meta,
            )
        )
    return out


def raw_to_scene(raw: RawScene, cfg: ScenarioConfig) -> Scene:
    idx = np.arange(cfg.past_steps + cfg.future_steps) * cfg.subsample
    if idx[-1] >= raw.tracks.shape[1]:
        raise ValueError("window does not fit the generated track")
    return Scene(
        scene_id=raw.scene_id,
        agent_ids=raw.agent_ids.copy(),
        positions=raw.tracks[:, idx],
        past_len=cfg.past_steps,
        dt=cfg.subsample / cfg.rate,
        labels=raw.labels.copy(),
        meta=dict(raw.meta),
    )


def generate_synthetic(cfg: ScenarioConfig) -> list[Scene]:
    """Labeled scene set at the windowed rate (subsample x past/future)."""
    return [raw_to_scene(r, cfg) for r in generate_raw_tracks(cfg)]


# ---------------------------------------------------------------------------
# CSV I/O

CSV_HEADER = ["scene_id", "agent_id", "frame", "x", "y"]


def save_trajectories(path: str, raws: list[RawScene]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for raw in raws:
            for a, agent_id in enumerate(raw.agent_ids):
                for frame in range(raw.tracks.shape[1]):
                    w.writerow(
                        [
                            raw.scene_id,
                            int(agent_id),
                            frame,
                            f"{raw.tracks[a, frame, 0]:.6f}",
                            f"{raw.tracks[a, frame, 1]:.6f}",
                        ]
                    )


def save_labels(path: str, raws: list[RawScene]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scene_id", "agent_id", "label"])
        for raw in raws:
            for a, agent_id in enumerate(raw.agent_ids):
                w.writerow([raw.scene_id, int(agent_id), int(raw.labels[a])])


def load_labels(path: str) -> dict:
    out = {}
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        for row in r:
            out[(row["scene_id"], int(row["agent_id"]))] = int(row["label"])
    return out


@dataclass
class TrackSet:
    """Per-scene, per-agent (frames, points) read from CSV; frames validated
    for uniform spacing and uniqueness, rows canonicalized by sorting."""

    tracks: dict
    dt: float

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def __getitem__(self, scene_id: str) -> dict:
        """Points per agent for one scene, frame indices dropped."""
        return {aid: pts for aid, (_, pts) in self.tracks[scene_id].items()}

    def items(self):
        return ((sid, self[sid]) for sid in self.tracks)


def load_trajectories(path: str, dt: float) -> TrackSet:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected header {CSV_HEADER}")
        if [h.strip() for h in header] != CSV_HEADER:
            missing = [c for c in CSV_HEADER if c not in header]
            raise ValueError(
                f"{path}: missing column(s) {missing}, expected header {CSV_HEADER}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(
                    (row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4]))
                )
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}")
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    tracks: dict = {}
    for sid, aid, frame, x, y in rows:
        tracks.setdefault(sid, {}).setdefault(aid, []).append((frame, x, y))
    out: dict = {}
    for sid, agents in tracks.items():
        out[sid] = {}
        for aid, items in agents.items():
            frames = np.array([it[0] for it in items], dtype=np.int64)
            if len(frames) > 1:
                steps = np.diff(frames)
                if np.any(steps == 0):
                    dup = frames[np.argmax(steps == 0)]
                    raise ValueError(
                        f"{path}: duplicate (scene, agent, frame) = "
                        f"({sid}, {aid}, {dup})"
                    )
                if np.any(steps != steps[0]):
                    raise ValueError(
                        f"{path}: non-uniform frame spacing for scene {sid} "
                        f"agent {aid}"
                    )
            pts = np.array([(it[1], it[2]) for it in items], dtype=np.float64)
            out[sid][aid] = (frames, pts)
    return TrackSet(tracks=out, dt=dt)


# ---------------------------------------------------------------------------
# windowing and splits

@dataclass
class WindowSpec:
    subsample: int = 4
    past_steps: int = 6
    future_steps: int = 19
    stride: int | None = None        # in subsampled steps; default = window
    cluster_radius: float = 60.0

    @property
    def window(self) -> int:
        return self.past_steps + self.future_steps


def _clusters(points: np.ndarray, radius: float) -> list[list[int]]:
    """Connected components under pairwise distance <= radius."""
    n = points.shape[0]
    unseen = set(range(n))
    comps = []
    while unseen:
        seed_i = min(unseen)
        comp = [seed_i]
        unseen.discard(seed_i)
        frontier = [seed_i]
        while frontier:
            i = frontier.pop()
            near = [
                j
                for j in list(unseen)
                if np.hypot(*(points[i] - points[j])) <= radius
            ]
            for j in near:
                unseen.discard(j)
                comp.append(j)
                frontier.append(j)
        comps.append(sorted(comp))
    return comps


def window_scenes(trackset: TrackSet, spec: WindowSpec,
                  labels: dict | None = None) -> list[Scene]:
    """Cut aligned windows out of a track set.

    Agents present for the full window are included; co-present agents are
    grouped into proximity clusters (connected components within
    cluster_radius at time t), one Scene per cluster.
    """
    stride = spec.stride if spec.stride is not None else spec.window
    need = np.arange(spec.window) * spec.subsample
    scenes = []
    for sid in sorted(trackset.tracks):
        agents = trackset.tracks[sid]
        fmin = min(int(fr[0]) for fr, _ in agents.values())
        fmax = max(int(fr[-1]) for fr, _ in agents.values())
        k = 0
        f0 = fmin
        while f0 + need[-1] <= fmax:
            ids, tracks = [], []
            for aid in sorted(agents):
                frames, pts = agents[aid]
                lookup = {int(f): i for i, f in enumerate(frames)}
                want = [int(f0 + d) for d in need]
                if all(w in lookup for w in want):
                    ids.append(aid)
                    tracks.append(pts[[lookup[w] for w in want]])
            if ids:
                at_t = np.stack([tr[spec.past_steps - 1] for tr in tracks])
                comps = _clusters(at_t, spec.cluster_radius)
                for ci, comp in enumerate(comps):
                    suffix = f":w{k}" + (f":c{ci}" if len(comps) > 1 else "")
                    scenes.append(
                        Scene(
                            scene_id=sid + suffix,
                            agent_ids=np.array([ids[i] for i in comp]),
                            positions=np.stack([tracks[i] for i in comp]),
                            past_len=spec.past_steps,
                            dt=trackset.dt * spec.subsample,
                            labels=(
                                np.array(
                                    [
                                        labels.get((sid, ids[i]), -1)
                                        for i in comp
                                    ],
                                    dtype=np.int64,
                                )
                                if labels is not None
                                else None
                            ),
                            source_id=sid,
                        )
                    )
            k += 1
            f0 = fmin + k * stride * spec.subsample
    return scenes


def split_dataset(scenes: list[Scene], fractions=(0.7, 0.1, 0.2), seed: int = 0):
    """Deterministic split by source scene id; windows cut from one source
    track never straddle two splits."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three values summing to 1")
    sources = sorted({s.source_id for s in scenes})
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    order = rng.permutation(len(sources))
    n = len(sources)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    shuffled = [sources[i] for i in order]
    train_ids = set(shuffled[:n_train])
    val_ids = set(shuffled[n_train : n_train + n_val])
    train = [s for s in scenes if s.source_id in train_ids]
    val = [s for s in scenes if s.source_id in val_ids]
    test = [
        s
        for s in scenes
        if s.source_id not in train_ids and s.source_id not in val_ids
    ]
    return train, val, test
