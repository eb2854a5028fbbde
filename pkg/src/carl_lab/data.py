"""Offline datasets: noisy-expert collection, the CARLDS1 file format, k-step segment sampling and filters."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .envs import GridRoomsEnv, PointRoomEnv

DS_MAGIC = b"CARLDS1\x00"
DS_VERSION = 1


@dataclass
class Trajectory:
    states: np.ndarray  # (T + 1, state_dim) float32
    actions: np.ndarray  # (T, action_dim) float32

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if len(self.actions) != len(self.states) - 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    @property
    def length(self) -> int:
        return len(self.actions)


class Dataset:
    """Trajectories sharing state/action dims, with a flat index for sampling."""

    def __init__(self, trajectories, state_dim: int, action_dim: int, meta: dict | None = None):
        self.trajectories = list(trajectories)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.meta = dict(meta or {})
        for tr in self.trajectories:
            if tr.states.shape[1] != self.state_dim or (tr.length and tr.actions.shape[1] != self.action_dim):
                raise ValueError("trajectory dims disagree with dataset dims")
        lengths = np.array([tr.length for tr in self.trajectories], dtype=np.int64)
        self.lengths = lengths
        self.state_offsets = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]]).astype(np.int64)
        self.action_offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        if self.trajectories:
            self.states = np.concatenate([tr.states for tr in self.trajectories])
            self.actions = np.concatenate([tr.actions.reshape(-1, self.action_dim) for tr in self.trajectories])
        else:
            self.states = np.zeros((0, self.state_dim), np.float32)
            self.actions = np.zeros((0, self.action_dim), np.float32)
        # owning trajectory of every transition, and the global state index of its s_t
        self.transition_traj = np.repeat(np.arange(len(lengths)), lengths)
        self.transition_t = np.arange(int(lengths.sum())) - np.repeat(self.action_offsets, lengths)
        self.transition_state = self.state_offsets[self.transition_traj] + self.transition_t

    @property
    def num_transitions(self) -> int:
        return int(self.lengths.sum())

    @property
    def max_length(self) -> int:
        return int(self.lengths.max()) if len(self.lengths) else 0

    def __len__(self) -> int:
        return len(self.trajectories)

    def subset(self, keep) -> "Dataset":
        return Dataset([tr for tr, k in zip(self.trajectories, keep) if k], self.state_dim, self.action_dim, self.meta)


# -- collection ---------------------------------------------------------------

def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(episode)]))


def _grid_episode(env: GridRoomsEnv, horizon: int, noise: float, rng, starts) -> Trajectory:
    cell = int(rng.choice(starts))
    room = env.cell_room[cell]
    room_ids = np.flatnonzero(env.cell_room == room)

    def new_goal(c):
        if len(room_ids) == 1:
            return c
        g = c
        while g == c:
            g = int(rng.choice(room_ids))
        return g

    goal = new_goal(cell)
    cells, acts = [cell], []
    for _ in range(horizon):
        if cell == goal:
            goal = new_goal(cell)
        if rng.random() < noise:
            a = int(rng.integers(4))
        else:
            opts = env.optimal_actions(cell, goal)
            a = int(rng.choice(opts)) if len(opts) else int(rng.integers(4))
        cell = int(env.step_ids(cell, a))
        cells.append(cell)
        acts.append(a)
    return Trajectory(env.features(env.cells[cells]), env.encode_actions(acts))


def _point_episode(env: PointRoomEnv, horizon: int, noise: float, rng) -> Trajectory:
    s = rng.uniform(env.low, env.high)
    goal = rng.uniform(env.low, env.high)
    states, acts = [s], []
    for _ in range(horizon):
        if env.is_success(s, goal):
            goal = rng.uniform(env.low, env.high)
        if rng.random() < noise:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            a = env.max_step * np.array([np.cos(theta), np.sin(theta)])
        else:
            a = env.clip_action(goal - s)
        s = env.step(s, a)
        states.append(s)
        acts.append(a)
    return Trajectory(env.features(np.array(states)), env.encode_actions(np.array(acts)))


def generate_dataset(env, episodes: int, noise: float, seed: int, horizon: int = 200, rooms=None) -> Dataset:
    """Roll out an epsilon-greedy shortest-path expert that keeps chasing fresh goals.

    Every episode gets its own generator seeded from ``(seed, episode)``, so
    the result does not depend on the order episodes are produced in.
    ``rooms`` restricts start cells (and therefore whole episodes) to a subset.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    trajs = []
    if isinstance(env, GridRoomsEnv):
        if rooms is None:
            starts = np.arange(env.num_cells)
        else:
            starts = np.flatnonzero(np.isin(env.cell_room, list(rooms)))
        for ep in range(episodes):
            trajs.append(_grid_episode(env, horizon, noise, _episode_rng(seed, ep), starts))
    else:
        for ep in range(episodes):
            trajs.append(_point_episode(env, horizon, noise, _episode_rng(seed, ep)))
    meta = {
        "env": env.descriptor(),
        "episodes": int(episodes),
        "noise": float(noise),
        "seed": int(seed),
        "horizon": int(horizon),
        "rooms": None if rooms is None else sorted(int(r) for r in rooms),
    }
    return Dataset(trajs, env.state_dim, env.action_dim, meta)


def restrict_to_rooms(ds: Dataset, env: GridRoomsEnv, rooms) -> Dataset:
    """Keep the trajectories that start in ``rooms`` (episodes never leave their room)."""
    rooms = set(int(r) for r in rooms)
    keep = [int(env.room_of(env.cells_from_features(tr.states[0]))[0]) in rooms for tr in ds.trajectories]
    out = ds.subset(keep)
    out.meta = {**ds.meta, "rooms": sorted(rooms)}
    return out


# -- file format ----------------------------------------------------------------

def dataset_to_bytes(ds: Dataset) -> bytes:
    parts = [DS_MAGIC, struct.pack("<4I", DS_VERSION, ds.state_dim, ds.action_dim, len(ds.trajectories))]
    for tr in ds.trajectories:
        parts.append(struct.pack("<I", tr.length))
        parts.append(np.ascontiguousarray(tr.states, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(tr.actions, dtype="<f4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(data: bytes, meta: dict | None = None) -> Dataset:
    if data[:8] != DS_MAGIC:
        raise ValueError("not a CARLDS1 dataset")
    version, sdim, adim, ntraj = struct.unpack_from("<4I", data, 8)
    if version != DS_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    off = 24
    trajs = []
    for _ in range(ntraj):
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        states = np.frombuffer(data, "<f4", (length + 1) * sdim, off).reshape(length + 1, sdim)
        off += 4 * (length + 1) * sdim
        actions = np.frombuffer(data, "<f4", length * adim, off).reshape(length, adim)
        off += 4 * length * adim
        trajs.append(Trajectory(states.copy(), actions.copy()))
    if off != len(data):
        raise ValueError("trailing bytes in dataset file")
    return Dataset(trajs, sdim, adim, meta)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``path`` and a ``path + '.json'`` provenance manifest."""
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(ds))
    manifest = {
        **ds.meta,
        "format": "CARLDS1",
        "state_dim": ds.state_dim,
        "action_dim": ds.action_dim,
        "num_trajectories": len(ds.trajectories),
        "num_transitions": ds.num_transitions,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path) -> Dataset:
    meta = {}
    try:
        with open(str(path) + ".json", encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        pass
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read(), meta)


# -- segment sampling -------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    horizon_k: int = 3
    goal_mode: str = "interior"
    action_stride: int = 1
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.horizon_k < 1:
            raise ValueError("horizon_k must be >= 1")
        if self.goal_mode not in ("interior", "surface"):
            raise ValueError("goal_mode must be 'interior' or 'surface'")
        if self.action_stride < 1:
            raise ValueError("action_stride must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def seq_len(self) -> int:
        return math.ceil(self.horizon_k / self.action_stride)


@dataclass
class SegmentBatch:
    """B segments (s_t, a_{t:t+k}, s_{t+j}, s_{t+k}) as stacked arrays."""

    states: np.ndarray  # (B, sd)
    goals: np.ndarray  # (B, sd), s_{t+j}
    offsets: np.ndarray  # (B,), j after clamping
    actions: np.ndarray  # (B, ceil(k / stride), ad)
    final_states: np.ndarray  # (B, sd), s_{t+k} or the last available state
    full_actions: np.ndarray  # (B, k, ad) before striding
    truncated: np.ndarray  # (B,) bool
    traj: np.ndarray = field(default=None)
    t: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.states)

    def flat_actions(self) -> np.ndarray:
        return self.actions.reshape(len(self.actions), -1)


def truncate_pad(actions, k: int):
    """Pad a sequence to length ``k`` by repeating its final element."""
    if len(actions) == 0:
        raise ValueError("cannot pad an empty action sequence")
    if len(actions) > k:
        raise ValueError("sequence is longer than k")
    if isinstance(actions, np.ndarray):
        reps = np.repeat(actions[-1:], k - len(actions), axis=0)
        return np.concatenate([actions, reps], axis=0)
    return list(actions) + [actions[-1]] * (k - len(actions))


def gather_segments(ds: Dataset, transition_idx, k: int, offsets=None, stride: int = 1) -> SegmentBatch:
    """Build segments starting at the given flat transition indices.

    ``offsets`` (the goal offset j) defaults to k.  Segments that run past
    the end of their trajectory are truncated: actions are padded with the
    final action and both j and the final state clamp to the last state.
    """
    idx = np.asarray(transition_idx, dtype=np.int64)
    traj = ds.transition_traj[idx]
    t = ds.transition_t[idx]
    lengths = ds.lengths[traj]
    avail = lengths - t  # steps available after t, >= 1
    base_s = ds.state_offsets[traj] + t
    base_a = ds.action_offsets[traj] + t
    steps = np.arange(k)
    a_idx = base_a[:, None] + np.minimum(steps[None, :], avail[:, None] - 1)
    full = ds.actions[a_idx]
    j = np.full(len(idx), k, dtype=np.int64) if offsets is None else np.asarray(offsets, dtype=np.int64)
    j = np.minimum(j, avail)
    kk = np.minimum(k, avail)
    return SegmentBatch(
        states=ds.states[base_s],
        goals=ds.states[base_s + j],
        offsets=j,
        actions=full[:, ::stride],
        final_states=ds.states[base_s + kk],
        full_actions=full,
        truncated=avail < k,
        traj=traj,
        t=t,
    )


def sample_segments(ds: Dataset, cfg: SamplerConfig, rng: np.random.Generator | None = None) -> SegmentBatch:
    """Draw a batch of k-step segments, uniform over all transitions.

    Interior mode draws the goal offset j uniformly from 1..k; surface mode
    fixes j = k.  Pass a generator to keep drawing from one stream.
    """
    if ds.num_transitions == 0:
        raise ValueError("dataset is empty")
    if cfg.horizon_k >= ds.max_length:
        raise ValueError(f"k={cfg.horizon_k} must be below the longest trajectory ({ds.max_length})")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    idx = rng.integers(ds.num_transitions, size=cfg.batch_size)
    if cfg.goal_mode == "interior":
        j = rng.integers(1, cfg.horizon_k + 1, size=cfg.batch_size)
    else:
        j = np.full(cfg.batch_size, cfg.horizon_k)
    return gather_segments(ds, idx, cfg.horizon_k, j, cfg.action_stride)


# -- coverage / imbalance filters ------------------------------------------------

def region_predicate(name: str):
    """Predicates over scaled state features."""
    preds = {
        "left": lambda s: s[:, 0] < 0.5,
        "right": lambda s: s[:, 0] >= 0.5,
        "top": lambda s: s[:, 1] < 0.5,
        "bottom": lambda s: s[:, 1] >= 0.5,
        "all": lambda s: np.ones(len(s), dtype=bool),
    }
    if name not in preds:
        raise ValueError(f"unknown region {name!r}; choose from {sorted(preds)}")
    return preds[name]


def direction_predicate(name: str):
    """Predicate over one-hot grid actions (``up``/``down``/``left``/``right``)."""
    from .envs import ACTION_NAMES

    if name not in ACTION_NAMES:
        raise ValueError(f"unknown direction {name!r}")
    a = ACTION_NAMES.index(name)
    return lambda acts: np.argmax(acts, axis=1) == a


def _drop_transitions(ds: Dataset, drop: np.ndarray, tag: dict) -> Dataset:
    """Remove flagged transitions, splitting trajectories at every removal point."""
    out = []
    for i, tr in enumerate(ds.trajectories):
        d = drop[ds.action_offsets[i] : ds.action_offsets[i] + tr.length]
        if not d.any():
            out.append(tr)
            continue
        start = 0
        for t in np.append(np.flatnonzero(d), tr.length):
            if t > start:
                out.append(Trajectory(tr.states[start : t + 1], tr.actions[start:t]))
            start = t + 1
    meta = {**ds.meta, "filters": ds.meta.get("filters", []) + [tag]}
    return Dataset(out, ds.state_dim, ds.action_dim, meta)


def filter_coverage(ds: Dataset, region, keep_fraction: float, seed: int = 0) -> Dataset:
    """Keep each transition touching ``region`` with probability ``keep_fraction``.

    A transition touches the region when s_t or s_{t+1} lies in it, so a keep
    fraction of 0 leaves no state of the region in the dataset.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    pred = region_predicate(region) if isinstance(region, str) else region
    if keep_fraction == 1.0:
        return ds
    in_region = pred(ds.states[ds.transition_state]) | pred(ds.states[ds.transition_state + 1])
    rng = np.random.default_rng(seed)
    drop = in_region & (rng.random(ds.num_transitions) >= keep_fraction)
    return _drop_transitions(ds, drop, {"coverage": str(region), "keep": keep_fraction, "seed": seed})


def filter_imbalance(ds: Dataset, region, direction, removal_fraction: float, seed: int = 0) -> Dataset:
    """Remove ``removal_fraction`` of the transitions in ``region`` that move in ``direction``."""
    if not 0.0 <= removal_fraction <= 1.0:
        raise ValueError("removal_fraction must lie in [0, 1]")
    pred = region_predicate(region) if isinstance(region, str) else region
    dpred = direction_predicate(direction) if isinstance(direction, str) else direction
    if removal_fraction == 0.0:
        return ds
    target = pred(ds.states[ds.transition_state]) & dpred(ds.actions)
    rng = np.random.default_rng(seed)
    drop = target & (rng.random(ds.num_transitions) < removal_fraction)
    return _drop_transitions(
        ds, drop, {"imbalance": str(region), "direction": str(direction), "remove": removal_fraction, "seed": seed}
    )
