"""Toy environments: identical disconnected grid rooms and a continuous point room."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp

# y grows downwards so the ASCII map reads top to bottom
ACTION_NAMES = ("up", "down", "left", "right")
ACTION_DELTAS = np.array([[0, -1], [0, 1], [-1, 0], [1, 0]], dtype=np.int64)
NUM_GRID_ACTIONS = 4


class UnsupportedOperation(TypeError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 200
    init: str = "uniform"  # uniform over navigable cells of the selected rooms
    goal: str = "same-room"  # uniform over the start's room, excluding the start

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


class GridRoomsEnv:
    """``num_rooms`` identical open rooms separated by one-cell walls.

    Rooms sit in a single row for up to 10 rooms and in a 5-wide grid beyond
    that.  They are not connected to each other, so every episode stays in
    the room it started in.  States are integer ``(x, y)`` cells.
    """

    is_discrete = True
    num_actions = NUM_GRID_ACTIONS

    def __init__(self, num_rooms: int, room_width: int, room_height: int | None = None, columns: int | None = None):
        room_height = room_width if room_height is None else room_height
        if not 1 <= num_rooms <= 32:
            raise ValueError("num_rooms must be in 1..32")
        if room_width < 3 or room_height < 3:
            raise ValueError("rooms must be at least 3x3")
        if columns is None:
            columns = num_rooms if num_rooms <= 10 else 5
        self.num_rooms = int(num_rooms)
        self.room_width = int(room_width)
        self.room_height = int(room_height)
        self.columns = int(columns)
        self.rows = math.ceil(self.num_rooms / self.columns)
        self.corridors: tuple = ()
        self.width = self.columns * (self.room_width + 1) - 1
        self.height = self.rows * (self.room_height + 1) - 1

        self.room_map = np.full((self.height, self.width), -1, dtype=np.int64)
        for r in range(self.num_rooms):
            ox, oy = self.room_origin(r)
            self.room_map[oy : oy + self.room_height, ox : ox + self.room_width] = r
        ys, xs = np.nonzero(self.room_map >= 0)  # row-major
        self.cells = np.stack([xs, ys], axis=1)
        self.cell_id = np.full((self.height, self.width), -1, dtype=np.int64)
        self.cell_id[ys, xs] = np.arange(len(xs))
        self.cell_room = self.room_map[ys, xs]
        self._next = self._transition_table()
        self._dist = None

    # -- layout ---------------------------------------------------------------
    def room_origin(self, room: int) -> tuple[int, int]:
        col, row = room % self.columns, room // self.columns
        return col * (self.room_width + 1), row * (self.room_height + 1)

    def room_cells(self, room: int) -> np.ndarray:
        return self.cells[self.cell_room == room]

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def room_of(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        return self.room_map[cells[:, 1], cells[:, 0]]

    def translate(self, cells, src_room: int, dst_room: int) -> np.ndarray:
        a, b = np.array(self.room_origin(src_room)), np.array(self.room_origin(dst_room))
        return np.asarray(cells) - a + b

    def is_open(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        x, y = cells[:, 0], cells[:, 1]
        inside = (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)
        out = np.zeros(len(cells), dtype=bool)
        out[inside] = self.room_map[y[inside], x[inside]] >= 0
        return out

    # -- dynamics -------------------------------------------------------------
    def _transition_table(self) -> np.ndarray:
        nxt = np.empty((self.num_cells, NUM_GRID_ACTIONS), dtype=np.int64)
        for a, d in enumerate(ACTION_DELTAS):
            moved = self.cells + d
            ok = self.is_open(moved)
            target = np.where(ok[:, None], moved, self.cells)
            nxt[:, a] = self.cell_id[target[:, 1], target[:, 0]]
        return nxt

    def step(self, state, action):
        """Deterministic move; bumping into a wall leaves the cell unchanged.

        Accepts one ``(x, y)`` state or an ``(N, 2)`` array with ``N`` actions.
        """
        state = np.asarray(state, dtype=np.int64)
        single = state.ndim == 1
        s = state.reshape(-1, 2)
        a = np.asarray(action, dtype=np.int64).reshape(-1) % NUM_GRID_ACTIONS
        ids = self.cell_id[s[:, 1], s[:, 0]]
        out = self.cells[self._next[ids, a]]
        return out[0] if single else out

    def step_ids(self, ids, actions) -> np.ndarray:
        return self._next[np.asarray(ids), np.asarray(actions)]

    def is_success(self, state, goal) -> np.ndarray:
        return np.all(np.asarray(state) == np.asarray(goal), axis=-1)

    # -- shortest paths -------------------------------------------------------
    @property
    def distances(self) -> np.ndarray:
        """All-pairs BFS distance between cell ids (``-1`` when unreachable)."""
        if self._dist is None:
            n = self.num_cells
            dist = np.full((n, n), -1, dtype=np.int64)
            for src in range(n):
                dist[src, src] = 0
                q = deque([src])
                while q:
                    u = q.popleft()
                    for v in self._next[u]:
                        if dist[src, v] < 0:
                            dist[src, v] = dist[src, u] + 1
                            q.append(v)
            self._dist = dist
        return self._dist

    def optimal_actions(self, cell_id: int, goal_id: int) -> np.ndarray:
        d = self.distances
        here = d[cell_id, goal_id]
        if here <= 0:
            return np.arange(0)
        return np.flatnonzero(d[self._next[cell_id], goal_id] == here - 1)

    # -- features -------------------------------------------------------------
    @property
    def state_dim(self) -> int:
        return 2

    @property
    def action_dim(self) -> int:
        return NUM_GRID_ACTIONS

    def features(self, cells) -> np.ndarray:
        """Global ``(x, y)`` scaled to [0, 1]."""
        cells = np.asarray(cells, dtype=np.float64)
        scale = np.array([max(self.width - 1, 1), max(self.height - 1, 1)], dtype=np.float64)
        return (cells / scale).astype(np.float32)

    def cells_from_features(self, feats) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        scale = np.array([max(self.width - 1, 1), max(self.height - 1, 1)], dtype=np.float64)
        return np.rint(feats * scale).astype(np.int64)

    def encode_actions(self, actions) -> np.ndarray:
        return np.eye(NUM_GRID_ACTIONS, dtype=np.float32)[np.asarray(actions, dtype=np.int64)]

    def decode_actions(self, onehots) -> np.ndarray:
        return np.argmax(np.asarray(onehots), axis=-1)

    # -- io ---------------------------------------------------------------------
    def descriptor(self) -> dict:
        return {
            "kind": "grid-rooms",
            "num_rooms": self.num_rooms,
            "room_width": self.room_width,
            "room_height": self.room_height,
            "arrangement": {"columns": self.columns, "rows": self.rows},
        }

    def render(self, marks: dict | None = None) -> str:
        """ASCII map: ``#`` wall, ``.`` floor; ``marks`` maps cells to characters drawn on top."""
        grid = [["#" if self.room_map[y, x] < 0 else "." for x in range(self.width)] for y in range(self.height)]
        for (x, y), ch in (marks or {}).items():
            grid[y][x] = ch
        border = "#" * (self.width + 2)
        return "\n".join([border] + ["#" + "".join(row) + "#" for row in grid] + [border])


class PointRoomEnv:
    """Continuous square room; actions are displacement vectors."""

    is_discrete = False

    def __init__(self, bounds=(0.0, 0.0, 1.0, 1.0), max_step: float | None = None, success_radius: float = 0.05):
        x0, y0, x1, y1 = (float(b) for b in bounds)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("bounds must describe a non-empty rectangle")
        self.low = np.array([x0, y0])
        self.high = np.array([x1, y1])
        self.max_step = 0.1 * (x1 - x0) if max_step is None else float(max_step)
        self.success_radius = float(success_radius)

    state_dim = 2
    action_dim = 2

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64)
        norm = np.linalg.norm(a, axis=-1, keepdims=True)
        scale = np.minimum(1.0, self.max_step / np.maximum(norm, 1e-12))
        return a * scale

    def step(self, state, action) -> np.ndarray:
        return np.clip(np.asarray(state, dtype=np.float64) + self.clip_action(action), self.low, self.high)

    def is_success(self, state, goal) -> np.ndarray:
        return np.linalg.norm(np.asarray(state) - np.asarray(goal), axis=-1) <= self.success_radius

    def features(self, states) -> np.ndarray:
        return ((np.asarray(states) - self.low) / (self.high - self.low)).astype(np.float32)

    def encode_actions(self, actions) -> np.ndarray:
        return (np.asarray(actions) / self.max_step).astype(np.float32)

    def descriptor(self) -> dict:
        return {
            "kind": "point-room",
            "bounds": [*self.low.tolist(), *self.high.tolist()],
            "max_step": self.max_step,
            "success_radius": self.success_radius,
        }


def make_rooms(num_rooms: int, room_size=5) -> GridRoomsEnv:
    if isinstance(room_size, (tuple, list)):
        w, h = room_size
    else:
        w = h = int(room_size)
    return GridRoomsEnv(num_rooms, w, h)


def to_tabular(env) -> TabularMdp:
    """Exact deterministic transition table; state ids enumerate open cells row-major."""
    if not isinstance(env, GridRoomsEnv):
        raise UnsupportedOperation("only grid environments have an exact tabular view")
    n = env.num_cells
    p = np.zeros((n, NUM_GRID_ACTIONS, n))
    rows = np.repeat(np.arange(n), NUM_GRID_ACTIONS)
    acts = np.tile(np.arange(NUM_GRID_ACTIONS), n)
    p[rows, acts, env._next.reshape(-1)] = 1.0
    return TabularMdp(p)


NAMED_ENVS = {
    "room1": lambda: make_rooms(1, 5),
    "rooms5": lambda: make_rooms(5, 5),
    "rooms20": lambda: make_rooms(20, 5),
    "point": lambda: PointRoomEnv(),
}


def env_from_descriptor(desc) -> GridRoomsEnv | PointRoomEnv:
    """Build an environment from a name (``rooms5``), a layout dict, or a JSON path."""
    if isinstance(desc, str):
        if desc in NAMED_ENVS:
            return NAMED_ENVS[desc]()
        with open(desc, encoding="utf-8") as f:
            desc = json.load(f)
    kind = desc.get("kind", "grid-rooms")
    if kind == "grid-rooms":
        columns = desc.get("arrangement", {}).get("columns")
        return GridRoomsEnv(desc["num_rooms"], desc["room_width"], desc.get("room_height"), columns)
    if kind == "point-room":
        return PointRoomEnv(desc.get("bounds", (0, 0, 1, 1)), desc.get("max_step"), desc.get("success_radius", 0.05))
    raise ValueError(f"unknown environment kind {kind!r}")
