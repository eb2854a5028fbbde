"""Finite MDPs, k-balls, and dynamics bisimilarity by partition refinement."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PROB_ATOL = 1e-9
_DECIMALS = 9


class TabularMdp:
    """Explicit finite MDP with a dense ``(S, A, S)`` transition table.

    ``rewards`` is an optional ``(S, S)`` table r(state, goal); it is carried
    along but never used by the bisimilarity check.
    """

    def __init__(self, transitions, rewards=None):
        p = np.array(transitions, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] == 0 or p.shape[1] == 0:
            raise ValueError(f"transitions must have shape (S, A, S), got {p.shape}")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        sums = p.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > 1e-12)
        if len(bad):
            s, a = bad[0]
            raise ValueError(f"row (state={s}, action={a}) sums to {sums[s, a]!r}")
        p.setflags(write=False)
        self.transitions = p
        if rewards is not None:
            rewards = np.array(rewards, dtype=np.float64)
            if rewards.shape[0] != p.shape[0]:
                raise ValueError("rewards must have one row per state")
            rewards.setflags(write=False)
        self.rewards = rewards

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def successors(self, state: int) -> np.ndarray:
        return np.flatnonzero(self.transitions[state].sum(axis=0) > 0.0)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        mdp = cls(d["transitions"], d.get("rewards"))
        if mdp.num_states != d["num_states"] or mdp.num_actions != d["num_actions"]:
            raise ValueError("num_states/num_actions disagree with the transitions array")
        return mdp

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "TabularMdp":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class KBallMdp:
    root: int
    horizon_k: int
    member_states: tuple  # parent ids, root first, in breadth-first order
    local: TabularMdp  # member states followed by one absorbing sink

    @property
    def root_local(self) -> int:
        return 0

    @property
    def sink(self) -> int:
        return len(self.member_states)


@dataclass(frozen=True)
class BisimRelation:
    pairs: frozenset
    num_left: int
    num_right: int

    @property
    def total_left(self) -> bool:
        return {x for x, _ in self.pairs} == set(range(self.num_left))

    @property
    def total_right(self) -> bool:
        return {y for _, y in self.pairs} == set(range(self.num_right))


def _check_state(mdp: TabularMdp, s: int) -> None:
    if not (0 <= int(s) < mdp.num_states) or int(s) != s:
        raise ValueError(f"invalid state id {s!r} for an MDP with {mdp.num_states} states")


def compute_k_ball(mdp: TabularMdp, root: int, k: int) -> set:
    """States reachable from ``root`` in at most ``k`` steps under some action sequence."""
    _check_state(mdp, root)
    if k < 0:
        raise ValueError("k must be non-negative")
    reach = mdp.transitions.sum(axis=1) > 0.0
    ball = {int(root)}
    frontier = [int(root)]
    for _ in range(k):
        nxt = []
        for s in frontier:
            for s2 in np.flatnonzero(reach[s]):
                s2 = int(s2)
                if s2 not in ball:
                    ball.add(s2)
                    nxt.append(s2)
        if not nxt:
            break
        frontier = nxt
    return ball


def _bfs_order(mdp: TabularMdp, root: int, k: int) -> list:
    reach = mdp.transitions.sum(axis=1) > 0.0
    order = [int(root)]
    seen = {int(root)}
    frontier = [int(root)]
    for _ in range(k):
        nxt = []
        for s in frontier:
            for s2 in np.flatnonzero(reach[s]):
                s2 = int(s2)
                if s2 not in seen:
                    seen.add(s2)
                    order.append(s2)
                    nxt.append(s2)
        frontier = nxt
    return order


def build_k_ball_mdp(mdp: TabularMdp, root: int, k: int) -> KBallMdp:
    """Restrict ``mdp`` to the k-ball of ``root``; mass leaving the ball goes to a sink."""
    _check_state(mdp, root)
    if k < 0:
        raise ValueError("k must be non-negative")
    members = _bfs_order(mdp, root, k)
    n = len(members)
    p = np.zeros((n + 1, mdp.num_actions, n + 1))
    sub = mdp.transitions[np.ix_(members, range(mdp.num_actions), members)]
    p[:n, :, :n] = sub
    p[:n, :, n] = np.clip(1.0 - sub.sum(axis=2), 0.0, 1.0)
    p[n, :, n] = 1.0
    # renormalise away float dust so rows still sum to 1 within 1e-12
    p[:n] /= p[:n].sum(axis=2, keepdims=True)
    rewards = None
    if mdp.rewards is not None and mdp.rewards.shape[1] == mdp.num_states:
        rewards = np.zeros((n + 1, n + 1))
        rewards[:n, :n] = mdp.rewards[np.ix_(members, members)]
    return KBallMdp(int(root), int(k), tuple(members), TabularMdp(p, rewards))


def _signature_rows(p: np.ndarray) -> list:
    """Per state: for each action, the set of positive successor probabilities."""
    rounded = np.round(p, _DECIMALS)
    rows = []
    for s in range(p.shape[0]):
        rows.append(tuple(tuple(sorted(set(rounded[s, a][rounded[s, a] > 0.0].tolist()))) for a in range(p.shape[1])))
    return rows


def _relabel(keys) -> np.ndarray:
    index = {}
    out = np.empty(len(keys), dtype=np.int64)
    for i, key in enumerate(keys):
        out[i] = index.setdefault(key, len(index))
    return out


def coarsest_partition(p: np.ndarray, labels=None) -> np.ndarray:
    """Greatest-fixpoint refinement on one transition table.

    Starts from the pointwise-successor signature (combined with optional
    per-state ``labels`` that related states must share), then splits blocks
    until every block's members assign equal mass to every block under every
    action.
    """
    sig = _signature_rows(p)
    if labels is not None:
        sig = [(int(lab), row) for lab, row in zip(labels, sig)]
    blocks = _relabel(sig)
    while True:
        nb = blocks.max() + 1
        onehot = np.zeros((p.shape[0], nb))
        onehot[np.arange(p.shape[0]), blocks] = 1.0
        mass = np.round(p @ onehot, _DECIMALS)  # (S, A, nb)
        keys = [(int(blocks[s]), mass[s].tobytes()) for s in range(p.shape[0])]
        refined = _relabel(keys)
        if refined.max() == blocks.max():
            return refined
        blocks = refined


def _disjoint_union(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    n1, n2 = p1.shape[0], p2.shape[0]
    p = np.zeros((n1 + n2, p1.shape[1], n1 + n2))
    p[:n1, :, :n1] = p1
    p[n1:, :, n1:] = p2
    return p


def ball_labels(ball: KBallMdp) -> list:
    """0 for member states, 1 for the sink."""
    return [0] * len(ball.member_states) + [1]


def check_dynamics_bisimilar(m1, m2, roots=None, labels=None):
    """Decide whether a total dynamics-bisimulation relation exists.

    ``m1``/``m2`` may be :class:`TabularMdp` or :class:`KBallMdp`.  When both
    are k-ball MDPs their roots must be related and each sink may only be
    related to the other sink (so the ball boundary is compared too);
    ``roots=(r1, r2)`` and ``labels=(labels1, labels2)`` impose the same kind
    of requirement explicitly.

    Returns ``(True, BisimRelation)`` or ``(False, None)``.
    """
    if isinstance(m1, KBallMdp) and isinstance(m2, KBallMdp):
        if roots is None:
            roots = (m1.root_local, m2.root_local)
        if labels is None:
            labels = (ball_labels(m1), ball_labels(m2))
    if isinstance(m1, KBallMdp):
        m1 = m1.local
    if isinstance(m2, KBallMdp):
        m2 = m2.local
    if m1.num_actions != m2.num_actions:
        raise ValueError(f"action counts differ: {m1.num_actions} vs {m2.num_actions}")
    n1, n2 = m1.num_states, m2.num_states
    union_labels = None
    if labels is not None:
        if len(labels[0]) != n1 or len(labels[1]) != n2:
            raise ValueError("labels must give one entry per state")
        union_labels = list(labels[0]) + list(labels[1])
    blocks = coarsest_partition(_disjoint_union(m1.transitions, m2.transitions), union_labels)
    left, right = blocks[:n1], blocks[n1:]
    if set(left.tolist()) != set(right.tolist()):
        return False, None
    if roots is not None and left[roots[0]] != right[roots[1]]:
        return False, None
    pairs = frozenset((x, y) for x in range(n1) for y in range(n2) if left[x] == right[y])
    return True, BisimRelation(pairs, n1, n2)
