"""Evaluation and experiment drivers: success rates, room transfer, retrieval, cluster geometry, sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .carl import CarlModel, embed_state_goal, train_carl
from .data import filter_coverage, filter_imbalance, generate_dataset, restrict_to_rooms
from .envs import ACTION_DELTAS, ACTION_NAMES, GridRoomsEnv
from .hrl import HrlAgent, act, train_agent

SOLVE_THRESHOLD = 0.9
Z95 = 1.96


def ci95(p: float, n: int) -> float:
    """Normal-approximation 95% half-width for a proportion (or a mean of n values)."""
    return Z95 * math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else 0.0


def mean_ci(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(Z95 * v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class EvalReport:
    room_success: dict  # room -> success rate
    rooms_solved: int
    total_rooms: int
    episodes: int
    seeds: list
    ci_halfwidth: dict  # room -> 95% half-width
    runtime_s: float = 0.0
    mean_success: float = 0.0

    def to_dict(self, include_runtime: bool = True) -> dict:
        """Plain dict; wall-clock runtime can be left out so reruns serialize identically."""
        d = asdict(self)
        d["room_success"] = {str(k): v for k, v in self.room_success.items()}
        d["ci_halfwidth"] = {str(k): v for k, v in self.ci_halfwidth.items()}
        if not include_runtime:
            del d["runtime_s"]
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"


# -- policies ---------------------------------------------------------------------

class OraclePolicy:
    """Shortest-path actions from the environment's BFS table."""

    def __init__(self, env: GridRoomsEnv):
        self.env = env

    def __call__(self, s_feat, g_feat):
        env = self.env
        cs = env.cell_id[tuple(env.cells_from_features(s_feat)[:, ::-1].T)]
        cg = env.cell_id[tuple(env.cells_from_features(g_feat)[:, ::-1].T)]
        d = env.distances
        nxt = env._next[cs]  # (N, 4)
        best = np.argmin(d[nxt, cg[:, None]], axis=1)
        return best


class RandomPolicy:
    def __init__(self, num_actions: int = 4, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.num_actions = num_actions

    def __call__(self, s_feat, g_feat):
        return self.rng.integers(self.num_actions, size=len(s_feat))


def _as_policy(agent):
    if isinstance(agent, HrlAgent):
        return lambda s, g: act(agent, s, g)
    return agent


# -- evaluation -------------------------------------------------------------------

def sample_tasks(env: GridRoomsEnv, rooms, episodes: int, seed: int):
    """Start/goal cells per room: uniform start, uniform distinct goal in the same room."""
    rng = np.random.default_rng(seed)
    starts, goals, labels = [], [], []
    for r in rooms:
        cells = env.room_cells(r)
        for _ in range(episodes):
            i, j = rng.choice(len(cells), size=2, replace=False)
            starts.append(cells[i])
            goals.append(cells[j])
            labels.append(r)
    return np.array(starts), np.array(goals), np.array(labels)


def evaluate(agent, env: GridRoomsEnv, rooms=None, episodes: int = 20, seed: int = 0, horizon: int = 50) -> EvalReport:
    """Roll out every (room, episode) task in lockstep; success = reaching the goal cell within ``horizon``."""
    t0 = time.perf_counter()
    rooms = list(range(env.num_rooms)) if rooms is None else [int(r) for r in rooms]
    policy = _as_policy(agent)
    starts, goals, labels = sample_tasks(env, rooms, episodes, seed)
    cells = starts.copy()
    done = np.all(cells == goals, axis=1)
    g_feat = env.features(goals)
    for _ in range(horizon):
        live = ~done
        if not live.any():
            break
        a = np.asarray(policy(env.features(cells[live]), g_feat[live]))
        cells[live] = env.step(cells[live], a)
        done |= np.all(cells == goals, axis=1)
    success = {r: float(done[labels == r].mean()) for r in rooms}
    half = {r: ci95(p, episodes) for r, p in success.items()}
    solved = sum(p >= SOLVE_THRESHOLD for p in success.values())
    return EvalReport(success, solved, len(rooms), episodes, [int(seed)], half, time.perf_counter() - t0,
                      float(np.mean(list(success.values()))))


# -- experiment configuration --------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything one train-and-evaluate cell needs."""

    env: str = "rooms5"
    episodes: int = 500
    noise: float = 0.2
    data_horizon: int = 200
    train_rooms: list | None = None  # restrict policy data; encoder always sees all rooms
    eval_rooms: list | None = None
    eval_episodes: int = 20
    eval_horizon: int = 50
    steps: int = 4000
    pretrain_steps: int = 0
    coverage_region: str = "left"
    coverage_keep: float = 1.0
    imbalance_dir: str = "down"
    imbalance_remove: float = 0.0
    hrl: dict = field(default_factory=dict)  # CoTrainConfig overrides
    carl: dict = field(default_factory=dict)  # CarlConfig overrides


def build_env(name):
    from .envs import env_from_descriptor

    return env_from_descriptor(name)


def build_datasets(cfg: ExperimentConfig, seed: int):
    """Full dataset (filters applied) and the policy dataset restricted to train rooms."""
    env = build_env(cfg.env)
    ds = generate_dataset(env, cfg.episodes, cfg.noise, seed, cfg.data_horizon)
    if cfg.coverage_keep < 1.0:
        ds = filter_coverage(ds, cfg.coverage_region, cfg.coverage_keep, seed)
    if cfg.imbalance_remove > 0.0:
        ds = filter_imbalance(ds, cfg.coverage_region, cfg.imbalance_dir, cfg.imbalance_remove, seed)
    policy_ds = ds if cfg.train_rooms is None else restrict_to_rooms(ds, env, cfg.train_rooms)
    return env, ds, policy_ds


def make_hrl_config(cfg: ExperimentConfig):
    from .carl import CarlConfig
    from .hrl import CoTrainConfig

    overrides = dict(cfg.hrl)
    carl = CarlConfig(**{**cfg.carl, "horizon_k": overrides.get("horizon_k", cfg.carl.get("horizon_k", 3))})
    overrides.setdefault("horizon_k", carl.horizon_k)
    return CoTrainConfig(**overrides, carl=carl)


def train_cell(cfg: ExperimentConfig, seed: int):
    """Train one agent for ``cfg``; returns ``(env, agent, history)``."""
    env, ds, policy_ds = build_datasets(cfg, seed)
    hcfg = make_hrl_config(cfg)
    encoder = None
    if hcfg.mode == "pretrain":
        encoder = train_carl(ds, None, hcfg.carl, cfg.pretrain_steps, seed)
    agent, history = train_agent(policy_ds, hcfg, seed, cfg.steps, encoder=encoder, encoder_dataset=ds,
                                 discrete=getattr(env, "is_discrete", True))
    return env, agent, history


def run_cell(cfg: ExperimentConfig, seed: int) -> EvalReport:
    env, agent, _ = train_cell(cfg, seed)
    rooms = cfg.eval_rooms if cfg.eval_rooms is not None else list(range(env.num_rooms))
    return evaluate(agent, env, rooms, cfg.eval_episodes, seed, cfg.eval_horizon)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CARL_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def room_generalization(base: ExperimentConfig, train_rooms, test_rooms, seeds, methods=None) -> dict:
    """Rooms solved (success >= 90%) among ``test_rooms`` per method and seed.

    ``methods`` maps a name to CoTrainConfig overrides; defaults to co-trained
    CARL against the raw-input baseline.
    """
    train_rooms, test_rooms = [int(r) for r in train_rooms], [int(r) for r in test_rooms]
    if set(train_rooms) & set(test_rooms):
        raise ValueError("train and test rooms overlap")
    methods = methods or {"carl": {"mode": "cotrain"}, "baseline": {"mode": "none"}}
    out = {}
    for name, overrides in methods.items():
        cfg = ExperimentConfig(**{**asdict(base), "train_rooms": train_rooms, "eval_rooms": test_rooms,
                                  "hrl": {**base.hrl, **overrides}})
        reports = _map(lambda s, c=cfg: run_cell(c, s), list(seeds))
        out[name] = {"solved": [r.rooms_solved for r in reports], "reports": reports}
    return out


# -- representation probes ----------------------------------------------------------

def nearest_neighbors(model: CarlModel | None, reference, candidates, top_n: int = 30, bin_size: int | None = None,
                      embed=None):
    """Rank candidate (s, g) pairs by cosine similarity to ``reference``.

    ``candidates`` is ``(states, goals)``.  With ``bin_size`` the candidates
    are split into consecutive bins, the best match of each bin is kept, and
    the top ``top_n`` of those are returned.  Returns ``[(index, similarity)]``
    sorted by similarity, ties by index.
    """
    cs, cg = (np.asarray(x, dtype=np.float32) for x in candidates)
    if len(cs) == 0:
        raise ValueError("no candidates to rank")
    embed = embed or (lambda s, g: embed_state_goal(model, s, g))
    ref = embed(np.asarray(reference[0], np.float32)[None], np.asarray(reference[1], np.float32)[None])[0]
    emb = embed(cs, cg)
    sims = emb.astype(np.float64) @ ref.astype(np.float64)
    idx = np.arange(len(sims))
    if bin_size:
        keep = []
        for start in range(0, len(sims), bin_size):
            block = idx[start : start + bin_size]
            keep.append(block[np.lexsort((block, -sims[block]))[0]])
        idx = np.array(keep)
    order = idx[np.lexsort((idx, -sims[idx]))][:top_n]
    return [(int(i), float(sims[i])) for i in order]


def random_encoder(state_dim: int, embed_dim: int = 16, seed: int = 0, hidden=(64, 64, 64)):
    """Untrained phi for baseline comparisons; returns an embed(s, g) function."""
    from . import nn

    phi = nn.init_mlp([2 * state_dim, *hidden, embed_dim], seed)

    def embed(s, g):
        u = phi(np.concatenate([s, g], axis=1)).astype(np.float64)
        return (u / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-12)).astype(np.float32)

    return embed


@dataclass
class ClusterReport:
    labels: list
    within: dict  # label -> mean pairwise cosine within the class
    between: float
    margin: float
    mean_within: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def cardinal_pairs(env: GridRoomsEnv, distances=(1, 2), rooms=None):
    """(s, g, label) where g is s displaced by 1 or 2 cells in a cardinal direction inside the room."""
    rooms = range(env.num_rooms) if rooms is None else rooms
    S, G, L = [], [], []
    for r in rooms:
        for c in env.room_cells(r):
            for a, d in enumerate(ACTION_DELTAS):
                for n in distances:
                    g = c + n * d
                    if env.is_open(g)[0] and env.room_of(g)[0] == r:
                        S.append(c)
                        G.append(g)
                        L.append(ACTION_NAMES[a])
    return env.features(np.array(S)), env.features(np.array(G)), np.array(L)


def cluster_separation_embeddings(emb, labels) -> ClusterReport:
    """Within-class vs between-class mean cosine similarity of labelled embeddings."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    counts = {c: int(np.sum(labels == c)) for c in classes}
    if min(counts.values()) < 10:
        raise ValueError(f"every class needs >= 10 pairs, got {counts}")
    unit = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
    sims = unit @ unit.T
    within = {}
    for c in classes:
        m = labels == c
        block = sims[np.ix_(m, m)]
        n = m.sum()
        within[c] = float((block.sum() - np.trace(block)) / (n * (n - 1)))
    cross = labels[:, None] != labels[None, :]
    between = float(sims[cross].mean())
    mean_within = float(np.mean(list(within.values())))
    return ClusterReport(classes, within, between, mean_within - between, mean_within)


def cluster_separation(model: CarlModel, states, goals, labels, embed=None) -> ClusterReport:
    embed = embed or (lambda s, g: embed_state_goal(model, s, g))
    return cluster_separation_embeddings(embed(np.asarray(states), np.asarray(goals)), labels)


def export_embeddings(model: CarlModel | None, states, goals, labels, path, embed=None) -> None:
    """CSV: label, state fields, goal fields, embedding columns; floats in full repr precision."""
    states = np.asarray(states, dtype=np.float32).reshape(len(labels), -1) if len(labels) else np.zeros((0, 0))
    goals = np.asarray(goals, dtype=np.float32).reshape(len(labels), -1) if len(labels) else np.zeros((0, 0))
    sd = states.shape[1] if len(labels) else (model.state_dim if model is not None else 0)
    d = model.embed_dim if model is not None else 0
    if len(labels):
        embed = embed or (lambda s, g: embed_state_goal(model, s, g))
        emb = np.asarray(embed(states, goals), dtype=np.float32)
        d = emb.shape[1]
    header = ["label"] + [f"s{i}" for i in range(sd)] + [f"g{i}" for i in range(sd)] + [f"e{i}" for i in range(d)]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i, lab in enumerate(labels):
            vals = np.concatenate([states[i], goals[i], emb[i]])
            w.writerow([lab] + [repr(float(v)) for v in vals])


def read_embeddings(path):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    e_cols = [i for i, h in enumerate(header) if h.startswith("e")]
    emb = np.array([[float(r[i]) for i in e_cols] for r in body], dtype=np.float32).reshape(len(body), len(e_cols))
    return [r[0] for r in body], emb


# -- sweeps ------------------------------------------------------------------------

SWEEP_AXES = ("k", "coverage", "imbalance", "lambda_aux", "variant")


def _apply_axis(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    d = asdict(base)
    if axis == "k":
        d["hrl"] = {**d["hrl"], "horizon_k": int(value)}
        d["carl"] = {**d["carl"], "horizon_k": int(value)}
    elif axis == "coverage":
        d["coverage_keep"] = float(value)
    elif axis == "imbalance":
        d["imbalance_remove"] = float(value)
    elif axis == "lambda_aux":
        d["hrl"] = {**d["hrl"], "lambda_aux": float(value)}
    elif axis == "variant":
        d["carl"] = {**d["carl"], "variant": str(value)}
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return ExperimentConfig(**d)


def sweep(axis: str, values, base: ExperimentConfig, seeds, methods=None) -> list:
    """Train/evaluate every (method, value, seed) cell; one aggregate row per (method, value).

    Rows carry the per-seed mean success and the across-seed mean +- 95% CI.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    methods = methods or {"default": {}}
    cells = [(m, v, s) for m in methods for v in values for s in seeds]

    def run(cell):
        m, v, s = cell
        cfg = _apply_axis(base, axis, v)
        cfg.hrl = {**cfg.hrl, **methods[m]}
        return run_cell(cfg, s)

    reports = dict(zip(cells, _map(run, cells)))
    rows = []
    for m in methods:
        for v in values:
            per_seed = [reports[(m, v, s)].mean_success for s in seeds]
            mean, half = mean_ci(per_seed)
            rows.append({"method": m, "axis": axis, "value": v, "mean_success": mean, "ci95": half,
                         "per_seed": per_seed, "seeds": list(seeds)})
    return rows


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "axis", "value", "mean_success", "ci95", "per_seed"])
    for r in rows:
        w.writerow([r["method"], r["axis"], r["value"], repr(r["mean_success"]), repr(r["ci95"]),
                    ";".join(repr(x) for x in r["per_seed"])])
    return buf.getvalue()


def table_text(rows) -> str:
    head = ("method", "axis", "value", "success (mean +- 95% CI)")
    body = [(str(r["method"]), str(r["axis"]), str(r["value"]),
             f"{100 * r['mean_success']:.1f} +- {100 * r['ci95']:.1f}") for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*head), fmt.format(*("-" * w for w in widths))] + [fmt.format(*b) for b in body]) + "\n"
