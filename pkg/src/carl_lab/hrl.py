"""HIQL-lite and HGCBC hierarchies that consume (and optionally co-train) a CARL encoder.

The value is V(s, rep(s, g)); the high-level policy regresses the subgoal
representation z* = rep(s_t, s_{t+k}) from (s, g); the low-level policy picks
actions from (s, z).  ``rep`` is the unit-norm CARL embedding, or the raw
concatenation (s, g) when no encoder is used.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .carl import CarlConfig, CarlModel, CarlTrainer, init_carl, load_carl, normalize_backward, normalize_rows, save_carl
from .data import Dataset, gather_segments, sample_segments

ALGOS = ("hiql", "hgcbc")
MODES = ("cotrain", "pretrain", "none")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class CoTrainConfig:
    algo: str = "hiql"
    mode: str = "cotrain"
    lambda_aux: float = 0.3
    gamma: float = 0.99
    kappa: float = 0.7
    beta: float = 3.0
    horizon_k: int = 3  # subgoal step; equal to the representation horizon
    hidden: tuple = (64, 64, 64)
    batch_size: int = 256
    lr: float = 3e-4
    w_max: float = 100.0
    state_input: bool = True  # feed raw s to V / pi_l and (s, g) to pi_h
    encoder_grad_flow: bool = False  # let value / low-level gradients reach phi
    target_tau: float = 0.0  # Polyak rate for a target value net; 0 disables it
    goal_probs: tuple = (0.5, 0.25, 0.25)  # future (geometric), trajectory end, random
    success_radius: float = 1e-6  # in feature units
    carl: CarlConfig = field(default_factory=CarlConfig)

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 <= self.lambda_aux <= 1.0:
            raise ValueError("lambda_aux must lie in [0, 1]")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.horizon_k < 1:
            raise ValueError("horizon_k must be >= 1")
        if abs(sum(self.goal_probs) - 1.0) > 1e-9:
            raise ValueError("goal_probs must sum to 1")
        if isinstance(self.carl, dict):
            object.__setattr__(self, "carl", CarlConfig(**self.carl))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "goal_probs", tuple(float(p) for p in self.goal_probs))
        if self.carl.horizon_k != self.horizon_k:
            object.__setattr__(self, "carl", replace(self.carl, horizon_k=self.horizon_k))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["carl"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["carl"].items()}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# -- elementary losses -----------------------------------------------------------

def goal_reward(success) -> np.ndarray:
    """Sparse reward: 0 on success, -1 otherwise."""
    return np.where(np.asarray(success, dtype=bool), 0.0, -1.0)


def expectile_loss(u, kappa: float):
    """Mean of |kappa - 1{u < 0}| u^2 and its gradient with respect to ``u``."""
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    u = np.asarray(u, dtype=np.float64)
    w = np.where(u < 0.0, 1.0 - kappa, kappa)
    return float(np.mean(w * u * u)), 2.0 * w * u / u.size


def awr_weight(advantage, beta: float, w_max: float = 100.0):
    """exp(A / beta), clipped at ``w_max``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = np.asarray(advantage, dtype=np.float64)
    return np.minimum(np.exp(np.minimum(a / beta, np.log(w_max))), w_max)


def weighted_categorical_nll(logits, actions, weights):
    """Mean of -w log softmax(logits)[a] and its gradient with respect to ``logits``."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = len(z)
    rows = np.arange(b)
    loss = float(-np.mean(weights * logp[rows, actions]))
    grad = np.exp(logp)
    grad[rows, actions] -= 1.0
    return loss, grad * (weights / b)[:, None]


def weighted_gaussian_nll(mean, target, weights):
    """Unit-variance Gaussian regression: mean of w * 0.5 ||mean - target||^2."""
    diff = np.asarray(mean, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    b = len(diff)
    loss = float(np.mean(weights * 0.5 * np.sum(diff * diff, axis=1)))
    return loss, diff * (weights / b)[:, None]


# -- agent -------------------------------------------------------------------------

@dataclass
class HrlAgent:
    config: CoTrainConfig
    state_dim: int
    action_dim: int
    discrete: bool
    value: nn.Mlp
    high: nn.Mlp
    low: nn.Mlp
    encoder: CarlModel | None = None
    target_value: nn.Mlp | None = None
    opts: dict = field(default_factory=dict)

    @property
    def rep_dim(self) -> int:
        return self.encoder.embed_dim if self.encoder is not None else 2 * self.state_dim

    def rep(self, s, g, with_cache: bool = False):
        """Goal representation; unit-norm phi(s, g) or raw concat(s, g)."""
        x = np.concatenate([s, g], axis=1).astype(np.float32)
        if self.encoder is None:
            return (x, None) if with_cache else x
        u, cache = self.encoder.phi.forward(x)
        uh, norms = normalize_rows(u.astype(np.float64))
        uh = uh.astype(np.float32)
        return (uh, (cache, uh, norms)) if with_cache else uh

    def value_input(self, s, rep):
        return np.concatenate([s, rep], axis=1) if self.config.state_input else rep

    def high_input(self, s, g, rep):
        return np.concatenate([s, g], axis=1) if self.config.state_input else rep

    def low_input(self, s, z):
        return np.concatenate([s, z], axis=1) if self.config.state_input else z


def init_agent(cfg: CoTrainConfig, state_dim: int, action_dim: int, discrete: bool, seed: int,
               encoder: CarlModel | None = None) -> HrlAgent:
    ss = np.random.SeedSequence([int(seed), 23]).spawn(4)
    if cfg.mode == "none":
        encoder = None
    elif encoder is None:
        if cfg.mode == "pretrain":
            raise ConfigurationError("pretrain mode needs a trained encoder checkpoint")
        encoder = init_carl(cfg.carl, state_dim, action_dim, int(ss[3].generate_state(1)[0]))
    rep_dim = encoder.embed_dim if encoder is not None else 2 * state_dim
    s_in = state_dim if cfg.state_input else 0
    high_in = 2 * state_dim if cfg.state_input else rep_dim
    value = nn.init_mlp([s_in + rep_dim, *cfg.hidden, 1], ss[0])
    high = nn.init_mlp([high_in, *cfg.hidden, rep_dim], ss[1])
    low = nn.init_mlp([s_in + rep_dim, *cfg.hidden, action_dim], ss[2])
    agent = HrlAgent(cfg, state_dim, action_dim, discrete, value, high, low, encoder)
    if cfg.target_tau > 0:
        agent.target_value = value.copy()
    agent.opts = {name: nn.AdamState.for_mlp(getattr(agent, name), cfg.lr) for name in ("value", "high", "low")}
    return agent


@dataclass
class HrlBatch:
    s: np.ndarray
    s_next: np.ndarray
    action: np.ndarray  # one-hot / continuous encoding
    goal: np.ndarray
    sub: np.ndarray  # low-level subgoal s_{min(t+k, T)}
    high_target: np.ndarray  # s at the high-level target index
    path: np.ndarray  # (B, k + 1, sd) states from t to the high target, clamped
    high_steps: np.ndarray  # number of steps from t to the high target


def sample_hrl_batch(ds: Dataset, cfg: CoTrainConfig, rng: np.random.Generator) -> HrlBatch:
    """Transitions with hindsight goals and the subgoal indices HIQL needs."""
    b, k = cfg.batch_size, cfg.horizon_k
    idx = rng.integers(ds.num_transitions, size=b)
    traj = ds.transition_traj[idx]
    t = ds.transition_t[idx]
    T = ds.lengths[traj]
    base = ds.state_offsets[traj]
    u = rng.random(b)
    p_future, p_final, _ = cfg.goal_probs
    offset = rng.geometric(1.0 - cfg.gamma, size=b)
    goal_t = np.where(u < p_future, np.minimum(t + offset, T), T)
    is_random = u >= p_future + p_final
    goal_global = np.where(is_random, rng.integers(len(ds.states), size=b), base + goal_t)
    high_t = np.where(is_random, np.minimum(t + k, T), np.minimum(t + k, goal_t))
    sub_t = np.minimum(t + k, T)
    steps = np.arange(k + 1)
    path_idx = base[:, None] + np.minimum(t[:, None] + steps[None, :], high_t[:, None])
    return HrlBatch(
        s=ds.states[base + t],
        s_next=ds.states[base + t + 1],
        action=ds.actions[ds.action_offsets[traj] + t],
        goal=ds.states[goal_global],
        sub=ds.states[base + sub_t],
        high_target=ds.states[base + high_t],
        path=ds.states[path_idx],
        high_steps=high_t - t,
    )


def _success(a, b, radius: float) -> np.ndarray:
    return np.linalg.norm(np.asarray(a, np.float64) - np.asarray(b, np.float64), axis=-1) <= radius


def _split(x, n):
    return np.split(x, n)


def expectile_value_loss(agent: HrlAgent, s, s_next, g, rep_sg=None, rep_next=None):
    """IQL-style expectile regression of V toward r + gamma (1 - done) V(s', g).

    Returns ``(loss, Grad for the value net, dL/dV(s, g) per row)``; the target
    is treated as a constant.
    """
    cfg = agent.config
    rep_sg = agent.rep(s, g) if rep_sg is None else rep_sg
    rep_next = agent.rep(s_next, g) if rep_next is None else rep_next
    done = _success(s, g, cfg.success_radius)
    r = goal_reward(done)
    target_net = agent.target_value if agent.target_value is not None else agent.value
    v_next = target_net(agent.value_input(s_next, rep_next))[:, 0].astype(np.float64)
    y = r + cfg.gamma * (1.0 - done) * v_next
    v, cache = agent.value.forward(agent.value_input(s, rep_sg))
    u = y - v[:, 0].astype(np.float64)
    loss, dldu = expectile_loss(u, cfg.kappa)
    dv = -dldu
    grad, dinput = agent.value.backward(cache, dv[:, None], need_input_grad=cfg.encoder_grad_flow)
    return loss, grad, dinput


def _advantages(agent: HrlAgent, batch: HrlBatch, reps: dict):
    cfg = agent.config
    b, k = len(batch.s), cfg.horizon_k
    V = lambda s, rep: agent.value(agent.value_input(s, rep))[:, 0].astype(np.float64)  # noqa: E731
    v_sg = V(batch.s, reps["s_g"])
    # high level: rewards along the path to the high target, then bootstrap
    done = np.stack([_success(batch.path[:, i], batch.goal, cfg.success_radius) for i in range(k + 1)], axis=1)
    alive = np.concatenate([np.ones((b, 1)), np.cumprod(1.0 - done[:, :-1], axis=1)], axis=1)
    disc = cfg.gamma ** np.arange(k + 1)
    in_range = np.arange(k + 1)[None, :] < batch.high_steps[:, None]
    ret = np.sum(in_range * disc * alive * goal_reward(done), axis=1)
    m = batch.high_steps
    boot = (cfg.gamma**m) * alive[np.arange(b), m] * (1.0 - done[np.arange(b), m]) * V(batch.high_target, reps["hi_g"])
    adv_high = ret + boot - v_sg
    # low level: one step toward the subgoal
    done0 = _success(batch.s, batch.sub, cfg.success_radius)
    adv_low = goal_reward(done0) + cfg.gamma * (1.0 - done0) * V(batch.s_next, reps["next_sub"]) - V(batch.s, reps["s_sub"])
    return adv_high, adv_low


def cotrain_step(agent: HrlAgent, enc_trainer: CarlTrainer | None, batch: HrlBatch, seg_batch=None) -> dict:
    """One joint update of encoder, value, high and low policies.

    Total loss is (1 - lambda)(value + high + low) + lambda * InfoNCE; the
    encoder sees only the InfoNCE term unless ``encoder_grad_flow`` is set.
    """
    cfg = agent.config
    lam = cfg.lambda_aux
    rec = {}
    if cfg.mode == "cotrain":
        if enc_trainer is None or seg_batch is None:
            raise ValueError("cotrain mode needs an encoder trainer and a segment batch")
        rec["aux"] = enc_trainer.step(seg_batch, weight=lam)
    agent_w = 1.0 - lam if cfg.mode == "cotrain" else 1.0

    s, g = batch.s, batch.goal
    pairs = {
        "s_g": (s, g),
        "next_g": (batch.s_next, g),
        "hi_g": (batch.high_target, g),
        "s_hi": (s, batch.high_target),
        "s_sub": (s, batch.sub),
        "next_sub": (batch.s_next, batch.sub),
    }
    names = list(pairs)
    flow = cfg.encoder_grad_flow and cfg.mode == "cotrain"
    stacked_s = np.concatenate([pairs[n][0] for n in names])
    stacked_g = np.concatenate([pairs[n][1] for n in names])
    rep_all, enc_cache = agent.rep(stacked_s, stacked_g, with_cache=True)
    reps = dict(zip(names, _split(rep_all, len(names))))
    d_rep = {n: None for n in names}

    grads = {}
    if cfg.algo == "hiql":
        rec["value"], grads["value"], dvin = expectile_value_loss(agent, s, batch.s_next, g, reps["s_g"], reps["next_g"])
        if flow:
            d_rep["s_g"] = dvin[:, -agent.rep_dim :]
        adv_high, adv_low = _advantages(agent, batch, reps)
        w_high = awr_weight(adv_high, cfg.beta, cfg.w_max)
        w_low = awr_weight(adv_low, cfg.beta, cfg.w_max)
    else:
        w_high = w_low = np.ones(len(s))

    z_star = reps["s_hi"]
    pred, hcache = agent.high.forward(agent.high_input(s, g, reps["s_g"]))
    rec["high"], dpred = weighted_gaussian_nll(pred, z_star, w_high)
    grads["high"], _ = agent.high.backward(hcache, dpred)

    z_low = reps["s_sub"]
    out, lcache = agent.low.forward(agent.low_input(s, z_low))
    if agent.discrete:
        rec["low"], dout = weighted_categorical_nll(out, np.argmax(batch.action, axis=1), w_low)
    else:
        rec["low"], dout = weighted_gaussian_nll(out, batch.action, w_low)
    grads["low"], dlin = agent.low.backward(lcache, dout, need_input_grad=flow)
    if flow:
        d_rep["s_sub"] = dlin[:, -agent.rep_dim :]

    if agent_w != 0.0:
        for name, gr in grads.items():
            nn.adam_step(getattr(agent, name), gr.scale(agent_w) if agent_w != 1.0 else gr, agent.opts[name])
        if agent.target_value is not None:
            nn.polyak_update(agent.target_value, agent.value, cfg.target_tau)

    if flow and agent_w != 0.0:
        cache, uh, norms = enc_cache
        drep = np.concatenate([d_rep[n] if d_rep[n] is not None else np.zeros_like(reps[n]) for n in names])
        du = normalize_backward(uh.astype(np.float64), norms, drep.astype(np.float64) * agent_w)
        gphi, _ = agent.encoder.phi.backward(cache, du.astype(np.float32))
        nn.adam_step(agent.encoder.phi, gphi, enc_trainer.opts["phi"])
    rec["w_high_mean"] = float(np.mean(w_high))
    rec["w_low_mean"] = float(np.mean(w_low))
    return rec


def train_agent(dataset: Dataset, cfg: CoTrainConfig, seed: int, steps: int, encoder: CarlModel | None = None,
                encoder_dataset: Dataset | None = None, discrete: bool = True, log_every: int = 100):
    """Train a hierarchy; returns ``(agent, history)``.

    ``cotrain`` trains a fresh (or given) encoder alongside the agent, drawing
    contrastive segments from ``encoder_dataset`` (default: ``dataset``).
    ``pretrain`` freezes the given encoder.  ``none`` uses raw (s, g).
    """
    if cfg.mode == "pretrain" and encoder is None:
        raise ConfigurationError("pretrain mode needs a trained encoder checkpoint")
    agent = init_agent(cfg, dataset.state_dim, dataset.action_dim, discrete, seed, encoder)
    enc_trainer = None
    enc_ds = encoder_dataset if encoder_dataset is not None else dataset
    if cfg.mode == "cotrain":
        enc_trainer = CarlTrainer(agent.encoder, cfg.carl.lr)
    # separate streams so the agent's batches do not depend on the mode
    agent_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 31]))
    enc_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 37]))
    seg_cfg = cfg.carl.sampler(seed)
    history = []
    for step in range(steps):
        seg = sample_segments(enc_ds, seg_cfg, enc_rng) if cfg.mode == "cotrain" else None
        batch = sample_hrl_batch(dataset, cfg, agent_rng)
        rec = cotrain_step(agent, enc_trainer, batch, seg)
        if step % log_every == 0 or step == steps - 1:
            history.append({"step": step, **rec})
    return agent, history


def act(agent: HrlAgent, s, g) -> np.ndarray:
    """Greedy hierarchical action: z = pi_h(s, g), a = argmax pi_l(s, z).

    Works on one state/goal pair or on batches.
    """
    s = np.asarray(s, dtype=np.float32)
    g = np.asarray(g, dtype=np.float32)
    single = s.ndim == 1
    s2, g2 = s.reshape(-1, agent.state_dim), g.reshape(-1, agent.state_dim)
    rep = agent.rep(s2, g2)
    z = agent.high(agent.high_input(s2, g2, rep))
    out = agent.low(agent.low_input(s2, z))
    a = np.argmax(out, axis=1) if agent.discrete else out
    return a[0] if single else a


# -- checkpoints -------------------------------------------------------------------

def save_agent(agent: HrlAgent, path) -> None:
    os.makedirs(path, exist_ok=True)
    for name in ("value", "high", "low"):
        nn.save_mlp(getattr(agent, name), os.path.join(path, f"{name}.carlnn"))
    if agent.encoder is not None:
        save_carl(agent.encoder, os.path.join(path, "encoder"))
    meta = {
        "config": agent.config.to_dict(),
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "discrete": agent.discrete,
        "has_encoder": agent.encoder is not None,
    }
    with open(os.path.join(path, "agent.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def config_from_dict(d: dict) -> CoTrainConfig:
    d = dict(d)
    d["carl"] = CarlConfig(**d.get("carl", {}))
    return CoTrainConfig(**d)


def load_agent(path) -> HrlAgent:
    with open(os.path.join(path, "agent.json"), encoding="utf-8") as f:
        meta = json.load(f)
    cfg = config_from_dict(meta["config"])
    encoder = load_carl(os.path.join(path, "encoder")) if meta["has_encoder"] else None
    nets = {n: nn.load_mlp(os.path.join(path, f"{n}.carlnn")) for n in ("value", "high", "low")}
    agent = HrlAgent(cfg, meta["state_dim"], meta["action_dim"], meta["discrete"], nets["value"], nets["high"],
                     nets["low"], encoder)
    agent.opts = {name: nn.AdamState.for_mlp(getattr(agent, name), cfg.lr) for name in ("value", "high", "low")}
    return agent
