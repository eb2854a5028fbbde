"""Contrastive state-goal / action-sequence encoders and their ablations."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .data import Dataset, SamplerConfig, SegmentBatch, sample_segments

VARIANTS = ("carl", "single_action_carl", "multi_action_prediction", "single_action_prediction")
VARIANT_ALIASES = {
    "carl": "carl",
    "sa-carl": "single_action_carl",
    "ma-pred": "multi_action_prediction",
    "sa-pred": "single_action_prediction",
}
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class CarlConfig:
    variant: str = "carl"
    horizon_k: int = 3
    tau: float = 0.1
    embed_dim: int = 16
    phi_hidden: tuple = (64, 64, 64)
    psi_hidden: tuple = (32, 32)
    xi_hidden: tuple = (64,)
    action_stride: int = 1
    goal_mode: str = "interior"
    batch_size: int = 256
    lr: float = 3e-4

    def __post_init__(self):
        object.__setattr__(self, "variant", VARIANT_ALIASES.get(self.variant, self.variant))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.horizon_k < 1:
            raise ValueError("horizon_k must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        for name in ("phi_hidden", "psi_hidden", "xi_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))

    @property
    def single_action(self) -> bool:
        return self.variant in ("single_action_carl", "single_action_prediction")

    @property
    def contrastive(self) -> bool:
        return self.variant in ("carl", "single_action_carl")

    def sampler(self, seed: int = 0) -> SamplerConfig:
        return SamplerConfig(self.horizon_k, self.goal_mode, self.action_stride, self.batch_size, seed)

    def action_input_dim(self, action_dim: int) -> int:
        if self.single_action:
            return action_dim
        return -(-self.horizon_k // self.action_stride) * action_dim


@dataclass
class CarlModel:
    config: CarlConfig
    state_dim: int
    action_dim: int
    phi: nn.Mlp
    psi: nn.Mlp | None = None
    xi: nn.Mlp | None = None
    history: list = field(default_factory=list)

    @property
    def tau(self) -> float:
        return self.config.tau

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def action_input(self, batch: SegmentBatch) -> np.ndarray:
        if self.config.single_action:
            return batch.actions[:, 0, :]
        return batch.flat_actions()


def init_carl(config: CarlConfig, state_dim: int, action_dim: int, seed: int, dtype=np.float32) -> CarlModel:
    ss = np.random.SeedSequence([int(seed), 7]).spawn(3)
    phi = nn.init_mlp([2 * state_dim, *config.phi_hidden, config.embed_dim], ss[0], dtype)
    psi = xi = None
    a_in = config.action_input_dim(action_dim)
    if config.contrastive:
        psi = nn.init_mlp([a_in, *config.psi_hidden, config.embed_dim], ss[1], dtype)
    else:
        xi = nn.init_mlp([config.embed_dim, *config.xi_hidden, a_in], ss[2], dtype)
    return CarlModel(config, state_dim, action_dim, phi, psi, xi)


# -- score and loss -------------------------------------------------------------

def score(u, v) -> float:
    """Cosine similarity of two embeddings."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        raise FloatingPointError("cannot score a zero-norm embedding")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def normalize_rows(x):
    """L2-normalise rows; returns ``(unit rows, norms)`` with norms floored at 1e-12."""
    norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_FLOOR)
    return x / norms, norms


def normalize_backward(unit, norms, grad_unit):
    """Gradient through ``x / ||x||`` given the upstream gradient on the unit vector."""
    return (grad_unit - unit * np.sum(unit * grad_unit, axis=1, keepdims=True)) / norms


def infonce_from_embeddings(u, v, tau: float):
    """Row-wise InfoNCE on raw embeddings ``u`` (state-goal) and ``v`` (actions).

    Returns ``(loss, dloss/du, dloss/dv, per_row_losses)``.
    """
    if len(u) == 0:
        raise ValueError("batch must contain at least one segment")
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    uh, un = normalize_rows(u64)
    vh, vn = normalize_rows(v64)
    logits = uh @ vh.T / tau
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    rows = (m[:, 0] + np.log(z[:, 0])) - np.diag(logits)
    b = len(u64)
    loss = float(rows.mean())
    dlogits = e / z
    dlogits[np.arange(b), np.arange(b)] -= 1.0
    dlogits /= b * tau
    du = normalize_backward(uh, un, dlogits @ vh)
    dv = normalize_backward(vh, vn, dlogits.T @ uh)
    return loss, du.astype(u.dtype), dv.astype(v.dtype), rows


def _phi_inputs(s, g):
    return np.concatenate([np.asarray(s), np.asarray(g)], axis=1)


def infonce_loss(model: CarlModel, states, goals, action_inputs):
    """Loss and gradients ``{'phi': Grad, 'psi': Grad}`` for one batch."""
    u, cu = model.phi.forward(_phi_inputs(states, goals))
    v, cv = model.psi.forward(action_inputs)
    loss, du, dv, _ = infonce_from_embeddings(u, v, model.tau)
    gphi, _ = model.phi.backward(cu, du)
    gpsi, _ = model.psi.backward(cv, dv)
    return loss, {"phi": gphi, "psi": gpsi}


def prediction_loss(model: CarlModel, states, goals, targets):
    """Mean (over batch) squared error between xi(phi(s, g)) and ``targets``.

    The head reads the raw encoder output; only the contrastive score normalises.
    """
    u, cu = model.phi.forward(_phi_inputs(states, goals))
    pred, cx = model.xi.forward(u)
    diff = pred.astype(np.float64) - np.asarray(targets, dtype=np.float64)
    b = len(diff)
    loss = float(np.sum(diff * diff) / b)
    dpred = (2.0 * diff / b).astype(model.phi.dtype)
    gxi, du = model.xi.backward(cx, dpred, need_input_grad=True)
    gphi, _ = model.phi.backward(cu, du)
    return loss, {"phi": gphi, "xi": gxi}


def ablation_loss(model: CarlModel, batch: SegmentBatch):
    """Loss for the model's variant on a segment batch."""
    if len(batch) == 0:
        raise ValueError("batch must contain at least one segment")
    targets = model.action_input(batch)
    if model.config.contrastive:
        return infonce_loss(model, batch.states, batch.goals, targets)
    return prediction_loss(model, batch.states, batch.goals, targets)


# -- training -------------------------------------------------------------------

class CarlTrainer:
    """Holds optimizer state so representation steps can be interleaved with other training."""

    def __init__(self, model: CarlModel, lr: float | None = None):
        self.model = model
        lr = model.config.lr if lr is None else lr
        self.opts = {name: nn.AdamState.for_mlp(net, lr) for name, net in self._nets().items()}

    def _nets(self) -> dict:
        m = self.model
        return {k: v for k, v in (("phi", m.phi), ("psi", m.psi), ("xi", m.xi)) if v is not None}

    def step(self, batch: SegmentBatch, weight: float = 1.0) -> float:
        loss, grads = ablation_loss(self.model, batch)
        if weight != 0.0:
            nets = self._nets()
            for name, g in grads.items():
                nn.adam_step(nets[name], g.scale(weight) if weight != 1.0 else g, self.opts[name])
        return loss


def train_carl(dataset: Dataset, sampler_cfg: SamplerConfig | None, model_cfg: CarlConfig, steps: int, seed: int,
               log_every: int = 100) -> CarlModel:
    """Standalone representation training; loss records land in ``model.history``."""
    sampler_cfg = sampler_cfg or model_cfg.sampler(seed)
    model = init_carl(model_cfg, dataset.state_dim, dataset.action_dim, seed)
    if steps <= 0:
        return model
    trainer = CarlTrainer(model)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    for step in range(steps):
        batch = sample_segments(dataset, sampler_cfg, rng)
        loss = trainer.step(batch)
        if step % log_every == 0 or step == steps - 1:
            model.history.append({"step": step, "loss": loss})
    return model


def embed_state_goal(model: CarlModel, s, g) -> np.ndarray:
    """Unit-norm phi(s, g) for one pair or a batch of pairs."""
    s = np.asarray(s, dtype=np.float32)
    g = np.asarray(g, dtype=np.float32)
    single = s.ndim == 1
    u = model.phi(_phi_inputs(s.reshape(-1, model.state_dim), g.reshape(-1, model.state_dim)))
    norms = np.linalg.norm(u.astype(np.float64), axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise FloatingPointError("encoder produced a zero-norm embedding")
    out = (u / norms).astype(np.float32)
    return out[0] if single else out


def evaluate_infonce(model: CarlModel, dataset: Dataset, batches: int = 8, seed: int = 12345) -> float:
    """Mean variant loss over fixed held-out batches (no updates)."""
    rng = np.random.default_rng(seed)
    cfg = model.config.sampler(seed)
    return float(np.mean([ablation_loss(model, sample_segments(dataset, cfg, rng))[0] for _ in range(batches)]))


# -- checkpoints -------------------------------------------------------------------

def save_carl(model: CarlModel, path) -> None:
    """Directory checkpoint: one CARLNN1 file per network plus ``meta.json``."""
    os.makedirs(path, exist_ok=True)
    nets = {"phi": model.phi, "psi": model.psi, "xi": model.xi}
    for name, net in nets.items():
        if net is not None:
            nn.save_mlp(net, os.path.join(path, f"{name}.carlnn"))
    cfg = asdict(model.config)
    meta = {
        "tau": model.config.tau,
        "k": model.config.horizon_k,
        "d": model.config.embed_dim,
        "variant": model.config.variant,
        "stride": model.config.action_stride,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "networks": [n for n, v in nets.items() if v is not None],
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_carl(path) -> CarlModel:
    with open(os.path.join(path, "meta.json"), encoding="utf-8") as f:
        meta = json.load(f)
    cfg = CarlConfig(**meta["config"])
    nets = {n: nn.load_mlp(os.path.join(path, f"{n}.carlnn")) for n in meta["networks"]}
    return CarlModel(cfg, meta["state_dim"], meta["action_dim"], nets["phi"], nets.get("psi"), nets.get("xi"))
