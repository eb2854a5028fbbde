"""Small numpy MLP engine: GELU hidden layers, reverse-mode gradients, Adam.

Networks are plain lists of weight/bias arrays.  ``forward`` returns the
output together with a cache that ``backward`` consumes; the cache is tied to
the parameter version it was computed with so a stale cache is rejected.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

NN_MAGIC = b"CARLNN1\x00"

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


class CacheError(RuntimeError):
    """A forward cache was used with a network it does not belong to."""


def _gelu_tanh(x):
    x2 = x * x
    return np.tanh(x * (_GELU_C + (_GELU_C * _GELU_A) * x2))


def gelu(x, t=None):
    """Tanh-approximated GELU; ``t`` is an optional precomputed inner tanh."""
    t = _gelu_tanh(x) if t is None else t
    return 0.5 * x * (1.0 + t)


def gelu_grad(x, t=None):
    t = _gelu_tanh(x) if t is None else t
    return 0.5 * (1.0 + t) + (0.5 * x) * (1.0 - t * t) * (_GELU_C + (3.0 * _GELU_C * _GELU_A) * (x * x))


@dataclass
class Grad:
    """Per-parameter gradient buffers, laid out like ``Mlp.params``."""

    arrays: list

    def scale(self, c: float) -> "Grad":
        return Grad([a * a.dtype.type(c) for a in self.arrays])

    def __add__(self, other: "Grad") -> "Grad":
        return Grad([a + b for a, b in zip(self.arrays, other.arrays)])

    def is_zero(self) -> bool:
        return all(not np.any(a) for a in self.arrays)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list  # input to each layer
    pre: list  # pre-activation of each hidden layer
    tanh: list  # inner tanh of each hidden layer, reused by backward


class Mlp:
    """Affine layers with GELU between them and an identity output layer."""

    def __init__(self, widths, params, dtype=np.float32):
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)
        self.params = [np.asarray(p, dtype=self.dtype) for p in params]
        self.version = 0
        if len(self.params) != 2 * (len(self.widths) - 1):
            raise ValueError("parameter list does not match widths")
        for i, (w_in, w_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if self.params[2 * i].shape != (w_in, w_out) or self.params[2 * i + 1].shape != (w_out,):
                raise ValueError(f"layer {i} parameter shape mismatch")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [p.copy() for p in self.params], self.dtype)

    def zero_grad(self) -> Grad:
        return Grad([np.zeros_like(p) for p in self.params])

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        inputs, pre, tanhs = [], [], []
        h = x
        for i in range(self.num_layers):
            inputs.append(h)
            a = h @ self.params[2 * i]
            a += self.params[2 * i + 1]
            if i < self.num_layers - 1:
                t = _gelu_tanh(a)
                pre.append(a)
                tanhs.append(t)
                h = gelu(a, t)
            else:
                h = a
        return h, ForwardCache(id(self), self.version, inputs, pre, tanhs)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, grad_out, need_input_grad: bool = False):
        """Return ``(Grad, dL/dinput or None)`` for the upstream gradient ``grad_out``."""
        if cache.net_id != id(self) or cache.version != self.version:
            raise CacheError("forward cache is stale or belongs to a different network")
        g = np.asarray(grad_out, dtype=self.dtype)
        grads = [None] * len(self.params)
        for i in reversed(range(self.num_layers)):
            if i < self.num_layers - 1:
                g = g * gelu_grad(cache.pre[i], cache.tanh[i])
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0, dtype=np.float64).astype(self.dtype)
            if i > 0 or need_input_grad:
                g = g @ self.params[2 * i].T
        return Grad(grads), (g if need_input_grad else None)


def init_mlp(widths, seed, dtype=np.float32) -> Mlp:
    """Fan-in scaled uniform weights (variance 1/fan_in), zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("an MLP needs at least two widths")
    if min(widths) < 1:
        raise ValueError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    params = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(3.0 / w_in)
        params.append(rng.uniform(-bound, bound, size=(w_in, w_out)).astype(dtype))
        params.append(np.zeros(w_out, dtype=dtype))
    return Mlp(widths, params, dtype)


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_mlp(cls, mlp: Mlp, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls([np.zeros_like(p) for p in mlp.params], [np.zeros_like(p) for p in mlp.params], lr, beta1, beta2, eps)


def adam_step(mlp: Mlp, grad: Grad, state: AdamState) -> tuple[Mlp, AdamState]:
    """Bias-corrected Adam update, applied in place."""
    for i, g in enumerate(grad.arrays):
        if g.shape != mlp.params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {mlp.params[i].shape}")
        if not np.all(np.isfinite(g)):
            kind = "weight" if i % 2 == 0 else "bias"
            raise FloatingPointError(f"non-finite gradient in layer {i // 2} {kind}")
    state.step += 1
    t = state.step
    dt = mlp.dtype.type
    b1, b2 = dt(state.beta1), dt(state.beta2)
    c1 = dt(1.0 - state.beta1**t)
    c2 = dt(1.0 - state.beta2**t)
    lr, eps = dt(state.lr), dt(state.eps)
    for i, g in enumerate(grad.arrays):
        state.m[i] = b1 * state.m[i] + (dt(1) - b1) * g
        state.v[i] = b2 * state.v[i] + (dt(1) - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        mlp.params[i] = mlp.params[i] - lr * m_hat / (np.sqrt(v_hat) + eps)
    mlp.version += 1
    return mlp, state


def polyak_update(target: Mlp, source: Mlp, rate: float) -> None:
    for i, p in enumerate(source.params):
        target.params[i] = (1.0 - rate) * target.params[i] + rate * p
    target.version += 1


def numerical_grad(mlp: Mlp, loss_fn, h: float = 1e-4) -> Grad:
    """Central finite differences of ``loss_fn(mlp)`` for every parameter."""
    out = []
    for i, p in enumerate(mlp.params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            mlp.version += 1
            up = loss_fn(mlp)
            flat[j] = orig - h
            mlp.version += 1
            down = loss_fn(mlp)
            flat[j] = orig
            mlp.version += 1
            gflat[j] = (up - down) / (2.0 * h)
        out.append(g)
    return Grad(out)


def max_relative_error(a: Grad, b: Grad, floor: float = 1e-8) -> float:
    worst = 0.0
    for x, y in zip(a.arrays, b.arrays):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


# -- checkpoints -------------------------------------------------------------

def mlp_to_bytes(mlp: Mlp) -> bytes:
    buf = io.BytesIO()
    buf.write(NN_MAGIC)
    buf.write(struct.pack("<I", len(mlp.widths)))
    buf.write(struct.pack(f"<{len(mlp.widths)}I", *mlp.widths))
    for p in mlp.params:
        buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return buf.getvalue()


def mlp_from_bytes(data: bytes) -> Mlp:
    if data[:8] != NN_MAGIC:
        raise ValueError("not a CARLNN1 checkpoint")
    (n,) = struct.unpack_from("<I", data, 8)
    widths = struct.unpack_from(f"<{n}I", data, 12)
    offset = 12 + 4 * n
    params = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        for shape in ((w_in, w_out), (w_out,)):
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
            params.append(arr.astype(np.float32))
            offset += 4 * count
    if offset != len(data):
        raise ValueError("trailing bytes in CARLNN1 checkpoint")
    return Mlp(widths, params, np.float32)


def save_mlp(mlp: Mlp, path) -> None:
    with open(path, "wb") as f:
        f.write(mlp_to_bytes(mlp))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as f:
        return mlp_from_bytes(f.read())


@dataclass
class Trainable:
    """An MLP bundled with its optimizer state."""

    net: Mlp
    opt: AdamState = field(default=None)

    def __post_init__(self):
        if self.opt is None:
            self.opt = AdamState.for_mlp(self.net)
