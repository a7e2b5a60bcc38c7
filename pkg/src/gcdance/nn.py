"""Small layer library on top of :mod:`gcdance.autograd`."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import ParameterStore, Tensor


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True, scale: float = 1.0,
                 bias_init: float = 0.0):
        std = scale / math.sqrt(d_in)
        self.W = store.add(f"{name}.W", rng.standard_normal((d_in, d_out)) * std)
        self.b = store.add(f"{name}.b", np.full(d_out, bias_init)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x) -> Tensor:
        y = ag.matmul(x, self.W)
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, width: int):
        self.g = store.add(f"{name}.g", np.ones(width))
        self.b = store.add(f"{name}.b", np.zeros(width))

    def __call__(self, x) -> Tensor:
        return ag.layer_norm(x) * self.g + self.b


class MLP:
    """Two linear layers with a GELU in between."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", d_in, d_hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d_out, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiHeadAttention:
    def __init__(self, store: ParameterStore, name: str, width: int, heads: int,
                 rng: np.random.Generator, d_kv: int | None = None):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        d_kv = d_kv or width
        self.heads = heads
        self.width = width
        self.q = Linear(store, f"{name}.q", width, width, rng)
        self.k = Linear(store, f"{name}.k", d_kv, width, rng)
        self.v = Linear(store, f"{name}.v", d_kv, width, rng)
        self.o = Linear(store, f"{name}.o", width, width, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.width // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x, memory=None) -> Tensor:
        memory = x if memory is None else memory
        b, n, _ = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(memory)), self._split(self.v(memory))
        h = ag.attention(q, k, v)
        return self.o(h.transpose(0, 2, 1, 3).reshape(b, n, self.width))


def sinusoidal_embedding(positions: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard sin/cos embedding of integer (or real) positions -> (..., dim)."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = positions[..., None] * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,))], axis=-1)
    return emb


class Adam:
    """Adaptive-moment optimizer over a flat parameter vector."""

    def __init__(self, size: int, lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}

    def load_state(self, state: dict) -> None:
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.t = int(state["t"])
