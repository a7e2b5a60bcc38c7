"""Two-stream FiLM-conditioned transformer denoiser (x0 prediction).

The body stream sees the 24 body joints plus root translation and contacts;
the hand stream sees the 28 finger joints and additionally cross-attends to
the body stream's final features.  Music enters through cross-attention on
adapter-projected features; genre and timestep enter only through FiLM.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParameterStore, Tensor
from .conditioning import EMBED_DIM, FiLMLayer, TextAdapter
from .motion import Skeleton
from .nn import MLP, LayerNorm, Linear, MultiHeadAttention, sinusoidal_embedding


class DenoiserError(FloatingPointError):
    pass


@dataclass
class DenoiserConfig:
    width: int = 128
    heads: int = 4
    layers: int = 2
    music_dim: int = 513
    embed_dim: int = EMBED_DIM
    mlp_ratio: int = 2
    body_dim: int = 151
    hand_dim: int = 168

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


def body_hand_indices(skel: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Frame-vector indices of the body part and the hand part."""
    if skel.frame_dim != 319 or "hands" not in skel.groups or "body" not in skel.groups:
        raise ValueError(f"body/hand split is defined for the 52-joint preset, not {skel.name!r}")
    hand_j, body_j = skel.group("hands"), skel.group("body")
    body = [j * 6 + c for j in body_j for c in range(6)] + list(range(skel.rot_dim, skel.frame_dim))
    hand = [j * 6 + c for j in hand_j for c in range(6)]
    return np.array(sorted(body)), np.array(sorted(hand))


def _runs(idx: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], idx[0]
    for a, b in zip(idx[:-1], idx[1:]):
        if b != a + 1:
            runs.append((start, a + 1))
            start = b
    runs.append((start, idx[-1] + 1))
    return runs


def split_body_hand(frames, skel: Skeleton):
    body, hand = body_hand_indices(skel)
    if isinstance(frames, Tensor):
        def take(idx):
            pieces = [frames[..., a:b] for a, b in _runs(idx)]
            return pieces[0] if len(pieces) == 1 else ag.concat(pieces, axis=-1)
        return take(body), take(hand)
    frames = np.asarray(frames)
    return frames[..., body], frames[..., hand]


def merge_body_hand(body_part, hand_part, skel: Skeleton):
    body, hand = body_hand_indices(skel)
    if isinstance(body_part, Tensor) or isinstance(hand_part, Tensor):
        body_part, hand_part = ag.as_tensor(body_part), ag.as_tensor(hand_part)
        # walk the frame layout run by run, pulling from whichever part owns it
        owner = np.zeros(skel.frame_dim, dtype=int)
        owner[hand] = 1
        pos = {0: 0, 1: 0}
        pieces = []
        for a, b in _owner_runs(owner):
            src = owner[a]
            n = b - a
            part = body_part if src == 0 else hand_part
            pieces.append(part[..., pos[src]:pos[src] + n])
            pos[src] += n
        return ag.concat(pieces, axis=-1)
    out = np.empty(np.asarray(body_part).shape[:-1] + (skel.frame_dim,))
    out[..., body] = body_part
    out[..., hand] = hand_part
    return out


def _owner_runs(owner: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], 0
    for i in range(1, len(owner)):
        if owner[i] != owner[i - 1]:
            runs.append((start, i))
            start = i
    runs.append((start, len(owner)))
    return runs


class Block:
    def __init__(self, store: ParameterStore, name: str, cfg: DenoiserConfig, rng: np.random.Generator,
                 body_link: bool = False):
        w = cfg.width
        self.name = name
        self.ln1 = LayerNorm(store, f"{name}.ln1", w)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", w, cfg.heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", w)
        self.music_attn = MultiHeadAttention(store, f"{name}.music_attn", w, cfg.heads, rng)
        self.body_link = body_link
        if body_link:
            self.ln_link = LayerNorm(store, f"{name}.ln_link", w)
            self.body_attn = MultiHeadAttention(store, f"{name}.body_attn", w, cfg.heads, rng)
        self.ln3 = LayerNorm(store, f"{name}.ln3", w)
        self.mlp = MLP(store, f"{name}.mlp", w, w * cfg.mlp_ratio, w, rng)
        self.film = FiLMLayer(store, f"{name}.film", w, w, rng)

    def __call__(self, x, music, alpha, body=None) -> Tensor:
        x = x + self.self_attn(self.ln1(x))
        x = x + self.music_attn(self.ln2(x), music)
        if self.body_link:
            x = x + self.body_attn(self.ln_link(x), body)
        x = x + self.mlp(self.ln3(x))
        return self.film(x, alpha)


class Denoiser:
    def __init__(self, store: ParameterStore, cfg: DenoiserConfig, skel: Skeleton,
                 rng: np.random.Generator, name: str = "denoiser"):
        self.cfg = cfg
        self.skel = skel
        body_idx, hand_idx = body_hand_indices(skel)
        if len(body_idx) != cfg.body_dim or len(hand_idx) != cfg.hand_dim:
            raise ValueError("denoiser body/hand dims do not match the skeleton groups")
        w = cfg.width
        self.body_in = Linear(store, f"{name}.body_in", cfg.body_dim, w, rng)
        self.hand_in = Linear(store, f"{name}.hand_in", cfg.hand_dim, w, rng)
        self.music_adapter = MLP(store, f"{name}.music_adapter", cfg.music_dim, w, w, rng)
        self.text_adapter = TextAdapter(store, f"{name}.text_adapter", cfg.embed_dim, w, rng)
        self.body_blocks = [Block(store, f"{name}.body.{i}", cfg, rng) for i in range(cfg.layers)]
        self.hand_blocks = [Block(store, f"{name}.hand.{i}", cfg, rng, body_link=True)
                            for i in range(cfg.layers)]
        self.body_ln = LayerNorm(store, f"{name}.body_ln", w)
        self.hand_ln = LayerNorm(store, f"{name}.hand_ln", w)
        self.body_out = Linear(store, f"{name}.body_out", w, cfg.body_dim, rng)
        self.hand_out = Linear(store, f"{name}.hand_out", w, cfg.hand_dim, rng)

    def _check(self, x: Tensor, where: str) -> None:
        if not np.all(np.isfinite(x.value)):
            raise DenoiserError(f"non-finite activations after {where}")

    def __call__(self, d_t, t, music, c_e) -> Tensor:
        d_t = ag.as_tensor(d_t)
        music = ag.as_tensor(music)
        if d_t.ndim != 3 or d_t.shape[-1] != self.skel.frame_dim:
            raise ag.ShapeError("denoise", d_t.shape)
        B, k, _ = d_t.shape
        if music.shape[:2] != (B, k) or music.shape[-1] != self.cfg.music_dim:
            raise ag.ShapeError("denoise (music)", d_t.shape, music.shape)
        t = np.broadcast_to(np.asarray(t), (B,))
        pe = sinusoidal_embedding(np.arange(k), self.cfg.width)
        mem = self.music_adapter(music) + pe  # keys need frame positions to locate beats
        alpha = self.text_adapter(c_e, t)
        body, hand = split_body_hand(d_t, self.skel)
        xb = self.body_in(body) + pe
        for blk in self.body_blocks:
            xb = blk(xb, mem, alpha)
            self._check(xb, blk.name)
        xh = self.hand_in(hand) + pe
        for blk in self.hand_blocks:
            xh = blk(xh, mem, alpha, body=xb)
            self._check(xh, blk.name)
        out_b = self.body_out(self.body_ln(xb))
        out_h = self.hand_out(self.hand_ln(xh))
        return merge_body_hand(out_b, out_h, self.skel)

    def film_layers(self) -> list[FiLMLayer]:
        return [b.film for b in self.body_blocks + self.hand_blocks]
