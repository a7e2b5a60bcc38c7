"""Noise schedule, forward corruption and x0-prediction sampling.

The sampler asks the denoiser for the clean motion at every step and
re-noises that prediction to the previous timestep.  Each sampling call owns
one seed; three independent streams are spawned from it: the initial noise,
the per-step re-noising noise, and the per-step inpainting noise.  Because
the streams are independent, masking never changes the draws seen by the
unconstrained part of the loop.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .motion import N_CONTACTS, Skeleton

COSINE_S = 0.008
ALPHA_BAR_MIN_END = 0.05


class DiffusionError(ValueError):
    pass


class SamplingError(FloatingPointError):
    pass


@dataclass
class DiffusionSchedule:
    alpha_bar: np.ndarray
    kind: str = "cosine"

    @property
    def T(self) -> int:
        return len(self.alpha_bar)

    @property
    def sqrt_ab(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @property
    def sqrt_1m_ab(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)


def cosine_f(t, T: int, s: float = COSINE_S):
    return np.cos(((np.asarray(t, dtype=np.float64) / T) + s) / (1 + s) * math.pi / 2) ** 2


def make_schedule(T: int, kind: str = "cosine") -> DiffusionSchedule:
    """alpha_bar_t for t = 0..T-1, starting at 1 and ending at or below 0.05."""
    if T < 1:
        raise DiffusionError("T must be at least 1")
    t = np.arange(T)
    if kind == "cosine":
        ab = cosine_f(t, T) / cosine_f(0, T)
    elif kind == "linear":
        betas = np.concatenate([[0.0], np.linspace(1e-4, 0.05, max(T - 1, 1))[: T - 1]])
        ab = np.cumprod(1.0 - betas)
    else:
        raise DiffusionError(f"unknown schedule kind {kind!r}")
    if T >= 2:
        ab[-1] = min(ab[-1], ALPHA_BAR_MIN_END)
    return DiffusionSchedule(ab, kind)


def _check_t(schedule: DiffusionSchedule, t) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise DiffusionError(f"timestep outside [0, {schedule.T})")
    return t


def _per_batch(coef: np.ndarray, ndim: int) -> np.ndarray:
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim)) if coef.ndim else coef


def q_sample(m0: np.ndarray, t, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """sqrt(ab_t) m0 + sqrt(1-ab_t) eps; ``t`` may be a scalar or one timestep per batch row."""
    t = _check_t(schedule, t)
    m0 = np.asarray(m0, dtype=np.float64)
    a = _per_batch(schedule.sqrt_ab[t], m0.ndim)
    s = _per_batch(schedule.sqrt_1m_ab[t], m0.ndim)
    return a * m0 + s * eps


def posterior_sample(m_hat, d_t, t: int, eps, schedule: DiffusionSchedule) -> np.ndarray:
    """DDPM posterior q(d_{t-1} | d_t, m_hat)."""
    ab_t, ab_p = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    alpha_t = ab_t / ab_p
    beta_t = 1.0 - alpha_t
    denom = max(1.0 - ab_t, 1e-12)
    mean = (math.sqrt(ab_p) * beta_t / denom) * m_hat + (math.sqrt(alpha_t) * (1 - ab_p) / denom) * d_t
    var = beta_t * (1 - ab_p) / denom
    return mean + math.sqrt(max(var, 0.0)) * eps


DenoiseFn = Callable[[np.ndarray, int, object, object], np.ndarray]


def _streams(seed):
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seq.spawn(3)]


def _run(denoiser: DenoiseFn, c_m, c_e, shape, seed, schedule: DiffusionSchedule,
         m_known=None, mask=None, renoise: str = "marginal") -> np.ndarray:
    init_rng, step_rng, inpaint_rng = _streams(seed)
    d = init_rng.standard_normal(shape)
    for t in range(schedule.T - 1, 0, -1):
        m_hat = np.asarray(denoiser(d, t, c_m, c_e))
        if not np.all(np.isfinite(m_hat)):
            raise SamplingError(f"non-finite prediction at timestep {t}")
        eps = step_rng.standard_normal(shape)
        if renoise == "marginal":
            d_prev = q_sample(m_hat, t - 1, eps, schedule)
        elif renoise == "posterior":
            d_prev = posterior_sample(m_hat, d, t, eps, schedule)
        else:
            raise DiffusionError(f"unknown renoise mode {renoise!r}")
        if mask is not None:
            known = q_sample(m_known, t - 1, inpaint_rng.standard_normal(shape), schedule)
            d_prev = mask * known + (1.0 - mask) * d_prev
        d = d_prev
    m_hat = np.asarray(denoiser(d, 0, c_m, c_e))
    if not np.all(np.isfinite(m_hat)):
        raise SamplingError("non-finite prediction at timestep 0")
    if mask is not None:
        m_hat = mask * m_known + (1.0 - mask) * m_hat
    return m_hat


def sample(denoiser: DenoiseFn, c_m, c_e, k: int, seed, schedule: DiffusionSchedule,
           dim: int = 319, batch: int | None = None, renoise: str = "marginal") -> np.ndarray:
    """Generate (batch, k, dim) (or (k, dim) if ``batch`` is None) clean frames."""
    shape = (k, dim) if batch is None else (batch, k, dim)
    return _run(denoiser, c_m, c_e, shape, seed, schedule, renoise=renoise)


def sample_inpaint(denoiser: DenoiseFn, c_m, c_e, m_known: np.ndarray, mask: np.ndarray, seed,
                   schedule: DiffusionSchedule, renoise: str = "marginal") -> np.ndarray:
    m_known = np.asarray(m_known, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != m_known.shape:
        raise DiffusionError(f"mask shape {mask.shape} does not match reference {m_known.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise DiffusionError("edit mask must be binary")
    return _run(denoiser, c_m, c_e, m_known.shape, seed, schedule, m_known, mask, renoise)


# ---------------------------------------------------------------- editing masks

def edit_mask(mask: str, skel: Skeleton, k: int, fps: int) -> np.ndarray:
    """Binary mask B (1 = keep the reference).

    A joint-group name (``hands``, ``legs``, ``upper``, ...) marks that group
    for regeneration and keeps everything else; ``seconds:a-b`` keeps frames
    in [a, b) seconds and regenerates the rest.
    """
    B = np.ones((k, skel.frame_dim))
    m = re.fullmatch(r"seconds:([0-9.]+)-([0-9.]+)", mask)
    if m:
        a, b = float(m.group(1)), float(m.group(2))
        if not 0 <= a < b:
            raise DiffusionError(f"bad time range {mask!r}")
        lo, hi = int(round(a * fps)), int(round(b * fps))
        if lo >= k:
            raise DiffusionError(f"time range {mask!r} starts after the clip ends")
        B[:] = 0.0
        B[lo:min(hi, k)] = 1.0
        return B
    if mask not in skel.groups:
        raise DiffusionError(f"unknown mask {mask!r}")
    for j in skel.group(mask):
        B[:, j * 6:(j + 1) * 6] = 0.0
    if mask == "legs":
        B[:, -N_CONTACTS:] = 0.0
    return B


# ---------------------------------------------------------------- long-form

def n_segments(total_seconds: float, seg_seconds: float = 4.0, overlap_seconds: float = 2.0) -> int:
    if total_seconds < seg_seconds:
        raise DiffusionError(f"long-form generation needs at least {seg_seconds} s")
    step = seg_seconds - overlap_seconds
    return 1 + int(math.ceil((total_seconds - seg_seconds) / step - 1e-9))


def blend_weights(n: int) -> np.ndarray:
    """Weight on the earlier segment, decaying linearly 1 -> 0 over the overlap."""
    if n == 1:
        return np.array([0.5])
    return 1.0 - np.arange(n) / (n - 1)


def stitch_long(denoiser: DenoiseFn, c_m_list, c_e, total_seconds: float, seed,
                schedule: DiffusionSchedule, fps: int = 30, dim: int = 319,
                seg_seconds: float = 4.0, overlap_seconds: float = 2.0,
                renoise: str = "marginal") -> np.ndarray:
    """Chain 4 s segments whose first 2 s are inpainted from the previous segment's last 2 s.

    Returns (frames, dim) with ``(seg + (N-1) * (seg - overlap)) * fps`` frames.
    """
    N = n_segments(total_seconds, seg_seconds, overlap_seconds)
    if len(c_m_list) < N:
        raise DiffusionError(f"need {N} music segments, got {len(c_m_list)}")
    seg_k = int(round(seg_seconds * fps))
    ov = int(round(overlap_seconds * fps))
    out = sample(denoiser, c_m_list[0], c_e, seg_k, [*np.atleast_1d(seed), 0], schedule, dim,
                 renoise=renoise)
    for n in range(1, N):
        known = np.zeros((seg_k, dim))
        known[:ov] = out[-ov:]
        mask = np.zeros((seg_k, dim))
        mask[:ov] = 1.0
        seg = sample_inpaint(denoiser, c_m_list[n], c_e, known, mask, [*np.atleast_1d(seed), n],
                             schedule, renoise=renoise)
        w = blend_weights(ov)[:, None]
        blended = w * out[-ov:] + (1.0 - w) * seg[:ov]
        blended[:, -N_CONTACTS:] = (blended[:, -N_CONTACTS:] >= 0.5).astype(np.float64)
        out = np.concatenate([out[:-ov], blended, seg[ov:]], axis=0)
    return out


def seam_frames(total_seconds: float, fps: int = 30, seg_seconds: float = 4.0,
                overlap_seconds: float = 2.0) -> list[int]:
    """First frame of each segment's freely generated part (n >= 1)."""
    N = n_segments(total_seconds, seg_seconds, overlap_seconds)
    seg_k = int(round(seg_seconds * fps))
    step = int(round((seg_seconds - overlap_seconds) * fps))
    return [seg_k + step * (n - 1) for n in range(1, N)]
