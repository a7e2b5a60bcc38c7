"""Sampling, editing and long-form generation from a trained model, in raw frame units."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import AudioError, read_wav, render_beat_track, stft_features
from .diffusion import (DiffusionSchedule, edit_mask, n_segments, sample, sample_inpaint,
                        stitch_long)
from .model import GCDanceModel
from .motion import N_CONTACTS, denormalize, normalize

SEGMENT_SECONDS = 4.0
OVERLAP_SECONDS = 2.0


def output_seconds(seconds: float) -> float:
    """Duration actually produced for a request (segments of 4 s advancing by 2 s)."""
    if seconds <= SEGMENT_SECONDS:
        return seconds
    n = n_segments(seconds, SEGMENT_SECONDS, OVERLAP_SECONDS)
    return SEGMENT_SECONDS + (SEGMENT_SECONDS - OVERLAP_SECONDS) * (n - 1)


def load_beats_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if "times" not in doc:
        if "frames" not in doc or "fps" not in doc:
            raise AudioError("beats JSON needs 'times' or 'frames' + 'fps'")
        doc["times"] = [f / doc["fps"] for f in doc["frames"]]
    doc.setdefault("accents", [1.0] * len(doc["times"]))
    return doc


def music_features(seconds: float, fps: int, wav=None, beats=None) -> np.ndarray:
    """(round(seconds*fps), F) STFT features from a WAV file or a beats description."""
    k = int(round(seconds * fps))
    if wav is not None:
        audio = read_wav(wav)
    elif beats is not None:
        audio = render_beat_track(beats["times"], seconds, accents=beats.get("accents"))
    else:
        raise AudioError("either music audio or beats are required")
    feats = stft_features(audio, fps)
    if len(feats) < k:
        feats = np.concatenate([feats, np.zeros((k - len(feats), feats.shape[1]))])
    return feats[:k]


def _finish(model: GCDanceModel, m_hat: np.ndarray) -> np.ndarray:
    raw = denormalize(m_hat, model.stats)
    raw[..., -N_CONTACTS:] = (raw[..., -N_CONTACTS:] >= 0.5).astype(np.float64)
    return raw


def generate(model: GCDanceModel, music: np.ndarray, genre_id: int, seconds: float, seed,
             schedule: DiffusionSchedule, fps: int = 30, renoise: str = "marginal") -> np.ndarray:
    """Raw frames for one request; long requests are stitched from 4 s segments."""
    fn = model.denoise_fn([genre_id])
    dim = model.skel.frame_dim
    if seconds <= SEGMENT_SECONDS:
        k = int(round(seconds * fps))
        m_hat = sample(fn, music[:k], None, k, seed, schedule, dim, renoise=renoise)
    else:
        n = n_segments(seconds, SEGMENT_SECONDS, OVERLAP_SECONDS)
        seg_k = int(round(SEGMENT_SECONDS * fps))
        step = int(round((SEGMENT_SECONDS - OVERLAP_SECONDS) * fps))
        total = seg_k + step * (n - 1)
        if len(music) < total:
            music = np.concatenate([music, np.zeros((total - len(music), music.shape[1]))])
        segs = [music[i * step:i * step + seg_k] for i in range(n)]
        m_hat = stitch_long(fn, segs, None, output_seconds(seconds), seed, schedule, fps, dim,
                            SEGMENT_SECONDS, OVERLAP_SECONDS, renoise)
    return _finish(model, m_hat)


def edit(model: GCDanceModel, ref: np.ndarray, mask_spec: str, music: np.ndarray, genre_id: int,
         seed, schedule: DiffusionSchedule, fps: int = 30, renoise: str = "marginal"):
    """Regenerate the unmasked part of ``ref``; returns (frames, mask). Kept entries are copied verbatim."""
    k = len(ref)
    B = edit_mask(mask_spec, model.skel, k, fps)
    m_known = normalize(ref, model.stats)
    m_hat = sample_inpaint(model.denoise_fn([genre_id]), music[:k], None, m_known, B, seed, schedule,
                           renoise)
    out = _finish(model, m_hat)
    keep = B == 1.0
    out[keep] = ref[keep]
    return out, B
