"""Music features: frame-aligned STFT, spectral-flux beats, GCEM embeddings, WAV I/O."""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from .io_utils import atomic_write_bytes

N_FFT = 1024
MEDIAN_WINDOW_S = 0.5
DELTA_FRAC = 0.1
MIN_GAP_S = 0.2

GCEM_MAGIC = b"GCEM"
GCEM_VERSION = 1
_GCEM_HEADER = struct.Struct("<4sIII")


class AudioError(ValueError):
    pass


@dataclass
class AudioBuffer:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise AudioError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def n_frames(self, fps: int) -> int:
        return (len(self.samples) * int(fps)) // self.sample_rate


@dataclass
class MusicFeatures:
    matrix: np.ndarray
    fps: int
    n_stft: int
    n_embed: int

    @property
    def has_stft(self) -> bool:
        return self.n_stft > 0

    @property
    def has_embed(self) -> bool:
        return self.n_embed > 0

    @property
    def k(self) -> int:
        return self.matrix.shape[0]


# ---------------------------------------------------------------- WAV

def read_wav(path) -> AudioBuffer:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise AudioError("only 16-bit PCM WAV is supported")
        sr, ch, n = w.getframerate(), w.getnchannels(), w.getnframes()
        raw = w.readframes(n)
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if ch > 1:
        x = x.reshape(-1, ch).mean(axis=1)
    return AudioBuffer(sr, x)


def encode_wav(audio: AudioBuffer) -> bytes:
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())
    return buf.getvalue()


def write_wav(path, audio: AudioBuffer) -> None:
    atomic_write_bytes(path, encode_wav(audio))


def render_click_track(beat_times, duration: float, sample_rate: int = 22050,
                       accents=None, click_hz: float = 1000.0, decay_s: float = 0.008) -> AudioBuffer:
    """Decaying sine bursts at the given times; ``accents`` scales each click."""
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    length = int(5 * decay_s * sample_rate)
    t = np.arange(length) / sample_rate
    burst = np.sin(2 * np.pi * click_hz * t) * np.exp(-t / decay_s)
    accents = np.ones(len(beat_times)) if accents is None else np.asarray(accents, dtype=np.float64)
    for bt, a in zip(beat_times, accents):
        s = int(round(bt * sample_rate))
        if 0 <= s < n:
            e = min(n, s + length)
            out[s:e] += a * 0.8 * burst[: e - s]
    return AudioBuffer(sample_rate, np.clip(out, -1.0, 1.0))


def render_beat_track(beat_times, duration: float, sample_rate: int = 22050, accents=None,
                      base_hz: float = 440.0, decay_s: float = 0.25) -> AudioBuffer:
    """Plucked-note rendering of a beat list: each beat starts a decaying tone.

    Pitch is ``base_hz * 2**accent`` so accent levels are separable in the
    spectrum, and the slow decay means every frame's magnitude reflects the
    time elapsed since the latest onset.
    """
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    length = int(5 * decay_s * sample_rate)
    t = np.arange(length) / sample_rate
    env = np.exp(-t / decay_s)
    accents = np.ones(len(beat_times)) if accents is None else np.asarray(accents, dtype=np.float64)
    for bt, a in zip(beat_times, accents):
        s = int(round(bt * sample_rate))
        if 0 <= s < n:
            e = min(n, s + length)
            out[s:e] += 0.45 * np.sin(2 * np.pi * base_hz * 2.0 ** a * t[: e - s]) * env[: e - s]
    return AudioBuffer(sample_rate, np.clip(out, -1.0, 1.0))


# ---------------------------------------------------------------- STFT

def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_features(audio: AudioBuffer, fps: int = 30, n_fft: int = N_FFT, window: str = "hann") -> np.ndarray:
    """log(1+|STFT|) with one centred frame per motion frame -> (k, n_fft/2+1)."""
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise AudioError(f"n_fft must be a power of two, got {n_fft}")
    if window not in ("hann", "rect"):
        raise AudioError(f"unknown window {window!r}")
    if len(audio.samples) == 0:
        raise AudioError("empty audio")
    k = audio.n_frames(fps)
    if k < 1:
        raise AudioError("audio shorter than one motion frame")
    hop = int(round(audio.sample_rate / fps))
    half = n_fft // 2
    padded = np.concatenate([np.zeros(half), audio.samples, np.zeros(half + hop * k)])
    idx = np.arange(k)[:, None] * hop + np.arange(n_fft)[None, :]
    win = _hann(n_fft) if window == "hann" else np.ones(n_fft)
    mag = np.abs(np.fft.rfft(padded[idx] * win, axis=1))
    return np.log1p(mag)


def onset_envelope(logmag: np.ndarray) -> np.ndarray:
    """Half-wave rectified spectral flux per frame (first frame measured against silence)."""
    diff = np.diff(logmag, axis=0, prepend=np.zeros((1, logmag.shape[1])))
    return np.maximum(diff, 0.0).sum(axis=1)


def pick_peaks(env: np.ndarray, fps: int, median_window_s: float = MEDIAN_WINDOW_S,
               delta_frac: float = DELTA_FRAC, min_gap_s: float = MIN_GAP_S) -> list[int]:
    env = np.asarray(env, dtype=np.float64)
    if env.size == 0 or env.max() <= 0:
        return []
    w = max(1, int(round(median_window_s * fps)))
    thresh = median_filter(env, size=w, mode="nearest") + delta_frac * env.max()
    left = np.concatenate([[-np.inf], env[:-1]])
    right = np.concatenate([env[1:], [-np.inf]])
    cand = np.flatnonzero((env > thresh) & (env >= left) & (env > right))
    gap = int(round(min_gap_s * fps))
    kept: list[int] = []
    for i in sorted(cand, key=lambda i: (-env[i], i)):
        if all(abs(i - j) >= gap for j in kept):
            kept.append(int(i))
    return sorted(kept)


def detect_music_beats(audio: AudioBuffer, fps: int = 30, n_fft: int = N_FFT) -> list[int]:
    """Beat frame indices from spectral-flux onsets."""
    if audio.duration < 1.0:
        raise AudioError("beat detection needs at least 1 s of audio")
    return pick_peaks(onset_envelope(stft_features(audio, fps, n_fft)), fps)


# ---------------------------------------------------------------- embeddings

def encode_gcem(matrix: np.ndarray) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    return _GCEM_HEADER.pack(GCEM_MAGIC, GCEM_VERSION, m.shape[0], m.shape[1]) + m.astype("<f4").tobytes()


def save_embeddings(path, matrix: np.ndarray) -> None:
    atomic_write_bytes(path, encode_gcem(matrix))


def load_embeddings(path, k: int | None = None) -> np.ndarray:
    """Read a GCEM file; a single-row file is broadcast to ``k`` frames."""
    data = Path(path).read_bytes()
    if len(data) < _GCEM_HEADER.size or data[:4] != GCEM_MAGIC:
        raise AudioError("not a GCEM file")
    _, version, rows, dim = _GCEM_HEADER.unpack_from(data)
    if version != GCEM_VERSION:
        raise AudioError(f"unsupported GCEM version {version}")
    body = data[_GCEM_HEADER.size:]
    if len(body) != rows * dim * 4:
        raise AudioError("GCEM payload size does not match its header dims")
    m = np.frombuffer(body, dtype="<f4").reshape(rows, dim).astype(np.float64)
    if k is not None:
        if rows == 1:
            m = np.repeat(m, k, axis=0)
        elif rows != k:
            raise AudioError(f"GCEM has {rows} rows, clip has {k} frames")
    return m


def assemble_features(stft: np.ndarray | None, embed: np.ndarray | None = None, fps: int = 30) -> MusicFeatures:
    """STFT block first, then the embedding block."""
    blocks = [b for b in (stft, embed) if b is not None]
    if not blocks:
        raise AudioError("no feature blocks given")
    if len({b.shape[0] for b in blocks}) != 1:
        raise AudioError(f"feature blocks have mismatched rows: {[b.shape[0] for b in blocks]}")
    return MusicFeatures(np.concatenate(blocks, axis=1) if len(blocks) > 1 else np.array(blocks[0]),
                         fps=fps,
                         n_stft=0 if stft is None else stft.shape[1],
                         n_embed=0 if embed is None else embed.shape[1])


def beat_frames_to_audio(beat_frames, fps: int, seconds: float, sample_rate: int = 22050,
                         accents=None) -> AudioBuffer:
    """Render a precomputed beat list (frame indices) as a beat track."""
    return render_beat_track(np.asarray(beat_frames, dtype=np.float64) / fps, seconds, sample_rate, accents)
