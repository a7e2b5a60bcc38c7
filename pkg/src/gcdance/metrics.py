"""Evaluation metrics: kinetic-feature FID and diversity, beat alignment, contact plausibility.

Velocities and accelerations are finite differences in length units per frame.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
from scipy.ndimage import median_filter
from scipy.spatial.distance import pdist

from .audio import detect_music_beats, read_wav
from .io_utils import dumps
from .motion import MotionClip, MotionError, Skeleton, forward_kinematics, load_gcmo, load_skeleton

EIG_FLOOR = 1e-10
BAS_SIGMA = 3.0
PBC_W_NECK = 0.5
PBC_W_HAND = 0.5
BEAT_MEDIAN_S = 1.0
BEAT_MIN_GAP_S = 0.2
# finite differences below this fraction of the motion's extent are rounding noise
NOISE_RTOL = 1e-10


class MetricsError(ValueError):
    pass


def _positions(clip, skel: Skeleton) -> np.ndarray:
    frames = clip.frames if isinstance(clip, MotionClip) else np.asarray(clip)
    if frames.ndim != 2 or frames.shape[1] != skel.frame_dim:
        raise MotionError("clip does not match skeleton")
    return forward_kinematics(frames, skel)


# ---------------------------------------------------------------- kinetic features

def kinetic_features(clip, skel: Skeleton, joints=None) -> np.ndarray:
    """Per-joint mean squared velocity followed by per-joint mean squared acceleration."""
    pos = _positions(clip, skel)
    if len(pos) < 3:
        raise MetricsError("kinetic features need at least 3 frames")
    if joints is not None:
        pos = pos[:, list(joints)]
    vel = np.diff(pos, axis=0)
    acc = np.diff(pos, n=2, axis=0)
    return np.concatenate([(vel ** 2).sum(-1).mean(0), (acc ** 2).sum(-1).mean(0)])


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int = 0

    @classmethod
    def fit(cls, features) -> "GaussianStats":
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        n, d = X.shape
        if n < 2:
            raise MetricsError("need at least 2 samples for a covariance")
        if n < d + 1:
            warnings.warn(f"{n} samples for {d}-dim features; covariance is rank deficient")
        return cls(X.mean(0), _psd(np.cov(X, rowvar=False).reshape(d, d)), n)


def _psd(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    return (V * np.maximum(lam, EIG_FLOOR)) @ V.T


def _sqrtm_psd(S: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussian fits.

    Tr (Sa Sb)^(1/2) is evaluated as Tr (Sa^(1/2) Sb Sa^(1/2))^(1/2), which is
    symmetric and so safe for a dense eigen decomposition.
    """
    if a.mu.shape != b.mu.shape:
        raise MetricsError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    ra = _sqrtm_psd(a.sigma)
    cross = np.trace(_sqrtm_psd(ra @ b.sigma @ ra))
    d = a.mu - b.mu
    val = float(d @ d + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)
    return max(val, 0.0)


def diversity(features) -> float:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(X) < 2:
        raise MetricsError("diversity needs at least 2 clips")
    return float(pdist(X).mean())


# ---------------------------------------------------------------- beats

def kinematic_beats(clip, skel: Skeleton, fps: int | None = None) -> list[int]:
    """Motion pauses: local minima of total joint speed lying below its moving median."""
    pos = _positions(clip, skel)
    if len(pos) < 3:
        raise MetricsError("kinematic beats need at least 3 frames")
    fps = fps or (clip.fps if isinstance(clip, MotionClip) else 30)
    speed = np.linalg.norm(np.gradient(pos, axis=0), axis=-1).sum(-1)
    med = median_filter(speed, size=max(3, int(round(BEAT_MEDIAN_S * fps)) | 1), mode="nearest")
    tol = NOISE_RTOL * max(speed.max(), 1.0)
    cand = [i for i in range(1, len(speed) - 1)
            if speed[i] < speed[i - 1] - tol and speed[i] <= speed[i + 1] and speed[i] < med[i] - tol]
    gap = BEAT_MIN_GAP_S * fps
    chosen: list[int] = []
    for i in sorted(cand, key=lambda j: (speed[j], j)):
        if all(abs(i - c) >= gap for c in chosen):
            chosen.append(i)
    return sorted(chosen)


def beat_align_score(music_beats, kin_beats, sigma: float = BAS_SIGMA) -> float:
    if sigma <= 0:
        raise MetricsError("sigma must be positive")
    mb = np.asarray(music_beats, dtype=np.float64)
    kb = np.asarray(kin_beats, dtype=np.float64)
    if mb.size == 0 or kb.size == 0:
        return 0.0
    d2 = ((mb[:, None] - kb[None, :]) ** 2).min(axis=1)
    return float(np.exp(-d2 / (2 * sigma ** 2)).mean())


# ---------------------------------------------------------------- physical plausibility

def _com_terms(pos: np.ndarray):
    """COM acceleration magnitude per interior frame; downward vertical acceleration is ignored."""
    com = pos.mean(axis=1)
    a = com[2:] - 2 * com[1:-1] + com[:-2]
    a[:, 2] = np.maximum(a[:, 2], 0.0)
    mag = np.linalg.norm(a, axis=-1)
    mag[mag < NOISE_RTOL * max(np.abs(com).max(), 1.0)] = 0.0
    return mag


def _speed(track: np.ndarray) -> np.ndarray:
    return np.linalg.norm((track[2:] - track[:-2]) / 2.0, axis=-1)


def _feet_speed(pos: np.ndarray, skel: Skeleton) -> np.ndarray:
    if "heels" not in skel.groups or "toes" not in skel.groups:
        raise MetricsError("skeleton lacks heel/toe groups")
    (lh, rh), (lt, rt) = skel.group("heels"), skel.group("toes")
    left = 0.5 * (pos[:, lh] + pos[:, lt])
    right = 0.5 * (pos[:, rh] + pos[:, rt])
    return np.minimum(_speed(left), _speed(right))


def _normalised(score: np.ndarray, acc: np.ndarray) -> float:
    top = acc.max()
    return 0.0 if top <= 0 else float(score.mean() / top)


def pfc(clip, skel: Skeleton) -> float:
    pos = _positions(clip, skel)
    if len(pos) < 3:
        raise MetricsError("PFC needs at least 3 frames")
    acc = _com_terms(pos)
    return _normalised(acc * _feet_speed(pos, skel), acc)


def pbc(clip, skel: Skeleton, w_neck: float = PBC_W_NECK, w_hand: float = PBC_W_HAND) -> float:
    for g in ("neck", "left_hand", "right_hand"):
        if g not in skel.groups:
            raise MetricsError(f"skeleton lacks group {g!r}")
    pos = _positions(clip, skel)
    if len(pos) < 3:
        raise MetricsError("PBC needs at least 3 frames")
    acc = _com_terms(pos)
    neck = _speed(pos[:, skel.group("neck")].mean(axis=1))
    hands = np.minimum(_speed(pos[:, skel.group("left_hand")].mean(axis=1)),
                       _speed(pos[:, skel.group("right_hand")].mean(axis=1)))
    score = acc * (_feet_speed(pos, skel) + w_neck * neck + w_hand * hands)
    return _normalised(score, acc)


# ---------------------------------------------------------------- directory evaluation

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gcdance metrics report",
    "type": "object",
    "required": ["metrics", "config", "seed", "n_sets"],
    "additionalProperties": False,
    "properties": {
        "metrics": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "std"],
                "additionalProperties": False,
                "properties": {"mean": {"type": "number"}, "std": {"type": "number", "minimum": 0}},
            },
        },
        "config": {"type": "object"},
        "seed": {"type": "integer"},
        "n_sets": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class EvalConfig:
    n_sets: int = 10
    sigma: float = BAS_SIGMA
    skeleton: str = "smpl52"
    w_neck: float = PBC_W_NECK
    w_hand: float = PBC_W_HAND


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GCDANCE_THREADS", "1")))
    except ValueError:
        return 1


def _load_dir(directory) -> dict[str, MotionClip]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    files = sorted(directory.glob("*.gcmo"))
    if not files:
        raise MetricsError(f"no GCMO clips in {directory}")
    return {f.stem: load_gcmo(f) for f in files}


def _clip_record(stem: str, clip: MotionClip, directory: Path, skel: Skeleton, cfg: EvalConfig) -> dict:
    rec = {"kin": kinetic_features(clip, skel),
           "pfc": pfc(clip, skel)}
    if all(g in skel.groups for g in ("neck", "left_hand", "right_hand")):
        rec["pbc"] = pbc(clip, skel, cfg.w_neck, cfg.w_hand)
    for part in ("body", "hands"):
        if part in skel.groups and skel.group(part):
            rec[part] = kinetic_features(clip, skel, skel.group(part))
    wav = directory / f"{stem}.wav"
    if wav.exists():
        beats = detect_music_beats(read_wav(wav), clip.fps)
        rec["bas"] = beat_align_score(beats, kinematic_beats(clip, skel), cfg.sigma)
    return rec


def _records(clips: dict, directory: Path, skel: Skeleton, cfg: EvalConfig) -> list[dict]:
    items = list(clips.items())
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return list(pool.map(lambda kv: _clip_record(kv[0], kv[1], directory, skel, cfg), items))


def _set_metrics(gen: list[dict], gt: list[dict]) -> dict[str, float]:
    out = {}
    for key, name in (("kin", "k"), ("body", "body"), ("hands", "hand")):
        if key in gen[0] and key in gt[0]:
            Fg = np.stack([r[key] for r in gen])
            Ft = np.stack([r[key] for r in gt])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[f"fid_{name}"] = fid(GaussianStats.fit(Fg), GaussianStats.fit(Ft))
            out[f"div_{name}"] = diversity(Fg)
            out[f"div_{name}_gt"] = diversity(Ft)
    for key in ("pfc", "pbc", "bas"):
        if all(key in r for r in gen):
            out[key] = float(np.mean([r[key] for r in gen]))
        if all(key in r for r in gt):
            out[f"{key}_gt"] = float(np.mean([r[key] for r in gt]))
    return out


def evaluate_sets(gen_dir, gt_dir, cfg: EvalConfig | None = None, seed: int = 0) -> dict:
    """Mean and standard deviation of every metric over ``n_sets`` bootstrap sets.

    When both directories hold the same clip names the bootstrap is paired
    (identical indices on both sides); otherwise each side is resampled
    independently.
    """
    cfg = cfg or EvalConfig()
    if cfg.n_sets < 1:
        raise MetricsError("n_sets must be at least 1")
    skel = load_skeleton(cfg.skeleton)
    gen_clips, gt_clips = _load_dir(gen_dir), _load_dir(gt_dir)
    gen = _records(gen_clips, Path(gen_dir), skel, cfg)
    gt = _records(gt_clips, Path(gt_dir), skel, cfg)
    if len(gen) < 2 or len(gt) < 2:
        raise MetricsError("each directory needs at least 2 clips")
    paired = list(gen_clips) == list(gt_clips)
    rng = np.random.default_rng(seed)
    per_set = []
    for _ in range(cfg.n_sets):
        gi = rng.integers(0, len(gen), len(gen))
        ti = gi if paired else rng.integers(0, len(gt), len(gt))
        per_set.append(_set_metrics([gen[i] for i in gi], [gt[i] for i in ti]))
    names = sorted(per_set[0])
    metrics = {n: {"mean": float(np.mean([s[n] for s in per_set])),
                   "std": float(np.std([s[n] for s in per_set]))} for n in names}
    report = {"metrics": metrics, "seed": int(seed), "n_sets": cfg.n_sets,
              "config": {"sigma": cfg.sigma, "skeleton": cfg.skeleton, "w_neck": cfg.w_neck,
                         "w_hand": cfg.w_hand, "paired": paired, "n_gen": len(gen), "n_gt": len(gt)}}
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def report_bytes(report: dict) -> bytes:
    return dumps(report).encode()
