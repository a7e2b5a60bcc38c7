"""Desk-scale end-to-end experiment: train per MTL mode, then probe genre controllability.

Also hosts the seam-smoothness measurement used for long-form outputs.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .conditioning import DEFAULT_GENRES
from .denoiser import DenoiserConfig
from .diffusion import make_schedule, sample, seam_frames
from .generation import _finish, generate
from .model import GCDanceModel
from .motion import Skeleton, forward_kinematics, load_skeleton
from .probe import GenreProbe, probe_features
from .training import Dataset, TrainConfig, Trainer, build_model, split_dataset, synth_dataset


@dataclass
class DeskScaleConfig:
    genres: tuple = (0, 1, 2)
    clips: int = 60
    k: int = 60
    fps: int = 30
    steps: int = 2000
    modes: tuple = ("fixed", "nash", "aligned")
    aggregate_every: int = 4
    width: int = 64
    samples_per_genre: int = 60
    T: int = 50
    data_seed: int = 0
    probe_seed: int = 7      # independent real clips for fitting the probe
    probe_test_seed: int = 8
    music_seed: int = 11     # unseen music for the conditioned samples
    eval_every: int = 100
    lr: float = 2e-3
    # J sums over 52 joints and V over 319 channels; dividing puts every term on a per-entry scale
    weights: tuple = (1.0, 1.0 / 52, 1.0 / 319, 1.0, 0.1)
    renoise: str = "marginal"


@dataclass
class ModeResult:
    mode: str
    heldout_initial: float
    heldout_final: float
    train_seconds: float
    hit_rate: dict = field(default_factory=dict)   # genre id -> fraction classified as requested
    eval_log: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.heldout_final / self.heldout_initial

    @property
    def worst_hit(self) -> float:
        return min(self.hit_rate.values()) if self.hit_rate else 0.0


@dataclass
class DeskScaleResult:
    config: DeskScaleConfig
    probe_accuracy: float
    modes: dict = field(default_factory=dict)       # mode -> ModeResult
    models: dict = field(default_factory=dict)      # mode -> GCDanceModel, not serialized

    @property
    def best_mode(self) -> str:
        return max(self.modes, key=lambda m: self.modes[m].worst_hit)

    def summary(self) -> dict:
        return {"config": asdict(self.config), "probe_accuracy": self.probe_accuracy,
                "best_mode": self.best_mode,
                "modes": {m: {**asdict(r), "ratio": r.ratio} for m, r in self.modes.items()}}


def fit_probe(cfg: DeskScaleConfig, skel: Skeleton) -> tuple[GenreProbe, float]:
    fit_set = synth_dataset(cfg.genres, cfg.clips, cfg.k, cfg.fps, skel, seed=cfg.probe_seed)
    test_set = synth_dataset(cfg.genres, cfg.clips, cfg.k, cfg.fps, skel, seed=cfg.probe_test_seed)
    probe = GenreProbe.fit(probe_features(fit_set.frames, skel), fit_set.genres)
    return probe, probe.accuracy(probe_features(test_set.frames, skel), test_set.genres)


def controllability(model: GCDanceModel, probe: GenreProbe, music: Dataset, cfg: DeskScaleConfig,
                    seed: int = 0) -> dict:
    """Fraction of samples conditioned on genre g that the probe labels g.

    Each sample is paired with an unseen music clip of the same genre.
    """
    schedule = make_schedule(cfg.T)
    out = {}
    for g in cfg.genres:
        m = music.music[music.genres == g][:cfg.samples_per_genre]
        x = sample(model.denoise_fn([g]), m, None, cfg.k, [seed, g], schedule, model.skel.frame_dim,
                   batch=len(m), renoise=cfg.renoise)
        pred = probe.predict(probe_features(_finish(model, x), model.skel))
        out[int(g)] = float(np.mean(pred == g))
    return out


def run_desk_scale(cfg: DeskScaleConfig | None = None, log=print) -> DeskScaleResult:
    cfg = cfg or DeskScaleConfig()
    skel = load_skeleton("smpl52")
    data = synth_dataset(cfg.genres, cfg.clips, cfg.k, cfg.fps, skel, seed=cfg.data_seed)
    train, held = split_dataset(data)
    probe, acc = fit_probe(cfg, skel)
    log(f"probe accuracy on unseen real clips: {acc:.3f}")
    music = synth_dataset(cfg.genres, cfg.samples_per_genre, cfg.k, cfg.fps, skel, seed=cfg.music_seed)
    result = DeskScaleResult(cfg, acc)
    for mode in cfg.modes:
        model, rows, _ = build_model(skel, DEFAULT_GENRES, DenoiserConfig(width=cfg.width))
        tcfg = TrainConfig(steps=cfg.steps, mtl=mode, T=cfg.T, eval_every=cfg.eval_every, lr=cfg.lr,
                           weights=cfg.weights,
                           aggregate_every=1 if mode == "fixed" else cfg.aggregate_every)
        trainer = Trainer(model, train, held, tcfg, rows)
        trainer.prepare()
        t0 = time.time()
        trainer.run(callback=lambda tr, row: (tr.step % 500 == 0) and log(
            f"  {mode} step {tr.step} heldout_S {tr.eval_log[-1]['heldout_S']:.4f}"))
        secs = time.time() - t0
        r = ModeResult(mode, trainer.eval_log[0]["heldout_S"], trainer.eval_log[-1]["heldout_S"], secs,
                       eval_log=trainer.eval_log)
        r.hit_rate = controllability(model, probe, music, cfg)
        log(f"{mode}: heldout ratio {r.ratio:.3f} in {secs / 60:.1f} min, hit rates {r.hit_rate}")
        result.modes[mode] = r
        result.models[mode] = model
    return result


# ---------------------------------------------------------------- long-form seams

def frame_speeds(frames: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Mean joint speed between consecutive frames; entry i covers frames i -> i+1."""
    pos = forward_kinematics(frames, skel)
    return np.linalg.norm(np.diff(pos, axis=0), axis=-1).mean(axis=-1)


def seam_report(model: GCDanceModel, music: np.ndarray, genre: int, seconds: float, seed,
                T: int = 50, fps: int = 30) -> dict:
    frames = generate(model, music, genre, seconds, seed, make_schedule(T), fps)
    speeds = frame_speeds(frames, model.skel)
    seams = seam_frames(seconds, fps)
    at_seam = np.array([speeds[s - 1] for s in seams])
    inside = np.delete(speeds, [s - 1 for s in seams])
    p95 = float(np.percentile(inside, 95))
    return {"frames": len(frames), "seams": seams, "seam_speeds": at_seam.tolist(), "p95": p95,
            "worst_ratio": float(at_seam.max() / p95) if p95 > 0 else float("inf")}
