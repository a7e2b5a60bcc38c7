"""Synthetic dataset assembly and the multi-task training loop.

Every step draws its batch from ``default_rng([seed, step])`` so a run resumed
from a checkpoint replays the exact same batches as an uninterrupted one.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import autograd as ag
from .audio import render_beat_track, stft_features
from .conditioning import build_corpus, build_token_vocab
from .denoiser import DenoiserConfig, DenoiserError
from .diffusion import make_schedule, q_sample
from .io_utils import atomic_write_bytes, write_json
from .losses import TASKS, loss_simple, per_task_gradients, task_losses
from .model import GCDanceModel
from .motion import NormStats, Skeleton, forward_kinematics, normalize
from .mtl import AggregationError, aggregate_fixed, aligned_aggregate, nash_aggregate
from .nn import Adam
from .synth import synth_genre_motion

MTL_MODES = ("fixed", "nash", "aligned")
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 0.1)


class TrainingError(ArithmeticError):
    """Numeric failure during training (non-finite loss, solver breakdown)."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr: float = 2e-4
    mtl: str = "nash"
    weights: tuple = DEFAULT_WEIGHTS
    aggregate_every: int = 1
    T: int = 50
    schedule: str = "cosine"
    seed: int = 0
    eval_every: int = 100
    n_eval: int = 64
    checkpoint_every: int = 0
    classifier_warmup: int = 300

    def __post_init__(self):
        if self.mtl not in MTL_MODES:
            raise ValueError(f"mtl must be one of {MTL_MODES}, got {self.mtl!r}")
        if len(self.weights) != len(TASKS):
            raise ValueError("one fixed weight per task is required")
        if self.aggregate_every < 1 or self.batch < 1 or self.steps < 0:
            raise ValueError("steps, batch and aggregate_every must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    frames: np.ndarray          # (N, k, D) raw frames
    music: np.ndarray           # (N, k, F)
    genres: np.ndarray          # (N,) ids into the vocabulary
    fps: int
    beats: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.frames[idx], self.music[idx], self.genres[idx], self.fps,
                       [self.beats[i] for i in idx] if self.beats else [])


def music_for_beats(beats: dict, k: int, fps: int) -> np.ndarray:
    audio = render_beat_track(beats["times"], k / fps, accents=beats["accents"])
    return stft_features(audio, fps)


def synth_dataset(genre_ids, clips: int, k: int, fps: int, skel: Skeleton, seed: int = 0) -> Dataset:
    """``clips`` synthetic clips per genre with beat-track music features."""
    frames, music, labels, beats = [], [], [], []
    for g in genre_ids:
        for c in range(clips):
            clip, bt = synth_genre_motion(int(g), seed * 100003 + c, k, fps, skel)
            frames.append(clip.frames)
            music.append(music_for_beats(bt, k, fps))
            labels.append(int(g))
            beats.append(bt["frames"])
    return Dataset(np.stack(frames), np.stack(music), np.array(labels), fps, beats)


def split_dataset(ds: Dataset, held_frac: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Per-genre split; returns (train, held_out)."""
    rng = np.random.default_rng([seed, 31])
    tr, ho = [], []
    for g in np.unique(ds.genres):
        idx = rng.permutation(np.flatnonzero(ds.genres == g))
        cut = max(1, int(round(held_frac * len(idx))))
        ho += list(idx[:cut])
        tr += list(idx[cut:])
    return ds.subset(sorted(tr)), ds.subset(sorted(ho))


# ---------------------------------------------------------------- batches

def make_batch(ds: Dataset, model: GCDanceModel, schedule, n: int, rng: np.random.Generator,
               texts: list[dict]) -> SimpleNamespace:
    idx = rng.integers(0, len(ds), n)
    raw = ds.frames[idx]
    m0 = normalize(raw, model.stats)
    t = rng.integers(0, schedule.T, n)
    eps = rng.standard_normal(m0.shape)
    rows = [texts[i] for i in rng.integers(0, len(texts), n)]
    return SimpleNamespace(
        d_t=q_sample(m0, t, eps, schedule), t=t, music=ds.music[idx], genres=ds.genres[idx],
        m0=m0, raw=raw, positions=forward_kinematics(raw, model.skel),
        texts=[r["text"] for r in rows], text_genres=[model.genres.index(r["genre"]) for r in rows])


def heldout_loss(model: GCDanceModel, batch) -> float:
    with ag.no_grad():
        m_hat = model.predict(batch.d_t, batch.t, batch.music, batch.genres)
        return float(loss_simple(batch.m0, m_hat).value)


# ---------------------------------------------------------------- model setup

def build_model(skel: Skeleton, genres: list[str], cfg: DenoiserConfig | None = None, seed: int = 0,
                corpus_seed: int = 0, skeleton_ref: str = "smpl52") -> tuple[GCDanceModel, list, list]:
    train_rows, held_rows = build_corpus(genres, seed=corpus_seed)
    model = GCDanceModel(skel, cfg or DenoiserConfig(), genres, build_token_vocab(train_rows), seed,
                         skeleton_ref)
    return model, train_rows, held_rows


# ---------------------------------------------------------------- trainer

class Trainer:
    def __init__(self, model: GCDanceModel, train: Dataset, held: Dataset, cfg: TrainConfig,
                 texts: list[dict], out_dir=None):
        self.model, self.train, self.held, self.cfg = model, train, held, cfg
        self.texts = texts
        self.out = Path(out_dir) if out_dir is not None else None
        self.schedule = make_schedule(cfg.T, cfg.schedule)
        self.opt = Adam(model.store.size, lr=cfg.lr)
        self.step = 0
        self.alpha = np.asarray(cfg.weights, dtype=np.float64) if cfg.mtl == "fixed" else np.ones(len(TASKS))
        self.last_diag = {"residual": 0.0, "rank": None}
        self.log: list[dict] = []
        self.eval_log: list[dict] = []
        self._eval_batch = None

    # -- setup
    def prepare(self) -> None:
        """Fit normalization stats and warm-start the text classifier."""
        self.model.stats = NormStats.fit(self.train.frames)
        if self.cfg.classifier_warmup:
            self.model.classifier.fit(self.texts, steps=self.cfg.classifier_warmup)

    def eval_batch(self):
        if self._eval_batch is None:
            rng = np.random.default_rng([self.cfg.seed, 999])
            self._eval_batch = make_batch(self.held, self.model, self.schedule, self.cfg.n_eval, rng,
                                          self.texts)
        return self._eval_batch

    # -- one step
    def _direction(self, batch) -> tuple[np.ndarray, np.ndarray, dict]:
        cfg, store = self.cfg, self.model.store
        try:
            losses = task_losses(self.model, batch)
        except DenoiserError as exc:
            self.dump_state("nan_dump")
            raise TrainingError(str(exc), self.step) from exc
        values = np.array([float(losses[n].value) for n in TASKS])
        if not np.all(np.isfinite(values)):
            self.dump_state("nan_dump")
            raise TrainingError(f"non-finite loss {dict(zip(TASKS, values.tolist()))}", self.step)
        solve = cfg.mtl != "fixed" and self.step % cfg.aggregate_every == 0
        if not solve:
            if cfg.mtl == "fixed":
                total = aggregate_fixed([losses[n] for n in TASKS], self.alpha)
            else:
                # reuse the last solved weights; Aligned weights may be negative
                total = sum((losses[n] * float(a) for n, a in zip(TASKS[1:], self.alpha[1:])),
                            losses[TASKS[0]] * float(self.alpha[0]))
            return store.flat_grad(total), values, {"residual": self.last_diag["residual"],
                                                    "rank": self.last_diag["rank"], "solved": False}
        G = per_task_gradients(self.model, batch, losses).G
        try:
            res = nash_aggregate(G) if cfg.mtl == "nash" else aligned_aggregate(G, np.asarray(cfg.weights))
        except AggregationError as exc:
            raise TrainingError(f"{cfg.mtl} aggregation failed: {exc}", self.step) from exc
        self.alpha = res.alpha
        self.last_diag = {"residual": float(res.diagnostics["residual"]), "rank": int(res.diagnostics["rank"])}
        return res.update, values, {**self.last_diag, "solved": True}

    def train_step(self) -> dict:
        rng = np.random.default_rng([self.cfg.seed, self.step])
        batch = make_batch(self.train, self.model, self.schedule, self.cfg.batch, rng, self.texts)
        update, values, diag = self._direction(batch)
        if not np.all(np.isfinite(update)):
            self.dump_state("nan_dump")
            raise TrainingError("non-finite update direction", self.step)
        params = self.opt.step(self.model.store.flatten(), update)
        self.model.store.unflatten(params)
        row = {"step": self.step, "losses": values.tolist(), "alpha": self.alpha.tolist(),
               "residual": diag["residual"], "rank": diag["rank"], "solved": diag["solved"]}
        self.log.append(row)
        self.step += 1
        return row

    def evaluate(self) -> dict:
        row = {"step": self.step, "heldout_S": heldout_loss(self.model, self.eval_batch())}
        self.eval_log.append(row)
        return row

    def run(self, steps: int | None = None, callback=None) -> None:
        target = self.cfg.steps if steps is None else self.step + steps
        if not self.eval_log:
            self.evaluate()
        while self.step < target:
            row = self.train_step()
            if self.out is not None:
                _append_jsonl(self.out / "train_log.jsonl", row)
            if self.step % self.cfg.eval_every == 0 or self.step == target:
                ev = self.evaluate()
                if self.out is not None:
                    _append_jsonl(self.out / "eval_log.jsonl", ev)
            if self.out is not None and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                self.save_checkpoint(self.out / f"ckpt_{self.step:06d}")
            if callback is not None:
                callback(self, row)

    # -- persistence
    def save_checkpoint(self, directory) -> None:
        directory = Path(directory)
        self.model.save(directory)
        opt = self.opt.state()
        buf = _npz_bytes(params=self.model.store.flatten(), m=opt["m"], v=opt["v"],
                         t=np.array(opt["t"]), step=np.array(self.step), alpha=self.alpha,
                         mean=self.model.stats.mean, std=self.model.stats.std)
        atomic_write_bytes(directory / "train_state.npz", buf)
        write_json(directory / "train_config.json",
                   {"train": self.cfg.to_dict(), "last_diag": self.last_diag,
                    "eval_log": self.eval_log})

    def load_checkpoint(self, directory) -> None:
        """Restore the exact float64 training state written by ``save_checkpoint``."""
        directory = Path(directory)
        with np.load(directory / "train_state.npz") as z:
            self.model.store.unflatten(z["params"])
            self.opt.load_state({"m": z["m"], "v": z["v"], "t": int(z["t"])})
            self.step = int(z["step"])
            self.alpha = np.array(z["alpha"])
            self.model.stats = NormStats(np.array(z["mean"]), np.array(z["std"]))
        meta = json.loads((directory / "train_config.json").read_text())
        self.last_diag = meta["last_diag"]
        self.eval_log = meta["eval_log"]

    def dump_state(self, name: str) -> None:
        if self.out is None:
            return
        try:
            self.save_checkpoint(self.out / name)
        except Exception:  # the dump is best effort; the original failure matters more
            pass


# ---------------------------------------------------------------- helpers

class RunLockedError(RuntimeError):
    pass


class DirectoryLock:
    """Exclusive ownership of a checkpoint directory via an O_EXCL lock file."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(f"{self.path.parent} is locked by another run") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _append_jsonl(path: Path, row: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def _npz_bytes(**arrays) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()
