"""Command-line entry point.

Exit codes: 0 success, 64 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioError, read_wav, render_beat_track, stft_features, write_wav
from .autograd import GradientError, ParameterStore, ShapeError
from .conditioning import (ConditioningError, GenreClassifier, build_corpus, build_token_vocab,
                           load_vocabulary)
from .config import ConfigError, ExperimentConfig
from .denoiser import DenoiserError
from .diffusion import DiffusionError, SamplingError, make_schedule
from .generation import edit, generate, load_beats_json, music_features, output_seconds
from .io_utils import atomic_write_bytes, atomic_write_text, config_hash, dumps, write_json
from .metrics import EvalConfig, MetricsError, evaluate_sets, report_bytes
from .model import GCDanceModel
from .motion import MotionClip, MotionError, load_gcmo, load_skeleton, save_gcmo
from .mtl import AggregationError
from .synth import synth_genre_motion
from .training import (Dataset, DirectoryLock, RunLockedError, Trainer, TrainingError, build_model,
                       split_dataset)

EXIT_OK, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    outputs: list = field(default_factory=list)
    code_version: str = __version__
    started_unix: float = field(default_factory=time.time)
    extra: dict = field(default_factory=dict)

    @staticmethod
    def path_for(output) -> Path:
        output = Path(output)
        return output.with_name(output.name + ".manifest.json")

    def write(self, output) -> Path:
        path = self.path_for(output)
        write_json(path, asdict(self))
        return path


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise MotionError(f"{out} exists and is not empty (use --force)")
        shutil.rmtree(out)
    vocab = load_vocabulary(args.vocab)
    if args.genres > len(vocab):
        raise ConditioningError(f"{args.genres} genres requested but the vocabulary has {len(vocab)}")
    if args.clips < 1 or args.seconds <= 0:
        raise UsageError("--clips and --seconds must be positive")
    skel = load_skeleton(args.skeleton)
    k = int(round(args.seconds * args.fps))
    params = {"genres": args.genres, "clips": args.clips, "seconds": args.seconds, "fps": args.fps,
              "seed": args.seed, "skeleton": args.skeleton}
    RunManifest("synth", config_hash(params), args.seed, [str(out)], extra=params).write(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for g in range(args.genres):
        for c in range(args.clips):
            clip, beats = synth_genre_motion(g, args.seed * 100003 + c, k, args.fps, skel, len(vocab))
            stem = f"{g:02d}_{c:04d}"
            save_gcmo(out / f"{stem}.gcmo", clip)
            audio = render_beat_track(beats["times"], k / args.fps, accents=beats["accents"])
            write_wav(out / f"{stem}.wav", audio)
            rows.append({"clip": f"{stem}.gcmo", "wav": f"{stem}.wav", "genre": vocab[g], "genre_id": g,
                         "beats": beats["frames"], "fps": args.fps})
    atomic_write_text(out / "labels.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    print(f"wrote {len(rows)} clips to {out}")
    return EXIT_OK


def load_synth_dir(directory, genres: list[str]) -> Dataset:
    directory = Path(directory)
    labels = directory / "labels.jsonl"
    if not labels.exists():
        raise FileNotFoundError(f"{labels} not found")
    frames, music, ids, beats = [], [], [], []
    fps = None
    for line in labels.read_text().splitlines():
        row = json.loads(line)
        clip = load_gcmo(directory / row["clip"])
        fps = clip.fps
        frames.append(clip.frames)
        feats = stft_features(read_wav(directory / row["wav"]), clip.fps)
        music.append(feats[:clip.k])
        if row["genre"] not in genres:
            raise ConditioningError(f"label {row['genre']!r} not in the vocabulary")
        ids.append(genres.index(row["genre"]))
        beats.append(row["beats"])
    if not frames:
        raise MotionError(f"{labels} lists no clips")
    return Dataset(np.stack(frames), np.stack(music), np.array(ids), fps, beats)


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    cfg = cfg.with_overrides(mtl={"mode": args.mtl}, optimizer={"steps": args.steps},
                             data={"dir": args.data})
    if cfg.data.dir is None:
        raise ConfigError("no data directory given (config data.dir or --data)")
    out = Path(args.out)
    genres = load_vocabulary(cfg.vocabulary)
    skel = load_skeleton(cfg.skeleton)
    ds = load_synth_dir(cfg.data.dir, genres)
    train, held = split_dataset(ds, cfg.data.held_frac, cfg.seeds.train)
    model, rows, _ = build_model(skel, genres, cfg.denoiser, cfg.seeds.model, cfg.seeds.corpus, cfg.skeleton)
    out.mkdir(parents=True, exist_ok=True)
    RunManifest("train", cfg.hash(), cfg.seeds.train, [str(out)], extra={"config": cfg.to_dict()}).write(out)
    with DirectoryLock(out):
        trainer = Trainer(model, train, held, cfg.train_config(), rows, out)
        if args.resume:
            trainer.load_checkpoint(args.resume)
        else:
            for name in ("train_log.jsonl", "eval_log.jsonl"):
                (out / name).unlink(missing_ok=True)
            trainer.prepare()
        trainer.run()
        trainer.save_checkpoint(out / "model")
    first, last = trainer.eval_log[0]["heldout_S"], trainer.eval_log[-1]["heldout_S"]
    print(json.dumps({"steps": trainer.step, "heldout_S_initial": first, "heldout_S_final": last,
                      "ratio": last / first}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- generate / edit

def _load_model(path) -> GCDanceModel:
    path = Path(path)
    if not (path / "model.json").exists():
        raise FileNotFoundError(f"{path} is not a model checkpoint")
    return GCDanceModel.load(path)


def _resolve_genre(model, args) -> tuple[int, str, dict]:
    if (args.prompt is None) == (args.genre is None):
        raise UsageError("exactly one of --prompt/--genre is required")
    if args.prompt is not None and not args.prompt.strip():
        raise UsageError("--prompt must not be empty")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        name, info = model.resolve_genre(prompt=args.prompt, genre=args.genre)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return model.genres.index(name), name, info


def _music(args, seconds: float, fps: int) -> np.ndarray:
    if (args.music is None) == (args.beats is None):
        raise UsageError("exactly one of --music/--beats is required")
    beats = load_beats_json(args.beats) if args.beats else None
    return music_features(seconds, fps, wav=args.music, beats=beats)


def cmd_generate(args) -> int:
    model = _load_model(args.checkpoint)
    gid, name, info = _resolve_genre(model, args)
    if args.seconds <= 0:
        raise UsageError("--seconds must be positive")
    seconds = output_seconds(args.seconds)
    music = _music(args, seconds, args.fps)
    params = {"checkpoint": str(args.checkpoint), "genre": name, "seconds": seconds, "seed": args.seed,
              "T": args.T}
    RunManifest("generate", config_hash(params), args.seed, [args.out],
                extra={"genre": name, "resolution": info, "requested_seconds": args.seconds,
                       **params}).write(args.out)
    frames = generate(model, music, gid, seconds, args.seed, make_schedule(args.T), args.fps,
                      args.renoise)
    save_gcmo(args.out, MotionClip(frames, args.fps, model.skel.n_joints))
    print(json.dumps({"out": args.out, "frames": len(frames), "genre": name}, sort_keys=True))
    return EXIT_OK


def cmd_edit(args) -> int:
    model = _load_model(args.checkpoint)
    gid, name, info = _resolve_genre(model, args)
    ref = load_gcmo(args.ref)
    if ref.n_joints != model.skel.n_joints:
        raise MotionError("reference clip does not match the model skeleton")
    music = _music(args, ref.k / ref.fps, ref.fps)
    params = {"checkpoint": str(args.checkpoint), "ref": str(args.ref), "mask": args.mask, "genre": name,
              "seed": args.seed, "T": args.T}
    RunManifest("edit", config_hash(params), args.seed, [args.out], extra={"resolution": info, **params}).write(args.out)
    frames, B = edit(model, ref.frames, args.mask, music, gid, args.seed, make_schedule(args.T), ref.fps,
                     args.renoise)
    save_gcmo(args.out, MotionClip(frames, ref.fps, ref.n_joints))
    print(json.dumps({"out": args.out, "kept_fraction": float(B.mean()), "genre": name}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- eval / classify

def cmd_eval(args) -> int:
    cfg = EvalConfig(n_sets=args.sets, sigma=args.sigma, skeleton=args.skeleton)
    report = evaluate_sets(args.gen, args.gt, cfg, args.seed)
    params = {"gen": str(args.gen), "gt": str(args.gt), "seed": args.seed, **asdict(cfg)}
    RunManifest("eval", config_hash(params), args.seed, [args.report], extra=params).write(args.report)
    atomic_write_bytes(args.report, report_bytes(report))
    print(dumps(report), end="")
    return EXIT_OK


def _default_classifier() -> GenreClassifier:
    genres = load_vocabulary(None)
    rows, _ = build_corpus(genres)
    clf = GenreClassifier(ParameterStore(), build_token_vocab(rows), genres, np.random.default_rng([0, 1]))
    clf.fit(rows)
    return clf


def cmd_classify(args) -> int:
    if not args.text or not args.text.strip():
        raise UsageError("--text must not be empty")
    clf = _load_model(args.checkpoint).classifier if args.checkpoint else _default_classifier()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dist = clf.classify(args.text)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = {"genre": clf.genres[dist.argmax], "unknown": dist.unknown,
           "probs": {g: round(float(p), 6) for g, p in zip(clf.genres, dist.probs)}}
    print(dumps(out), end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gcdance", description="Genre-conditioned dance diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic multi-genre dataset")
    s.add_argument("--genres", type=int, required=True)
    s.add_argument("--clips", type=int, required=True)
    s.add_argument("--seconds", type=float, default=2.0)
    s.add_argument("--fps", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skeleton", default="smpl52")
    s.add_argument("--vocab", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--mtl", choices=["fixed", "nash", "aligned"], default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    t.set_defaults(func=cmd_train)

    helps = {"generate": "sample a dance; clips over 4 s are stitched from overlapping segments",
             "edit": "regenerate masked joints or a time range of a reference clip"}
    for name, func in (("generate", cmd_generate), ("edit", cmd_edit)):
        g = sub.add_parser(name, help=helps[name])
        g.add_argument("--checkpoint", required=True)
        g.add_argument("--music", default=None)
        g.add_argument("--beats", default=None)
        g.add_argument("--prompt", default=None)
        g.add_argument("--genre", default=None)
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("--T", type=int, default=50)
        g.add_argument("--renoise", choices=["marginal", "posterior"], default="marginal")
        g.add_argument("--out", required=True)
        if name == "generate":
            g.add_argument("--seconds", type=float, default=4.0)
            g.add_argument("--fps", type=int, default=30)
        else:
            g.add_argument("--ref", required=True)
            g.add_argument("--mask", required=True)
        g.set_defaults(func=func)

    e = sub.add_parser("eval", help="compare generated clips with ground truth")
    e.add_argument("--gen", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sets", type=int, default=10)
    e.add_argument("--sigma", type=float, default=3.0)
    e.add_argument("--skeleton", default="smpl52")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("classify", help="genre distribution for a text description")
    c.add_argument("--text", required=True)
    c.add_argument("--checkpoint", default=None)
    c.set_defaults(func=cmd_classify)
    return p


DATA_ERRORS = (FileNotFoundError, IsADirectoryError, NotADirectoryError, MotionError, AudioError,
               MetricsError, ConfigError, ConditioningError, DiffusionError, RunLockedError,
               json.JSONDecodeError, KeyError, ShapeError)
NUMERIC_ERRORS = (AggregationError, SamplingError, DenoiserError, TrainingError, GradientError,
                  FloatingPointError, ArithmeticError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gcdance {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"gcdance {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"gcdance {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
