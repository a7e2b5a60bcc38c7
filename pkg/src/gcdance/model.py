"""Full conditioned model: denoiser, genre embedding table, text classifier, stats.

Checkpoints are a JSON manifest ``[{name, shape, offset}]`` plus a raw
little-endian float32 blob, with the model config alongside.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ParameterStore, Tensor
from .conditioning import GenreClassifier, GenreEmbeddingTable, genre_prompt, loss_genre_bce, one_hot
from .denoiser import Denoiser, DenoiserConfig
from .io_utils import atomic_write_bytes, write_json
from .motion import NormStats, Skeleton, load_skeleton


class GCDanceModel:
    def __init__(self, skel: Skeleton, cfg: DenoiserConfig, genres: list[str], tokens: list[str],
                 seed: int = 0, skeleton_ref: str = "smpl52"):
        self.skel = skel
        self.skeleton_ref = skeleton_ref
        self.cfg = cfg
        self.genres = list(genres)
        self.tokens = list(tokens)
        self.seed = seed
        rng = np.random.default_rng([seed, 1])
        self.store = ParameterStore()
        self.embed = GenreEmbeddingTable(self.store, len(genres), cfg.embed_dim, rng)
        self.denoiser = Denoiser(self.store, cfg, skel, rng)
        self.classifier = GenreClassifier(self.store, tokens, genres, rng)
        self.stats = NormStats(np.zeros(skel.frame_dim), np.ones(skel.frame_dim))

    # ---------------------------------------------------------------- forward
    def genre_ids(self, names) -> np.ndarray:
        return np.array([self.genres.index(n) for n in names])

    def predict(self, d_t, t, music, genres) -> Tensor:
        """x0 prediction for a batch; ``genres`` are integer ids."""
        return self.denoiser(d_t, t, music, self.embed(np.asarray(genres)))

    def denoise_fn(self, genres):
        """Numpy closure ``(d_t, t, c_m, c_e) -> m_hat`` for the sampler."""
        genres = np.atleast_1d(np.asarray(genres))

        def fn(d_t, t, c_m, _c_e=None):
            batched = d_t.ndim == 3
            d = d_t if batched else d_t[None]
            m = c_m if batched else c_m[None]
            with ag.no_grad():
                out = self.predict(d, np.full(d.shape[0], t), m, np.broadcast_to(genres, (d.shape[0],))).value
            return out if batched else out[0]

        return fn

    def classifier_loss(self, probs, genre_ids) -> Tensor:
        return loss_genre_bce(probs, one_hot(list(genre_ids), len(self.genres)))

    def resolve_genre(self, prompt: str | None = None, genre: str | None = None) -> tuple[str, dict]:
        if (prompt is None) == (genre is None):
            raise ValueError("exactly one of prompt/genre is required")
        if genre is not None:
            genre_prompt(genre, self.genres)
            return genre, {"source": "genre"}
        dist = self.classifier.classify(prompt)
        return self.genres[dist.argmax], {"source": "prompt", "probs": dist.probs.tolist(),
                                           "unknown": dist.unknown}

    # ---------------------------------------------------------------- persistence
    def config_dict(self) -> dict:
        return {"denoiser": self.cfg.to_dict(), "genres": self.genres, "tokens": self.tokens,
                "seed": self.seed, "skeleton": self.skeleton_ref}

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: v for k, v in self.store.state().items()}
        out["norm.mean"] = self.stats.mean
        out["norm.std"] = self.stats.std
        return out

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest, blobs, offset = [], [], 0
        for name, arr in self.arrays().items():
            data = np.asarray(arr, dtype="<f4").tobytes()
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            blobs.append(data)
            offset += len(data)
        atomic_write_bytes(directory / "params.bin", b"".join(blobs))
        write_json(directory / "params.json", manifest)
        write_json(directory / "model.json", self.config_dict())

    @classmethod
    def load(cls, directory) -> "GCDanceModel":
        directory = Path(directory)
        conf = json.loads((directory / "model.json").read_text())
        skel = load_skeleton(conf["skeleton"])
        model = cls(skel, DenoiserConfig(**conf["denoiser"]), conf["genres"], conf["tokens"],
                    conf["seed"], conf["skeleton"])
        model.load_arrays(read_checkpoint(directory))
        return model

    def load_arrays(self, arrays: dict) -> None:
        arrays = dict(arrays)
        self.stats = NormStats(np.array(arrays.pop("norm.mean"), dtype=np.float64),
                               np.array(arrays.pop("norm.std"), dtype=np.float64))
        self.store.load_state(arrays)


def read_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / "params.json").read_text())
    blob = (directory / "params.bin").read_bytes()
    out = {}
    for entry in manifest:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return out
