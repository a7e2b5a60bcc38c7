"""Text-to-genre classification, prompt templating, genre embeddings and FiLM control."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ParameterStore, Tensor
from .nn import MLP, Adam, Linear, sinusoidal_embedding

BCE_CLAMP = 1e-7
TIME_EMBED_DIM = 64
EMBED_DIM = 64

# First eight are named in the source material; the rest are placeholders
# so the vocabulary reaches 16 entries.
DEFAULT_GENRES = ["Popping", "Hip-hop", "Breaking", "Korean", "Miao", "Dai", "Classical", "Jazz",
                  "Locking", "Urban", "Ballet", "Tibetan", "Mongolian", "Uighur", "Hanyu", "Choreography"]

GENRE_KEYWORDS = {
    "Popping": ["popping", "pop", "hits", "tension", "robotic", "waving", "isolation", "ticking"],
    "Hip-hop": ["hip", "hop", "bounce", "groove", "rap", "swagger", "beatbox", "sneakers"],
    "Breaking": ["breaking", "breakdance", "footwork", "windmill", "freeze", "toprock", "bboy", "headspin"],
    "Korean": ["korean", "kpop", "idol", "seoul", "synchronized", "formation", "chorus", "group"],
    "Miao": ["miao", "ethnic", "silver", "mountain", "reed", "lusheng", "village", "festival"],
    "Dai": ["dai", "peacock", "yunnan", "graceful", "water", "splashing", "feathers", "river"],
    "Classical": ["classical", "chinese", "sleeve", "elegant", "opera", "ancient", "poise", "guzheng"],
    "Jazz": ["jazz", "swing", "saxophone", "syncopated", "brass", "sassy", "kicks", "broadway"],
    "Locking": ["locking", "lock", "pointing", "funk", "wristroll", "skeeter", "soul", "clap"],
    "Urban": ["urban", "studio", "city", "contemporary", "sharp", "commercial", "crew", "fusion"],
    "Ballet": ["ballet", "pointe", "pirouette", "tutu", "plie", "arabesque", "barre", "swan"],
    "Tibetan": ["tibetan", "plateau", "himalayan", "prayer", "monastery", "yak", "stomping", "highland"],
    "Mongolian": ["mongolian", "horse", "grassland", "steppe", "galloping", "shoulders", "nomad", "eagle"],
    "Uighur": ["uighur", "xinjiang", "tambourine", "dutar", "twirling", "oasis", "bazaar", "desert"],
    "Hanyu": ["hanyu", "han", "hanfu", "silk", "dynasty", "fan", "court", "scholar"],
    "Choreography": ["choreography", "freestyle", "routine", "showcase", "theater", "staged", "narrative", "mixed"],
}

ADJECTIVES = ["energetic", "lively", "smooth", "powerful", "slow", "dynamic", "playful", "intense",
              "relaxed", "expressive", "fast", "gentle"]

TEMPLATES = [
    "A {adj} dance full of {k1} and {k2}.",
    "Dancers perform {k1} moves with lots of {k2}.",
    "This style is known for {k1}, {k2} and {k3}.",
    "{name} dance with {k1}.",
    "Music for {k1} and {k2} steps.",
    "An {adj} {name} routine featuring {k1}.",
    "I want something with {k1} and some {k2}.",
    "Generate a {adj} piece built around {k1}.",
    "The performer shows off {k1} while the beat plays.",
    "Heavy on {k1}, light on {k2}.",
    "A {name} performance that feels {adj}.",
    "Think {k1}, {k2}, maybe a bit of {k3}.",
    "Choreograph something {adj} with {k1}.",
    "This track calls for {k2} and {k1}.",
    "Classic {name} with plenty of {k3}.",
    "A crowd cheering at {k1} and {k2}.",
    "Slow build into {k1}, ending with {k2}.",
    "Make the dancer look {adj}, using {k1}.",
    "Typical {name} vibes: {k1} and {k2}.",
    "Show me {k1} in an {adj} way.",
    "Every bar should have {k1}.",
    "A duet mixing {k2} with {k1}.",
]


class ConditioningError(ValueError):
    pass


def load_vocabulary(path=None) -> list[str]:
    if path is None:
        return list(DEFAULT_GENRES)
    names = json.loads(Path(path).read_text())
    validate_vocabulary(names)
    return names


def validate_vocabulary(names) -> None:
    if not isinstance(names, list) or not names:
        raise ConditioningError("vocabulary must be a non-empty list of names")
    if any(not isinstance(n, str) or not n.strip() for n in names):
        raise ConditioningError("genre names must be non-empty strings")
    if len(set(names)) != len(names):
        raise ConditioningError("genre names must be unique")


def genre_prompt(label: str, vocabulary=None) -> str:
    vocabulary = DEFAULT_GENRES if vocabulary is None else vocabulary
    if label not in vocabulary:
        raise ConditioningError(f"unknown genre {label!r}")
    return f"This is a {label} type of music."


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _keywords(name: str) -> list[str]:
    if name in GENRE_KEYWORDS:
        return GENRE_KEYWORDS[name]
    toks = tokenize(name)
    return toks + [f"{toks[0]}style", f"{toks[0]}move", f"{toks[0]}step"] if toks else []


def build_corpus(vocabulary=None, per_genre: int = 40, seed: int = 0):
    """Deterministic templated descriptions -> (train, held_out) lists of {text, genre}."""
    vocabulary = DEFAULT_GENRES if vocabulary is None else vocabulary
    rng = np.random.default_rng(seed)
    train, held = [], []
    for name in vocabulary:
        kws = _keywords(name)
        rows = []
        for i in range(per_genre):
            tpl = TEMPLATES[i % len(TEMPLATES)]
            k1, k2, k3 = rng.choice(kws, size=3, replace=False)
            text = tpl.format(name=name, k1=k1, k2=k2, k3=k3, adj=rng.choice(ADJECTIVES))
            rows.append({"text": text[0].upper() + text[1:], "genre": name})
        perm = rng.permutation(len(rows))
        cut = int(round(0.8 * len(rows)))
        train += [rows[i] for i in perm[:cut]]
        held += [rows[i] for i in perm[cut:]]
    return train, held


def build_token_vocab(rows) -> list[str]:
    return sorted({tok for r in rows for tok in tokenize(r["text"])})


# ---------------------------------------------------------------- classifier

@dataclass
class GenreDistribution:
    probs: np.ndarray
    unknown: bool = False

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


class GenreClassifier:
    """Bag-of-words -> linear -> sigmoid (multi-label)."""

    def __init__(self, store: ParameterStore, tokens: list[str], genres: list[str],
                 rng: np.random.Generator, name: str = "classifier"):
        self.tokens = list(tokens)
        self.genres = list(genres)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.fc = Linear(store, name, len(self.tokens), len(self.genres), rng, scale=0.1)

    def featurize(self, texts) -> tuple[np.ndarray, np.ndarray]:
        X = np.zeros((len(texts), len(self.tokens)))
        known = np.zeros(len(texts), dtype=bool)
        for i, text in enumerate(texts):
            for tok in tokenize(text):
                j = self.index.get(tok)
                if j is not None:
                    X[i, j] = 1.0
                    known[i] = True
        return X, known

    def forward(self, texts) -> Tensor:
        X, _ = self.featurize(texts)
        return ag.sigmoid(self.fc(X))

    def classify(self, text: str) -> GenreDistribution:
        if not text or not text.strip():
            raise ConditioningError("empty text")
        X, known = self.featurize([text])
        if not known[0]:
            warnings.warn("no known tokens in text; returning uniform distribution")
            return GenreDistribution(np.full(len(self.genres), 0.5), unknown=True)
        with ag.no_grad():
            return GenreDistribution(ag.sigmoid(self.fc(X)).value[0])

    def fit(self, rows, steps: int = 300, lr: float = 0.05) -> None:
        """Full-batch pretraining of only the classifier parameters."""
        texts = [r["text"] for r in rows]
        y = one_hot([self.genres.index(r["genre"]) for r in rows], len(self.genres))
        params = [self.fc.W, self.fc.b]
        sizes = [p.value.size for p in params]
        opt = Adam(sum(sizes), lr=lr)
        X, _ = self.featurize(texts)
        for _ in range(steps):
            loss = loss_genre_bce(ag.sigmoid(self.fc(X)), y)
            grads = ag.grad(loss, params)
            flat = np.concatenate([p.value.ravel() for p in params])
            new = opt.step(flat, np.concatenate([g.ravel() for g in grads]))
            off = 0
            for p, n in zip(params, sizes):
                p.value = new[off:off + n].reshape(p.value.shape)
                off += n

    def accuracy(self, rows) -> float:
        hits = [self.classify(r["text"]).argmax == self.genres.index(r["genre"]) for r in rows]
        return float(np.mean(hits))


def one_hot(ids, n: int) -> np.ndarray:
    out = np.zeros((len(ids), n))
    out[np.arange(len(ids)), ids] = 1.0
    return out


def loss_genre_bce(probs, target) -> Tensor:
    """Mean over classes (and batch) of binary cross entropy, probabilities clamped."""
    probs = ag.as_tensor(probs)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ag.ShapeError("loss_genre_bce", probs.shape, target.shape)
    p = ag.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = target * ag.log(p) + (1.0 - target) * ag.log(1.0 - p)
    return -ll.mean()


# ---------------------------------------------------------------- embeddings & FiLM

class GenreEmbeddingTable:
    def __init__(self, store: ParameterStore, n_genres: int, dim: int, rng: np.random.Generator,
                 name: str = "genre_embed"):
        self.n = n_genres
        self.table = store.add(name, rng.standard_normal((n_genres, dim)))

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            raise ConditioningError(f"genre id out of range [0, {self.n})")
        return ag.embedding(self.table, ids)


def timestep_embedding(t, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    return sinusoidal_embedding(np.asarray(t), dim)


class TextAdapter:
    """Two-layer MLP over concat(genre embedding, timestep embedding)."""

    def __init__(self, store: ParameterStore, name: str, d_embed: int, d_out: int,
                 rng: np.random.Generator, d_time: int = TIME_EMBED_DIM):
        self.d_time = d_time
        self.mlp = MLP(store, name, d_embed + d_time, d_out, d_out, rng)

    def __call__(self, c_e, t) -> Tensor:
        temb = timestep_embedding(t, self.d_time)
        return self.mlp(ag.concat([ag.as_tensor(c_e), temb], axis=-1))


class FiLMLayer:
    """gamma = theta_w(alpha), eps = theta_b(alpha); gamma starts near 1."""

    def __init__(self, store: ParameterStore, name: str, d_adapter: int, width: int,
                 rng: np.random.Generator):
        self.width = width
        self.theta_w = Linear(store, f"{name}.w", d_adapter, width, rng, scale=0.1, bias_init=1.0)
        self.theta_b = Linear(store, f"{name}.b", d_adapter, width, rng, scale=0.1)

    def params(self, alpha) -> tuple[Tensor, Tensor]:
        return self.theta_w(alpha), self.theta_b(alpha)

    def __call__(self, y, alpha) -> Tensor:
        return film_apply(y, *self.params(alpha))


def film_params(adapter: TextAdapter, layer: FiLMLayer, c_e, t) -> tuple[Tensor, Tensor]:
    return layer.params(adapter(c_e, t))


def film_apply(y, gamma, eps) -> Tensor:
    """gamma * Y + eps per channel, broadcast over frames."""
    y, gamma, eps = ag.as_tensor(y), ag.as_tensor(gamma), ag.as_tensor(eps)
    if gamma.shape[-1] != y.shape[-1] or eps.shape[-1] != y.shape[-1]:
        raise ag.ShapeError("film_apply", y.shape, gamma.shape, eps.shape)
    if gamma.ndim == 2 and y.ndim == 3:
        gamma = gamma.reshape(gamma.shape[0], 1, gamma.shape[1])
        eps = eps.reshape(eps.shape[0], 1, eps.shape[1])
    return y * gamma + eps
