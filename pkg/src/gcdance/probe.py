"""Motion-genre probe: multinomial logistic regression on kinetic features.

Trained only on real (synthesized) clips, it is independent of the generator
and is used to judge whether conditioned samples look like the requested genre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax

from .metrics import kinetic_features
from .motion import Skeleton


def probe_features(clips, skel: Skeleton) -> np.ndarray:
    # log compresses the heavy right tail of squared speeds
    return np.log(np.stack([kinetic_features(c, skel) for c in clips]) + 1e-8)


@dataclass
class GenreProbe:
    mean: np.ndarray
    std: np.ndarray
    W: np.ndarray       # (F, C)
    b: np.ndarray       # (C,)
    classes: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, y, l2: float = 1e-2) -> "GenreProbe":
        y = np.asarray(y)
        classes = np.unique(y)
        Y = (y[:, None] == classes[None]).astype(np.float64)
        mean, std = X.mean(0), X.std(0) + 1e-8
        Z = (X - mean) / std
        n, F = Z.shape
        C = len(classes)

        def objective(w):
            W, b = w[:F * C].reshape(F, C), w[F * C:]
            logp = log_softmax(Z @ W + b, axis=1)
            loss = -(Y * logp).sum() / n + 0.5 * l2 * (W ** 2).sum()
            R = (np.exp(logp) - Y) / n
            return loss, np.concatenate([(Z.T @ R + l2 * W).ravel(), R.sum(0)])

        res = minimize(objective, np.zeros(F * C + C), jac=True, method="L-BFGS-B",
                       options={"maxiter": 2000})
        return cls(mean, std, res.x[:F * C].reshape(F, C), res.x[F * C:], classes)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(((X - self.mean) / self.std) @ self.W + self.b, axis=1)]

    def accuracy(self, X: np.ndarray, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
