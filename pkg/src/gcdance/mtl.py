"""Gradient aggregation over a task-gradient matrix G (|theta| x T).

* fixed weights:  sum_i w_i g_i
* Nash bargaining: find alpha > 0 with (G^T G) alpha = 1/alpha, update G alpha
* Aligned: replace G by the scaled nearest orthogonal matrix and apply task weights
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NASH_TOL = 1e-8
NASH_MAX_ITER = 100
NASH_FALLBACK_ITER = 500
NASH_REG = 1e-8
NASH_REG_TRIGGER = 1e-10
ALIGNED_RANK_RTOL = 1e-9


class AggregationError(ArithmeticError):
    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


@dataclass
class AggregationResult:
    update: np.ndarray
    alpha: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def gram_rank(M: np.ndarray, rtol: float = ALIGNED_RANK_RTOL) -> int:
    """Numerical rank of G from its Gram matrix (cheap when |theta| >> T)."""
    if M.size == 0:
        return 0
    lam = np.linalg.eigvalsh(M)
    return int((lam > max(lam.max(), 0.0) * rtol).sum()) if lam.max() > 0 else 0


def aggregate_fixed(losses, weights):
    """Weighted sum of losses (works for floats and autograd tensors alike)."""
    losses, weights = list(losses), list(weights)
    if len(losses) != len(weights):
        raise ValueError(f"{len(losses)} losses but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ValueError("fixed weights must be non-negative")
    total = losses[0] * weights[0]
    for l, w in zip(losses[1:], weights[1:]):
        total = total + l * w
    return total


def fixed_aggregate(G: np.ndarray, weights) -> AggregationResult:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (G.shape[1],):
        raise ValueError("weights length must equal the number of tasks")
    return AggregationResult(G @ w, w.copy(), {"residual": 0.0, "iterations": 0, "rank": gram_rank(G.T @ G)})


def _nash_newton(N: np.ndarray, max_iter: int):
    """Solve N a = 1/a on the unit-diagonal Gram matrix.

    The root is the minimiser of the strictly convex 0.5 a'Na - sum(log a), so
    damped Newton with Armijo backtracking on that objective converges from a = 1.
    """
    a = np.ones(N.shape[0])

    def objective(x):
        return 0.5 * x @ N @ x - np.log(x).sum()

    f = objective(a)
    F = N @ a - 1.0 / a
    res = np.abs(F).max()
    it = 0
    for it in range(1, max_iter + 1):
        if res < 1e-14:
            break
        H = N + np.diag(1.0 / a ** 2)
        try:
            step = -np.linalg.solve(H, F)
        except np.linalg.LinAlgError:
            return None, res, it
        # the largest step that keeps a strictly positive, then backtrack
        neg = step < 0
        lam = min(1.0, 0.99 * float(np.min(-a[neg] / step[neg]))) if neg.any() else 1.0
        slope = F @ step
        while lam > 1e-12:
            na = a + lam * step
            nf = objective(na)
            nF = N @ na - 1.0 / na
            nres = np.abs(nF).max()
            # near the root the objective change drops below rounding; the residual still shrinks
            if np.isfinite(nf) and (nf <= f + 1e-4 * lam * slope or nres < res):
                break
            lam *= 0.5
        else:
            break
        a, f, F, res = na, nf, nF, nres
    return a, res, it


def _nash_fixed_point(N: np.ndarray, iters: int, damping: float = 0.5):
    a = np.ones(N.shape[0])
    for _ in range(iters):
        Na = N @ a
        if np.any(Na <= 0):
            break
        a = np.exp((1 - damping) * np.log(a) + damping * np.log(1.0 / Na))
    return a, float(np.abs(N @ a - 1.0 / a).max())


def nash_aggregate(G: np.ndarray, tol: float = NASH_TOL, max_iter: int = NASH_MAX_ITER) -> AggregationResult:
    """Nash-bargaining weights alpha > 0 solving (G^T G) alpha = 1/alpha.

    The system is solved on the column-normalised Gram matrix (so alpha starts
    at 1/||g_i|| and the update is invariant to column rescaling) and the
    residual is then checked on the original system.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[1] < 1 or not np.all(np.isfinite(G)):
        raise AggregationError("gradient matrix must be finite with at least one column")
    M = G.T @ G
    rank = gram_rank(M)
    regularized = False
    if np.linalg.eigvalsh(M).min() < NASH_REG_TRIGGER:
        M = M + NASH_REG * np.eye(M.shape[0])
        regularized = True
    norms = np.sqrt(np.diag(M))
    N = M / np.outer(norms, norms)
    a, _, iters = _nash_newton(N, max_iter)
    method = "newton"
    alpha = None if a is None else a / norms
    if alpha is None or np.abs(M @ alpha - 1.0 / alpha).max() >= tol:
        a, _ = _nash_fixed_point(N, NASH_FALLBACK_ITER)
        method = "fixed_point"
        iters = NASH_FALLBACK_ITER
        alpha = a / norms
    residual = float(np.abs(M @ alpha - 1.0 / alpha).max())
    if not (residual < tol and np.all(alpha > 0)):
        raise AggregationError("Nash solver did not converge", residual)
    return AggregationResult(G @ alpha, alpha, {"residual": residual, "iterations": int(iters),
                                                "method": method, "regularized": regularized,
                                                "rank": rank})


def aligned_aggregate(G: np.ndarray, w=None, rtol: float = ALIGNED_RANK_RTOL) -> AggregationResult:
    """Aligned update G B w with B = sqrt(lambda_R) V Sigma^-1 V^T on the retained spectrum."""
    G = np.asarray(G, dtype=np.float64)
    T = G.shape[1]
    w = np.ones(T) if w is None else np.asarray(w, dtype=np.float64)
    if w.shape != (T,):
        raise ValueError("task weights must have one entry per column")
    M = G.T @ G
    lam, V = np.linalg.eigh(M)
    if lam.max() <= 0 or not np.any(G):
        raise AggregationError("degenerate gradient system")
    keep = lam > lam.max() * rtol
    lam_r, V_r = lam[keep], V[:, keep]
    lam_min = lam_r.min()
    B = np.sqrt(lam_min) * (V_r / np.sqrt(lam_r)) @ V_r.T
    alpha = B @ w
    cond = float(np.sqrt(lam_r.max() / lam_min))
    return AggregationResult(G @ alpha, alpha, {"residual": 0.0, "iterations": 0, "rank": int(keep.sum()),
                                                "sigma": float(np.sqrt(lam_min)), "condition": cond,
                                                "B": B})
