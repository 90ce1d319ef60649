"""Exact t-SNE (O(M^2) per iteration), intended for a few thousand points."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MACHINE_EPS = np.finfo(np.float64).eps


class TSNEParameterError(ValueError):
    pass


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl_history: list[tuple[int, float]] = field(default_factory=list)
    exaggeration_iters: int = 250


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_probabilities(sq_dist: np.ndarray, perplexity: float, tol: float = 1e-5,
                              max_iter: int = 100) -> np.ndarray:
    """Row-wise Gaussian affinities whose entropy matches log(perplexity)."""
    m = sq_dist.shape[0]
    target = np.log(perplexity)
    P = np.zeros((m, m))
    for i in range(m):
        d = np.delete(sq_dist[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_iter):
            shifted = d - d.min()
            w = np.exp(-shifted * beta)
            s = w.sum()
            p = w / s
            entropy = beta * np.sum(shifted * p) + np.log(s)
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        P[i, np.arange(m) != i] = p
    return P


def _kl(P: np.ndarray, Y: np.ndarray) -> float:
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne_embed(features: np.ndarray, perplexity: float = 30.0, seed: int = 0, iters: int = 1000,
               *, early_exaggeration: float = 12.0, exaggeration_iters: int = 250,
               learning_rate: float | None = None, record_every: int = 10,
               init: str = "pca") -> TSNEResult:
    """Embed M x F features into 2-D.

    ``init="pca"`` starts from the top two principal components scaled to a
    standard deviation of 1e-4 (plus a seeded 1e-8 jitter); random starts can
    tear a neighbourhood into two distant groups. ``init="random"`` draws the
    start from N(0, 1e-4) with ``seed``.

    Gradient descent with momentum (0.5 then 0.8) and per-coordinate gains;
    P is exaggerated for the first ``exaggeration_iters`` iterations. The KL
    divergence is recorded every ``record_every`` iterations.
    """
    X = np.asarray(features, dtype=np.float64)
    m = X.shape[0]
    if perplexity <= 0 or 3.0 * perplexity >= m:
        raise TSNEParameterError(f"perplexity {perplexity} infeasible for {m} points (need 3*perplexity < M)")
    if learning_rate is None:
        learning_rate = max(m / early_exaggeration / 4.0, 50.0)
    P = conditional_probabilities(_sq_distances(X), perplexity)
    P = (P + P.T) / (2.0 * m)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(seed)
    if init == "pca":
        Xc = X - X.mean(axis=0)
        u, sv, _ = np.linalg.svd(Xc, full_matrices=False)
        Y = np.zeros((m, 2))
        k = min(2, u.shape[1])
        Y[:, :k] = u[:, :k] * sv[:k]
        # fix the SVD sign ambiguity so the start is platform independent
        signs = np.sign(Y[np.argmax(np.abs(Y), axis=0), np.arange(2)])
        Y *= np.where(signs == 0, 1.0, signs)
        scale = Y[:, 0].std()
        Y = 1e-4 * Y / scale if scale > 0 else np.zeros_like(Y)
        Y += 1e-8 * rng.standard_normal((m, 2))
    elif init == "random":
        Y = 1e-4 * rng.standard_normal((m, 2))
    else:
        raise TSNEParameterError(f"unknown init {init!r}; use 'pca' or 'random'")
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history: list[tuple[int, float]] = []
    for it in range(iters):
        exag = early_exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        num = 1.0 / (1.0 + _sq_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        inc = update * grad < 0.0
        gains[inc] += 0.2
        gains[~inc] *= 0.8
        np.clip(gains, 0.01, None, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        if (it + 1) % record_every == 0 or it + 1 == iters:
            history.append((it + 1, _kl(P, Y)))
    Y = Y - Y.mean(axis=0)
    return TSNEResult(Y, history, exaggeration_iters)
