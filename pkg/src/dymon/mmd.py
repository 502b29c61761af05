"""Multi-scale Gaussian-kernel MMD and its gradient w.r.t. generated samples.

The kernel for a bandwidth set S is k(x, y) = sum_{s in S} exp(-|x - y|^2 / s).
All estimators here are the biased V-statistic, which is nonnegative and
exactly zero for identical samples.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError

DEFAULT_BANDWIDTHS = np.logspace(-6.0, 6.0, 19)


def check_bandwidths(bw=None) -> np.ndarray:
    if bw is None:
        return DEFAULT_BANDWIDTHS.copy()
    bw = np.atleast_1d(np.asarray(bw, dtype=np.float64))
    if bw.ndim != 1 or bw.size == 0:
        raise ConfigurationError("bandwidth set must be a non-empty 1-D list")
    if np.any(bw <= 0) or not np.all(np.isfinite(bw)):
        raise ConfigurationError("bandwidths must be positive and finite")
    if np.any(np.diff(bw) <= 0):
        raise ConfigurationError("bandwidths must be strictly increasing")
    return bw


def sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances over the last axis, clipped at 0.

    Works on (n, d) x (m, d) and on batched (B, n, d) x (B, m, d).
    """
    if X.shape[-1] <= 8:
        # direct differences: no cancellation for nearby points
        diff = X[..., :, None, :] - Y[..., None, :, :]
        return np.einsum("...k,...k->...", diff, diff)
    xx = np.sum(X * X, axis=-1)[..., :, None]
    yy = np.sum(Y * Y, axis=-1)[..., None, :]
    d2 = xx + yy - 2.0 * (X @ np.swapaxes(Y, -1, -2))
    return np.maximum(d2, 0.0)


def _kernel_and_slope(d2: np.ndarray, bw: np.ndarray):
    """Sum over bandwidths of exp(-d2/s) and of (2/s) exp(-d2/s)."""
    k = np.zeros_like(d2)
    g = np.zeros_like(d2)
    e = np.empty_like(d2)
    for s in bw:
        np.multiply(d2, -1.0 / s, out=e)
        np.exp(e, out=e)
        k += e
        e *= 2.0 / s
        g += e
    return k, g


def _as_samples(A, name):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D sample matrix")
    if A.shape[0] == 0:
        raise ConfigurationError(f"{name} is an empty sample set")
    return A


def _check_pair(X, Y):
    X = _as_samples(X, "X")
    Y = _as_samples(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def multiscale_kernel_matrix(X, Y, bw=None) -> np.ndarray:
    X, Y = _check_pair(X, Y)
    bw = check_bandwidths(bw)
    d2 = sq_dists(X, Y)
    return sum(np.exp(-d2 / s) for s in bw)


def mmd2(X, Y, bw=None) -> float:
    X, Y = _check_pair(X, Y)
    bw = check_bandwidths(bw)
    kxx = multiscale_kernel_matrix(X, X, bw).mean()
    kyy = multiscale_kernel_matrix(Y, Y, bw).mean()
    kxy = multiscale_kernel_matrix(X, Y, bw).mean()
    return float(kxx + kyy - 2.0 * kxy)


def mmd2_grad_wrt_Y(X, Y, bw=None) -> np.ndarray:
    """d mmd2(X, Y) / d Y, shape (m, d)."""
    X, Y = _check_pair(X, Y)
    bw = check_bandwidths(bw)
    n, m = X.shape[0], Y.shape[0]
    _, gyy = _kernel_and_slope(sq_dists(Y, Y), bw)
    _, gyx = _kernel_and_slope(sq_dists(Y, X), bw)
    # explicit differences: no cancellation when points sit far from the origin
    within = np.einsum("ij,ijk->ik", gyy, Y[:, None, :] - Y[None, :, :])
    cross = np.einsum("ij,ijk->ik", gyx, Y[:, None, :] - X[None, :, :])
    return -2.0 / m**2 * within + 2.0 / (m * n) * cross


def batched_mmd2(gen: np.ndarray, targets: np.ndarray, weights: np.ndarray, bw: np.ndarray,
                 target_term: np.ndarray | None = None):
    """Per-group MMD^2 between generated sets and weighted target sets.

    gen: (B, m, d) generated samples, uniform weight 1/m each.
    targets: (B, K, d) padded target sets; weights: (B, K), rows sum to 1,
    zero on padding. ``target_term`` optionally supplies the precomputed
    sum_jk w_j w_k k(t_j, t_k) per group, which does not depend on ``gen``.

    Returns (loss (B,), grad w.r.t. gen (B, m, d)).
    """
    B, m, _ = gen.shape
    a = 1.0 / m
    kgg, ggg = _kernel_and_slope(sq_dists(gen, gen), bw)
    kgt, ggt = _kernel_and_slope(sq_dists(gen, targets), bw)
    if target_term is None:
        ktt, _ = _kernel_and_slope(sq_dists(targets, targets), bw)
        target_term = np.einsum("bj,bjk,bk->b", weights, ktt, weights)
    loss = a * a * kgg.sum(axis=(1, 2)) + target_term - 2.0 * a * np.einsum("bij,bj->b", kgt, weights)

    ggt_w = ggt * weights[:, None, :]
    within = gen * ggg.sum(axis=2, keepdims=True) - ggg @ gen
    cross = gen * ggt_w.sum(axis=2, keepdims=True) - ggt_w @ targets
    grad = -2.0 * a * a * within + 2.0 * a * cross
    return loss, grad


def target_self_term(targets: np.ndarray, weights: np.ndarray, bw: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(targets.shape[0])
    for s in range(0, targets.shape[0], chunk):  # bounded memory for many large groups
        t, w = targets[s: s + chunk], weights[s: s + chunk]
        ktt, _ = _kernel_and_slope(sq_dists(t, t), bw)
        out[s: s + chunk] = np.einsum("bj,bjk,bk->b", w, ktt, w)
    return out
