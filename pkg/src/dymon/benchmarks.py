"""Metrics (1-D EMD, MSE, latent cycle check) and EM-fitted baselines:
a 1-D Gaussian HMM (Baum-Welch) and a linear-Gaussian state-space model
(Kalman filter + RTS smoother E-step)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, DimensionError
from .numcore import make_rng
from .transitions import knn_indices

log = logging.getLogger(__name__)

COV_FLOOR = 1e-12


# -- metrics -------------------------------------------------------------------

def emd_1d(a, b, seed: int = 0) -> float:
    """Wasserstein-1 between two 1-D empirical distributions.

    Unequal sizes: the larger sample is subsampled without replacement.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ConfigurationError("emd_1d needs non-empty samples")
    if a.size != b.size:
        rng = make_rng(seed)
        if a.size > b.size:
            a = rng.choice(a, size=b.size, replace=False)
        else:
            b = rng.choice(b, size=a.size, replace=False)
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def latent_cycle_report(latent) -> dict:
    """Does the mutual 2-nearest-neighbour graph form one closed cycle?

    ``residual`` is the coefficient of variation of distances to the centroid
    (0 for a perfect circle). Never raises on well-formed input.
    """
    z = np.asarray(latent, dtype=np.float64)
    n = z.shape[0]
    nbrs = knn_indices(z, 2)
    pairs = {(i, int(j)) for i in range(n) for j in nbrs[i]}
    edges = [(i, j) for i, j in pairs if i < j and (j, i) in pairs]
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    if edges:
        rows, cols = zip(*edges)
        graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
        n_comp = connected_components(graph, directed=False)[0]
    else:
        n_comp = n
    radii = np.linalg.norm(z - z.mean(axis=0), axis=1)
    residual = float(radii.std() / radii.mean()) if radii.mean() > 0 else float("inf")
    values, counts = np.unique(deg, return_counts=True)
    return {
        "is_single_cycle": bool(np.all(deg == 2) and n_comp == 1),
        "degree_histogram": {int(v): int(c) for v, c in zip(values, counts)},
        "components": int(n_comp),
        "residual": residual,
    }


# -- Gaussian HMM ----------------------------------------------------------------

@dataclass
class GaussianHmm:
    initial: np.ndarray  # (S,)
    transition: np.ndarray  # (S, S), rows sum to 1
    means: np.ndarray
    stds: np.ndarray
    log_likelihoods: list = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if abs(self.initial.sum() - 1) > 1e-9 or np.any(np.abs(self.transition.sum(axis=1) - 1) > 1e-9):
            raise ConfigurationError("initial distribution and transition rows must sum to 1")
        if np.any(self.stds <= 0):
            raise ConfigurationError("emission stds must be positive")


def _emission_probs(x, means, stds):
    z = (x[:, None] - means[None, :]) / stds[None, :]
    return np.exp(-0.5 * z * z) / (stds[None, :] * math.sqrt(2 * math.pi))


def _forward_backward(x, pi, A, means, stds):
    """Scaled forward-backward. Returns (loglik, gamma (T,S), xi_sum (S,S))."""
    T, S = x.size, pi.size
    B = _emission_probs(x, means, stds)
    # guard against all-zero rows far out in the tails
    B = np.maximum(B, 1e-300)
    alpha = np.empty((T, S))
    c = np.empty(T)
    a = pi * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    AT = A.T.copy()
    for t in range(1, T):
        a = (AT @ alpha[t - 1]) * B[t]
        s = a.sum()
        c[t] = s
        alpha[t] = a / s
    beta = np.empty((T, S))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (B[t + 1] * beta[t + 1])) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi_sum = A * (alpha[:-1].T @ (B[1:] * beta[1:] / c[1:, None]))
    return float(np.log(c).sum()), gamma, xi_sum


def hmm_fit(data, n_states: int = 4, n_iters: int = 50, seed: int = 0, tol: float = 0.0) -> GaussianHmm:
    """Baum-Welch for 1-D Gaussian emissions. ``log_likelihoods[i]`` is the
    log-likelihood of the parameters entering iteration i."""
    x = np.asarray(data, dtype=np.float64).ravel()
    S = int(n_states)
    if S < 1:
        raise ConfigurationError("n_states must be >= 1")
    if x.size < 10 * S:
        raise ConfigurationError(f"need at least {10 * S} observations for {S} states")
    rng = make_rng(seed)
    spread = x.std() if x.std() > 0 else 1.0
    var_floor = (1e-3 * spread) ** 2
    means = np.quantile(x, (np.arange(S) + 0.5) / S)
    stds = np.full(S, spread / S if S > 1 else spread)
    A = np.full((S, S), 0.1 / S) + 0.9 * np.eye(S)
    A /= A.sum(axis=1, keepdims=True)
    pi = np.full(S, 1.0 / S)
    lls = []
    for _ in range(n_iters):
        ll, gamma, xi = _forward_backward(x, pi, A, means, stds)
        lls.append(ll)
        mass = gamma.sum(axis=0)
        pi = gamma[0] / gamma[0].sum()
        A = xi / np.maximum(xi.sum(axis=1, keepdims=True), 1e-300)
        for s in range(S):
            if mass[s] < 1e-8:
                log.warning("HMM state %d lost all responsibility; re-seeding", s)
                means[s] = x[rng.integers(x.size)]
                stds[s] = spread
                A[s] = 1.0 / S
                continue
            means[s] = gamma[:, s] @ x / mass[s]
            var = gamma[:, s] @ (x - means[s]) ** 2 / mass[s]
            stds[s] = math.sqrt(max(var, var_floor))
        A /= A.sum(axis=1, keepdims=True)
        if tol > 0 and len(lls) > 1 and abs(lls[-1] - lls[-2]) < tol:
            break
    pi = pi / pi.sum()
    return GaussianHmm(pi, A, means.copy(), stds.copy(), lls)


def hmm_sample(model: GaussianHmm, n: int, seed: int = 0, return_states: bool = False):
    rng = make_rng(seed)
    S = model.n_states
    cum = np.cumsum(model.transition, axis=1)
    u = rng.random(n)
    states = np.empty(n, dtype=int)
    s = int(np.searchsorted(np.cumsum(model.initial), u[0], side="right"))
    states[0] = min(s, S - 1)
    for t in range(1, n):
        s = int(np.searchsorted(cum[states[t - 1]], u[t], side="right"))
        states[t] = min(s, S - 1)
    x = model.means[states] + model.stds[states] * rng.standard_normal(n)
    return (x, states) if return_states else x


# -- linear-Gaussian state-space model ------------------------------------------

@dataclass
class KalmanModel:
    transition: np.ndarray  # A (p, p)
    observation: np.ndarray  # C (q, p)
    process_cov: np.ndarray  # Q (p, p)
    observation_cov: np.ndarray  # R (q, q)
    initial_mean: np.ndarray  # (p,)
    initial_cov: np.ndarray  # (p, p)
    log_likelihoods: list = field(default_factory=list)


def _clamp_psd(M, name, warned):
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if np.any(w < COV_FLOOR):
        if w.min() < 0 and name not in warned:
            log.warning("%s lost positive semi-definiteness; clamping eigenvalues", name)
            warned.add(name)
        w = np.maximum(w, COV_FLOOR)
        M = (V * w) @ V.T
    return M


def _kalman_smooth(y, A, C, Q, R, mu0, V0):
    """Filter + RTS smoother. Returns loglik, smoothed means, covs, lag-one covs."""
    T, q = y.shape
    p = A.shape[0]
    xf = np.empty((T, p))
    Vf = np.empty((T, p, p))
    xp = np.empty((T, p))
    Vp = np.empty((T, p, p))
    ll = 0.0
    x_pred, V_pred = mu0, V0
    log2pi = q * math.log(2 * math.pi)
    for t in range(T):
        xp[t], Vp[t] = x_pred, V_pred
        S = C @ V_pred @ C.T + R
        innov = y[t] - C @ x_pred
        S_inv = np.linalg.inv(S)
        K = V_pred @ C.T @ S_inv
        xf[t] = x_pred + K @ innov
        Vf[t] = V_pred - K @ C @ V_pred
        sign, logdet = np.linalg.slogdet(S)
        ll -= 0.5 * (log2pi + logdet + innov @ S_inv @ innov)
        x_pred = A @ xf[t]
        V_pred = A @ Vf[t] @ A.T + Q
    xs = xf.copy()
    Vs = Vf.copy()
    Vlag = np.empty((T, p, p))  # Vlag[t] = Cov(z_t, z_{t-1} | all), t >= 1
    for t in range(T - 2, -1, -1):
        J = Vf[t] @ A.T @ np.linalg.inv(Vp[t + 1])
        xs[t] = xf[t] + J @ (xs[t + 1] - xp[t + 1])
        Vs[t] = Vf[t] + J @ (Vs[t + 1] - Vp[t + 1]) @ J.T
        Vlag[t + 1] = Vs[t + 1] @ J.T
    return ll, xs, Vs, Vlag


def kalman_fit_em(data, n_iters: int = 20, latent_dim: int = 1) -> KalmanModel:
    """EM for z' = A z + w, y = C z + v with every parameter learned."""
    y = np.asarray(data, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    T, q = y.shape
    p = int(latent_dim)
    if T < 20:
        raise ConfigurationError("need at least 20 observations")
    var = np.atleast_1d(y.var(axis=0))
    scale = float(max(var.mean(), COV_FLOOR))
    A = 0.9 * np.eye(p)
    C = np.zeros((q, p))
    C[: min(p, q), : min(p, q)] = np.eye(min(p, q))
    Q = 0.5 * scale * np.eye(p)
    R = 0.5 * scale * np.eye(q)
    mu0 = np.zeros(p)
    mu0[: min(p, q)] = y[0, : min(p, q)]
    V0 = scale * np.eye(p)
    warned = set()
    lls = []
    for _ in range(n_iters):
        ll, xs, Vs, Vlag = _kalman_smooth(y, A, C, Q, R, mu0, V0)
        lls.append(ll)
        P = Vs + xs[:, :, None] * xs[:, None, :]
        Plag = Vlag[1:] + xs[1:, :, None] * xs[:-1, None, :]  # E[z_t z_{t-1}^T], t >= 1
        sum_P = P.sum(axis=0)
        C = (y.T @ xs) @ np.linalg.inv(sum_P)
        R = _clamp_psd((y.T @ y - C @ (xs.T @ y)) / T, "observation_cov", warned)
        A = Plag.sum(axis=0) @ np.linalg.inv(sum_P - P[-1])
        Q = _clamp_psd((sum_P - P[0] - A @ Plag.sum(axis=0).T) / (T - 1), "process_cov", warned)
        mu0 = xs[0].copy()
        V0 = _clamp_psd(Vs[0], "initial_cov", warned)
    return KalmanModel(A, C, Q, R, mu0, V0, lls)


def kalman_sample(model: KalmanModel, n: int, seed: int = 0) -> np.ndarray:
    rng = make_rng(seed)
    p = model.transition.shape[0]
    q = model.observation.shape[0]
    Lq = np.linalg.cholesky(_clamp_psd(model.process_cov, "process_cov", set()))
    Lr = np.linalg.cholesky(_clamp_psd(model.observation_cov, "observation_cov", set()))
    L0 = np.linalg.cholesky(_clamp_psd(model.initial_cov, "initial_cov", set()))
    z = model.initial_mean + L0 @ rng.standard_normal(p)
    out = np.empty((n, q))
    for t in range(n):
        out[t] = model.observation @ z + Lr @ rng.standard_normal(q)
        z = model.transition @ z + Lq @ rng.standard_normal(p)
    return out
