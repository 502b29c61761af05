"""Build transition datasets (source history -> set of target states).

Sources come either from ordered trajectories or from an unordered point
cloud carrying time labels, where "later" neighbours define the direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DimensionError
from .numcore import make_rng

AFFINITY_LEVELS = 16


@dataclass
class TransitionDataset:
    histories: np.ndarray  # (G, order, d), oldest -> newest
    targets: list  # G arrays of shape (k_g, d)
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.histories = np.asarray(self.histories, dtype=np.float64)
        if self.histories.ndim != 3:
            raise DimensionError("histories must have shape (groups, order, d)")
        if len(self.targets) != self.histories.shape[0]:
            raise DimensionError("one target set per history is required")
        d = self.histories.shape[2]
        clean = []
        for i, y in enumerate(self.targets):
            y = np.asarray(y, dtype=np.float64)
            if y.ndim == 1:
                y = y[None, :]
            if y.shape[0] < 1:
                raise ConfigurationError(f"group {i} has no targets")
            if y.shape[1] != d:
                raise DimensionError(f"group {i} targets have dim {y.shape[1]}, expected {d}")
            clean.append(y)
        self.targets = clean

    @property
    def order(self) -> int:
        return self.histories.shape[1]

    @property
    def state_dim(self) -> int:
        return self.histories.shape[2]

    @property
    def sources(self) -> np.ndarray:
        """Most recent history state of every group, (G, d)."""
        return self.histories[:, -1, :]

    def __len__(self):
        return self.histories.shape[0]

    @property
    def groups(self):
        return list(zip(self.histories, self.targets))

    def target_counts(self) -> np.ndarray:
        return np.array([y.shape[0] for y in self.targets])

    def padded_targets(self):
        """(G, K, d) zero-padded targets plus (G, K) weights summing to 1 per row."""
        counts = self.target_counts()
        K = int(counts.max())
        G, d = len(self), self.state_dim
        out = np.zeros((G, K, d))
        w = np.zeros((G, K))
        for g, y in enumerate(self.targets):
            out[g, : y.shape[0]] = y
            w[g, : y.shape[0]] = 1.0 / y.shape[0]
        return out, w


@dataclass
class TimePointCloud:
    points: np.ndarray  # (N, d)
    time_labels: np.ndarray  # (N,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.time_labels = np.asarray(self.time_labels, dtype=np.float64).ravel()
        if self.points.shape[0] < 2:
            raise ConfigurationError("a point cloud needs at least 2 points")
        if self.time_labels.shape[0] != self.points.shape[0]:
            raise DimensionError("one time label per point is required")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.time_labels))):
            raise ConfigurationError("point cloud contains non-finite values")


def knn_indices(points: np.ndarray, k: int, include_self: bool = False) -> np.ndarray:
    """k nearest neighbours of every point, ties broken by ascending index.

    With include_self the point itself is always the first entry and k - 1
    others follow; otherwise the point itself is never returned.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    n_other = k - 1 if include_self else k
    if n_other < 0 or n_other > n - 1:
        raise ConfigurationError(f"cannot take {k} neighbours among {n} points")
    if n_other == 0:
        base = np.arange(n)[:, None]
        return base if include_self else np.empty((n, 0), dtype=int)

    tree = cKDTree(points)
    # extra candidates so that ties at the cut-off are usually all present
    q = min(n, n_other + 1 + 8)
    _, cand = tree.query(points, k=q)
    cand = np.atleast_2d(cand)
    out = np.empty((n, n_other), dtype=int)
    for i in range(n):
        idx = cand[i]
        idx = idx[idx != i]
        dist = np.sum((points[idx] - points[i]) ** 2, axis=1)
        order = np.lexsort((idx, dist))
        idx, dist = idx[order], dist[order]
        cutoff = dist[n_other - 1]
        if q < n and not dist[-1] > cutoff:
            # ties extend past the candidate list: take the full ball
            ball = np.array(tree.query_ball_point(points[i], np.sqrt(cutoff) * (1 + 1e-12) + 1e-300))
            ball = ball[ball != i]
            bd = np.sum((points[ball] - points[i]) ** 2, axis=1)
            order = np.lexsort((ball, bd))
            idx = ball[order]
        out[i] = idx[:n_other]
    if include_self:
        out = np.column_stack([np.arange(n), out])
    return out


def transitions_from_trajectory(traj, step_size: int = 1, order: int = 1, jitter: int = 0,
                                seed: int = 0) -> TransitionDataset:
    """Pairs (x_{t-(n-1)s}, ..., x_t) -> x_{t+s}.

    With jitter j > 0 the target offset of each pair is drawn uniformly from
    the integers in [s - j, s + j]; history spacing stays at s.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    s, n, j = int(step_size), int(order), int(jitter)
    if n < 1:
        raise ConfigurationError("order must be >= 1")
    if s - j < 1 or j < 0:
        raise ConfigurationError(f"step size {s} +/- {j} must stay >= 1")
    T = states.shape[0]
    minimum = n * s + j + 1
    if T < minimum:
        raise ConfigurationError(f"trajectory of length {T} too short: need at least {minimum} states")
    ts = np.arange((n - 1) * s, T - s - j)
    offsets = np.full(ts.shape, s)
    if j > 0:
        offsets = make_rng(seed).integers(s - j, s + j + 1, size=ts.shape)
    hist_idx = ts[:, None] + s * np.arange(-(n - 1), 1)[None, :]
    histories = states[hist_idx]
    targets = [states[t + o][None, :] for t, o in zip(ts, offsets)]
    return TransitionDataset(histories, targets, provenance="trajectory",
                             meta={"step_size": s, "jitter": j, "offsets": offsets})


def augment_targets_with_neighbors(ds: TransitionDataset, k: int) -> TransitionDataset:
    """Y_x <- own targets followed by the targets of the k nearest other sources."""
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    if k == 0:
        return ds
    k = min(k, len(ds) - 1)
    if k == 0:
        return ds
    nbrs = knn_indices(ds.sources, k)
    targets = [np.concatenate([ds.targets[g]] + [ds.targets[h] for h in nbrs[g]], axis=0)
               for g in range(len(ds))]
    meta = dict(ds.meta, neighbor_k=k)
    return TransitionDataset(ds.histories.copy(), targets, ds.provenance, meta)


def smooth_time_labels(cloud: TimePointCloud, k: int) -> np.ndarray:
    n = cloud.points.shape[0]
    if not 1 <= k < n:
        raise ConfigurationError(f"smoothing k must satisfy 1 <= k < {n}")
    nbrs = knn_indices(cloud.points, k, include_self=True)
    return cloud.time_labels[nbrs].mean(axis=1)


def directed_diffusion_transitions(cloud: TimePointCloud, sigma: float, k: int = 10,
                                   smoothing_k: int = 5) -> TransitionDataset:
    """Order-1 transitions to later Gaussian-affinity neighbours.

    Each retained neighbour y of x appears in Y_x round(16 w / w_max) times,
    with w = exp(-|x - y|^2 / sigma^2) and w_max the largest retained weight
    for x. Points with no later neighbour are terminal and dropped.
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    n = cloud.points.shape[0]
    k = min(int(k), n - 1)
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    labels = smooth_time_labels(cloud, smoothing_k) if smoothing_k > 1 else cloud.time_labels.copy()
    nbrs = knn_indices(cloud.points, k)
    sources, targets = [], []
    for i in range(n):
        later = nbrs[i][labels[nbrs[i]] > labels[i]]
        if later.size == 0:
            continue
        d2 = np.sum((cloud.points[later] - cloud.points[i]) ** 2, axis=1)
        w = np.exp(-d2 / sigma**2)
        if not w.max() > 0:
            continue
        mult = np.rint(AFFINITY_LEVELS * w / w.max()).astype(int)
        keep = mult > 0
        sources.append(i)
        targets.append(np.repeat(cloud.points[later[keep]], mult[keep], axis=0))
    if not sources:
        raise ConfigurationError("no later neighbors: time labels carry no direction")
    src = np.array(sources)
    return TransitionDataset(cloud.points[src][:, None, :], targets, provenance="directed_diffusion",
                             meta={"source_index": src, "smoothed_labels": labels})
