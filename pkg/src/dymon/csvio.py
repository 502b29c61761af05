"""CSV formats for trajectories, transition sets and labeled point clouds.

trajectory:   t,x0,...,x{d-1}
transitions:  group_id,role,x0,...,x{d-1}   role in history0..history{n-1}, target
points:       label,x0,...,x{d-1}

Every float is written with 17 significant digits, which round-trips 64-bit
values exactly. Rows end with a bare newline on every platform so files are
byte-identical across runs.
"""
from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .errors import ParseError
from .systems import Trajectory
from .transitions import TimePointCloud, TransitionDataset

_ROLE = re.compile(r"history(\d+)$")


def fmt(v) -> str:
    return format(float(v), ".17g")


def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def _read(path, lead: list[str]):
    """Rows of a CSV whose header starts with ``lead`` followed by x0..x{d-1}."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    k = len(lead)
    if header[:k] != lead:
        raise ParseError(f"{path}: row 1: header must start with {','.join(lead)}")
    d = len(header) - k
    if d < 1 or header[k:] != [f"x{i}" for i in range(d)]:
        raise ParseError(f"{path}: row 1: expected columns x0..x{{d-1}} after {','.join(lead)}")
    body = []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: row {n}: expected {len(header)} fields, found {len(r)}")
        body.append((n, r))
    return d, body


def _floats(path, n, cells):
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise ParseError(f"{path}: row {n}: {exc}") from None


def write_trajectory(path, states, times=None):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if times is None:
        times = np.arange(len(states), dtype=np.float64)
    header = ["t"] + [f"x{i}" for i in range(states.shape[1])]
    _write(path, header, ([fmt(t)] + [fmt(v) for v in s] for t, s in zip(times, states)))


def read_trajectory(path) -> Trajectory:
    d, body = _read(path, ["t"])
    if not body:
        raise ParseError(f"{path}: no data rows")
    vals = np.array([_floats(path, n, r) for n, r in body])
    t = vals[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    return Trajectory(vals[:, 1:], dt, {"times": t})


def write_transitions(path, ds: TransitionDataset):
    header = ["group_id", "role"] + [f"x{i}" for i in range(ds.state_dim)]

    def rows():
        for g, (h, y) in enumerate(zip(ds.histories, ds.targets)):
            for j, s in enumerate(h):
                yield [str(g), f"history{j}"] + [fmt(v) for v in s]
            for s in y:
                yield [str(g), "target"] + [fmt(v) for v in s]

    _write(path, header, rows())


def read_transitions(path) -> TransitionDataset:
    """Groups must be contiguous; histories list history0..history{n-1} before targets."""
    d, body = _read(path, ["group_id", "role"])
    groups = []  # [gid, history rows, target rows]
    order = None
    for n, r in body:
        gid, role = r[0], r[1]
        vec = _floats(path, n, r[2:])
        if not groups or groups[-1][0] != gid:
            if any(g[0] == gid for g in groups):
                raise ParseError(f"{path}: row {n}: group {gid} is not contiguous")
            groups.append([gid, [], []])
        g = groups[-1]
        m = _ROLE.match(role)
        if m:
            if g[2] or int(m.group(1)) != len(g[1]):
                raise ParseError(f"{path}: row {n}: expected history{len(g[1])} before targets, found {role}")
            g[1].append(vec)
        elif role == "target":
            if not g[1]:
                raise ParseError(f"{path}: row {n}: target before any history row")
            g[2].append(vec)
        else:
            raise ParseError(f"{path}: row {n}: unknown role {role!r}")
    if not groups:
        raise ParseError(f"{path}: no data rows")
    for gid, h, y in groups:
        if order is None:
            order = len(h)
        if len(h) != order:
            raise ParseError(f"{path}: group {gid} has {len(h)} history rows, expected {order}")
        if not y:
            raise ParseError(f"{path}: group {gid} has no target rows")
    return TransitionDataset(np.array([g[1] for g in groups]), [np.array(g[2]) for g in groups],
                             provenance=str(path))


def write_points(path, cloud: TimePointCloud):
    header = ["label"] + [f"x{i}" for i in range(cloud.points.shape[1])]
    _write(path, header, ([fmt(l)] + [fmt(v) for v in p] for l, p in zip(cloud.time_labels, cloud.points)))


def read_points(path) -> TimePointCloud:
    _, body = _read(path, ["label"])
    if not body:
        raise ParseError(f"{path}: no data rows")
    vals = np.array([_floats(path, n, r) for n, r in body])
    return TimePointCloud(vals[:, 1:], vals[:, 0])


def write_table(path, header, rows):
    """Generic CSV; floats get 17 significant digits, everything else str()."""
    def cell(v):
        return fmt(v) if isinstance(v, (float, np.floating)) else str(v)

    _write(path, header, ([cell(v) for v in r] for r in rows))


def ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
