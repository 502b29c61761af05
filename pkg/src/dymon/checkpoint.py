"""Versioned plain-text checkpoint format.

Layout::

    dymon-checkpoint <version>
    architecture = 1
    order = 2
    state_dim = 2
    noise_dim = 0
    rng_seed = 0
    standardizer_mean = <d floats>
    standardizer_scale = <d floats>
    net transition = <layer sizes>
    W0 = <row>            # one line per weight-matrix row
    ...
    b0 = <floats>
    ...
    end

Floats are written with 17 significant digits, so a load/save round trip
reproduces every 64-bit value and the file bytes exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import ParseError, VersionError
from .model import DymonModel, Standardizer
from .numcore import Params

MAGIC = "dymon-checkpoint"
FORMAT_VERSION = 1
_HEADER_INTS = ("architecture", "order", "state_dim", "noise_dim", "rng_seed")


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _row(values) -> str:
    return " ".join(fmt(v) for v in np.ravel(values))


def dumps(model: DymonModel) -> str:
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    for key in _HEADER_INTS:
        lines.append(f"{key} = {int(getattr(model, key))}")
    lines.append(f"standardizer_mean = {_row(model.standardizer.mean)}")
    lines.append(f"standardizer_scale = {_row(model.standardizer.scale)}")
    nets = [("transition", model.transition_net), ("encoder", model.encoder), ("decoder", model.decoder)]
    for name, p in nets:
        if p is None:
            continue
        lines.append(f"net {name} = {' '.join(str(s) for s in p.layer_sizes)}")
        for i, (w, b) in enumerate(zip(p.weights, p.biases)):
            for r in w:
                lines.append(f"W{i} = {_row(r)}")
            lines.append(f"b{i} = {_row(b)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model: DymonModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


class _Lines:
    def __init__(self, text: str):
        self.items = []
        offset = 0
        for raw in text.split("\n"):
            self.items.append((offset, raw))
            offset += len(raw.encode("utf-8")) + 1
        self.pos = 0
        self.end_offset = len(text.encode("utf-8"))

    def next(self, what: str):
        while self.pos < len(self.items):
            off, line = self.items[self.pos]
            self.pos += 1
            if line.strip():
                return off, line
        raise ParseError(f"unexpected end of file while reading {what}", self.end_offset)

    def keyed(self, key: str):
        off, line = self.next(key)
        name, sep, value = line.partition("=")
        if not sep or name.strip() != key:
            raise ParseError(f"expected '{key} = ...', found {line[:40]!r}", off)
        return off, value.strip()


def _floats(value: str, off: int, count: int | None = None) -> np.ndarray:
    try:
        arr = np.array([float(tok) for tok in value.split()], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}", off) from None
    if count is not None and arr.size != count:
        raise ParseError(f"expected {count} values, found {arr.size}", off)
    return arr


def loads(text: str) -> DymonModel:
    lines = _Lines(text)
    off, first = lines.next("header")
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise ParseError("not a dymon checkpoint", off)
    try:
        version = int(parts[1])
    except ValueError:
        raise ParseError(f"bad format version {parts[1]!r}", off) from None
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")

    header = {}
    for key in _HEADER_INTS:
        off, value = lines.keyed(key)
        try:
            header[key] = int(value)
        except ValueError:
            raise ParseError(f"{key} must be an integer", off) from None
    d = header["state_dim"]
    off, v = lines.keyed("standardizer_mean")
    mean = _floats(v, off, d)
    off, v = lines.keyed("standardizer_scale")
    scale = _floats(v, off, d)

    nets = {}
    while True:
        off, line = lines.next("network or end marker")
        if line.strip() == "end":
            break
        name, sep, value = line.partition("=")
        tokens = name.split()
        if not sep or len(tokens) != 2 or tokens[0] != "net" or tokens[1] in nets:
            raise ParseError(f"expected 'net <name> = <sizes>', found {line[:40]!r}", off)
        try:
            sizes = [int(s) for s in value.split()]
        except ValueError:
            raise ParseError("layer sizes must be integers", off) from None
        if len(sizes) < 2 or min(sizes) < 1:
            raise ParseError("degenerate layer sizes", off)
        weights, biases = [], []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = np.empty((fi, fo))
            for r in range(fi):
                off, v = lines.keyed(f"W{i}")
                w[r] = _floats(v, off, fo)
            off, v = lines.keyed(f"b{i}")
            weights.append(w)
            biases.append(_floats(v, off, fo))
        nets[tokens[1]] = Params(weights, biases)
    off, trailing = (lines.next("eof") if any(l.strip() for _, l in lines.items[lines.pos:]) else (None, None))
    if trailing is not None:
        raise ParseError("content after end marker", off)
    if "transition" not in nets:
        raise ParseError("missing transition network", lines.end_offset)
    try:
        return DymonModel(header["architecture"], header["order"], d, header["noise_dim"],
                          nets["transition"], Standardizer(mean, scale), nets.get("encoder"),
                          nets.get("decoder"), header["rng_seed"])
    except ValueError as exc:
        raise ParseError(f"inconsistent checkpoint: {exc}", 0) from None


def load_model(path) -> DymonModel:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return loads(fh.read())
