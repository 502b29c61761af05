"""Flat ``key = value`` experiment configuration.

One document can drive a whole pipeline: every artifact has its own path key
(trajectory_path, transitions_path, checkpoint_path, ...), so ``simulate``
writes what ``build-transitions`` reads, and so on. Keys a subcommand does not
use are ignored; keys no subcommand knows are rejected with their line number.
"""
from __future__ import annotations

from .errors import ConfigurationError


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


# key -> (parser, default); default None means "required when used"
KEYS = {
    "seed": (int, 0),
    # artifact paths
    "trajectory_path": (str, None),
    "points_path": (str, None),
    "transitions_path": (str, None),
    "checkpoint_path": (str, None),
    "loss_path": (str, None),
    "generated_path": (str, None),
    "reference_path": (str, None),
    "metrics_path": (str, None),
    "jacobian_path": (str, None),
    "comparison_path": (str, None),
    # simulation
    "system": (str, None),
    "steps": (int, 1000),
    "dt": (_opt_float, None),
    "theta0": (float, 1.0),
    "omega0": (float, 0.0),
    "g": (float, 9.81),
    "length": (float, 1.0),
    "angles0": (_floats, (2.0, 2.5)),
    "omegas0": (_floats, (0.0, 0.0)),
    "masses": (_floats, (1.0, 1.0)),
    "lengths": (_floats, (1.0, 1.0)),
    "gmm_weights": (_floats, (0.3, 0.4, 0.3)),
    "gmm_means": (_floats, (-4.0, 0.0, 4.0)),
    "gmm_stds": (_floats, (1.0, 1.0, 1.0)),
    "proposal_std": (float, 4.0),
    "burn_in": (int, 1000),
    "thin": (int, 1),
    "image_px": (int, 16),
    "frames": (int, 400),
    "phase": (float, 0.0),
    # transitions
    "transition_mode": (str, "trajectory"),
    "step_size": (int, 1),
    "step_jitter": (int, 0),
    "order": (int, 1),
    "neighbor_k": (int, 0),
    "sigma": (float, 1.0),
    "affinity_k": (int, 10),
    "smoothing_k": (int, 5),
    # architecture
    "architecture": (int, 1),
    "hidden": (_ints, (64, 64, 64)),
    "latent_dim": (int, 3),
    "ae_hidden": (_ints, (64,)),
    "noise_dim": (_opt_int, None),
    # training
    "epochs": (int, 100),
    "batch_groups": (int, 64),
    "m_generated": (_opt_int, None),
    "corruption_std": (float, 0.05),
    "learning_rate": (float, 1e-3),
    "lr_final": (_opt_float, None),
    "steps_per_epoch": (_opt_int, None),
    "recon_weight": (float, 1.0),
    "bandwidths": (_floats, None),
    # generation
    "init": (_floats, None),
    "init_index": (int, -1),
    # jacobian
    "points": (str, None),
    # compare-gmm
    "n_train": (int, 50_000),
    "n_eval": (int, 5_000),
    "hmm_states": (int, 4),
    "hmm_iters": (int, 50),
    "kf_iters": (int, 20),
    "normalize": (_bool, True),
}


class Config:
    def __init__(self, values: dict | None = None, lines: dict | None = None):
        self.values = dict(values or {})
        self.lines = dict(lines or {})

    def set(self, key: str, raw: str, where: str):
        key = key.strip()
        if key not in KEYS:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        try:
            self.values[key] = KEYS[key][0](raw.strip())
        except ValueError as exc:
            raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None
        self.lines[key] = where

    def get(self, key: str, default=...):
        if key in self.values:
            return self.values[key]
        if default is not ...:
            return default
        return KEYS[key][1]

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise ConfigurationError(f"missing required key {key!r}")
        return v

    def __contains__(self, key):
        return key in self.values


def parse_config(text: str, name: str = "<config>") -> Config:
    cfg = Config()
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"{name}: line {n}: expected 'key = value'")
        key, raw = body.split("=", 1)
        if key.strip() in cfg.values and cfg.lines.get(key.strip(), "").startswith(name):
            raise ConfigurationError(f"{name}: line {n}: duplicate key {key.strip()!r}")
        cfg.set(key, raw, f"{name}: line {n}")
    return cfg


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def apply_overrides(cfg: Config, pairs) -> Config:
    for i, p in enumerate(pairs or [], start=1):
        if "=" not in p:
            raise ConfigurationError(f"--set #{i}: expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        cfg.set(k, v, f"--set #{i}")
    return cfg
