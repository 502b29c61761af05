"""Command-line entry point: ``dymon <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration/validation, 3 I/O, 4 numeric failure,
5 assertion failure (``eval --assert-below``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint, csvio
from .benchmarks import emd_1d, latent_cycle_report, mse
from .config import Config, apply_overrides, load_config
from .errors import ConfigurationError, DimensionError, NumericError, ParseError, VersionError
from .model import TrainConfig, build_model, generate_chain, jacobian, jacobian_fd, train_dymon
from .numcore import make_rng
from .systems import (GmmSpec, generate_rotating_sequence, sample_gmm_metropolis, simulate_double_pendulum,
                      simulate_pendulum)
from .transitions import augment_targets_with_neighbors, directed_diffusion_transitions, \
    transitions_from_trajectory
from .workloads import GmmWorkload, compare_gmm

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4, 5
SYSTEMS = ("pendulum", "double_pendulum", "gmm_mcmc", "rotating")
MODELS = ("dymon", "hmm", "kf")

log = logging.getLogger("dymon")


class AssertionFailed(Exception):
    pass


def _write(path, writer, *args):
    csvio.ensure_parent(path)
    writer(path, *args)


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(cfg: Config, args) -> None:
    system = cfg.require("system")
    if system not in SYSTEMS:
        raise ConfigurationError(f"unknown system {system!r}; valid options: {', '.join(SYSTEMS)}")
    out = cfg.require("trajectory_path")
    steps = cfg.get("steps")
    seed = cfg.get("seed")
    if system == "pendulum":
        traj = simulate_pendulum(cfg.get("theta0"), cfg.get("omega0"), cfg.get("g"), cfg.get("length"),
                                 cfg.get("dt") or 0.01, steps)
    elif system == "double_pendulum":
        traj = simulate_double_pendulum(cfg.get("angles0"), cfg.get("omegas0"), cfg.get("masses"),
                                        cfg.get("lengths"), cfg.get("g"), cfg.get("dt") or 0.005, steps)
    elif system == "gmm_mcmc":
        spec = GmmSpec(cfg.get("gmm_weights"), cfg.get("gmm_means"), cfg.get("gmm_stds"))
        thin = cfg.get("thin")
        if thin < 1:
            raise ConfigurationError("thin must be >= 1")
        traj = sample_gmm_metropolis(spec, steps * thin, cfg.get("proposal_std"), cfg.get("burn_in"), seed=seed)
        traj.states = traj.states[::thin]
    else:
        traj = generate_rotating_sequence(cfg.get("image_px"), cfg.get("frames"), phase=cfg.get("phase"))
    times = traj.times() if traj.dt > 0 else None
    _write(out, csvio.write_trajectory, traj.states, times)
    print(f"simulate: system={system} length={len(traj)} dims={traj.dim} seed={seed} -> {out}")


def cmd_build_transitions(cfg: Config, args) -> None:
    out = cfg.require("transitions_path")
    mode = cfg.get("transition_mode")
    if mode == "trajectory":
        traj = csvio.read_trajectory(cfg.require("trajectory_path"))
        step = cfg.get("step_size")
        jitter = cfg.get("step_jitter")
        ds = transitions_from_trajectory(traj, step, cfg.get("order"), jitter=jitter, seed=cfg.get("seed"))
    elif mode == "directed":
        cloud = csvio.read_points(cfg.require("points_path"))
        ds = directed_diffusion_transitions(cloud, cfg.get("sigma"), cfg.get("affinity_k"), cfg.get("smoothing_k"))
    else:
        raise ConfigurationError(f"unknown transition_mode {mode!r}; valid options: trajectory, directed")
    ds = augment_targets_with_neighbors(ds, cfg.get("neighbor_k"))
    _write(out, csvio.write_transitions, ds)
    print(f"build-transitions: groups={len(ds)} mean_targets={ds.target_counts().mean():.3f} -> {out}")


def _train_config(cfg: Config) -> TrainConfig:
    tc = TrainConfig(epochs=cfg.get("epochs"), batch_groups=cfg.get("batch_groups"),
                     m_generated=cfg.get("m_generated"), corruption_std=cfg.get("corruption_std"),
                     learning_rate=cfg.get("learning_rate"), seed=cfg.get("seed"),
                     steps_per_epoch=cfg.get("steps_per_epoch"), recon_weight=cfg.get("recon_weight"),
                     lr_final=cfg.get("lr_final"))
    if cfg.get("bandwidths") is not None:
        tc.bandwidths = np.array(cfg.get("bandwidths"))
    tc.validate()
    return tc


def cmd_train(cfg: Config, args) -> None:
    tc = _train_config(cfg)
    ds = csvio.read_transitions(cfg.require("transitions_path"))
    ckpt = cfg.require("checkpoint_path")
    model = build_model(cfg.get("architecture"), ds.state_dim, ds.order, cfg.get("hidden"),
                        noise_dim=cfg.get("noise_dim"), latent_dim=cfg.get("latent_dim"),
                        ae_hidden=cfg.get("ae_hidden"), seed=cfg.get("seed"))
    model, curve = train_dymon(ds, model, tc)
    csvio.ensure_parent(ckpt)
    checkpoint.save_model(model, ckpt)
    loss_path = cfg.get("loss_path")
    if loss_path:
        _write(loss_path, csvio.write_table, ["epoch", "loss"],
               [(i, float(v)) for i, v in enumerate(curve.losses)])
    print(f"train: epochs={len(curve)} final_loss={curve.losses[-1]:.6g} -> {ckpt}")


def _init_history(cfg: Config, model) -> np.ndarray:
    n, d = model.order, model.state_dim
    if cfg.get("init") is not None:
        init = np.array(cfg.get("init"), dtype=np.float64)
        if init.size != n * d:
            raise ConfigurationError(f"init needs {n * d} values (order {n} x dim {d}), got {init.size}")
        return init.reshape(n, d)
    path = cfg.get("trajectory_path")
    if not path:
        raise ConfigurationError("generate needs either 'init' or 'trajectory_path' for the initial history")
    data = csvio.read_trajectory(path).states
    if data.shape[1] != d:
        raise DimensionError(f"{path} has {data.shape[1]} columns, model expects {d}")
    if len(data) < n:
        raise ConfigurationError(f"{path} has fewer than {n} rows")
    idx = cfg.get("init_index")
    if idx < 0:
        idx = int(make_rng(cfg.get("seed")).integers(0, len(data) - n + 1))
    if idx + n > len(data):
        raise ConfigurationError(f"init_index {idx} leaves fewer than {n} rows")
    return data[idx: idx + n]


def cmd_generate(cfg: Config, args) -> None:
    model = checkpoint.load_model(cfg.require("checkpoint_path"))
    out = cfg.require("generated_path")
    steps, thin = cfg.get("steps"), cfg.get("thin")
    if steps < 1 or thin < 1:
        raise ConfigurationError("steps and thin must be >= 1")
    init = _init_history(cfg, model)
    traj = generate_chain(model, init, steps * thin, make_rng(cfg.get("seed")))
    states = traj.states[model.order:][thin - 1:: thin]
    times = np.arange(1, len(states) + 1, dtype=np.float64) * thin
    _write(out, csvio.write_trajectory, states, times)
    note = " (truncated: non-finite state)" if traj.meta["truncated"] else ""
    print(f"generate: rows={len(states)} dims={model.state_dim}{note} -> {out}")
    if traj.meta["truncated"]:
        raise NumericError(f"chain produced a non-finite state at step {traj.meta['truncated_at_step']}")


def cmd_eval(cfg: Config, args) -> None:
    a = csvio.read_trajectory(cfg.require("generated_path")).states
    b = csvio.read_trajectory(cfg.require("reference_path")).states
    metrics = []
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 1:
        metrics.append(("emd", emd_1d(a[:, 0], b[:, 0], seed=cfg.get("seed"))))
    if a.shape == b.shape:
        metrics.append(("mse", mse(a, b)))
    if a.shape[1] == 3:
        rep = latent_cycle_report(a)
        metrics += [("is_single_cycle", int(rep["is_single_cycle"])), ("components", rep["components"]),
                    ("residual", rep["residual"])]
    if not metrics:
        raise DimensionError(f"no metric applies: shapes {a.shape} and {b.shape} (EMD needs 1 column, "
                             "MSE needs matching shapes)")
    out = cfg.get("metrics_path")
    if out:
        _write(out, csvio.write_table, ["metric", "value"], metrics)
    for k, v in metrics:
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    if args.assert_below is not None:
        primary_name, primary = metrics[0]
        if not primary < args.assert_below:
            raise AssertionFailed(f"{primary_name} {primary:.6g} is not below {args.assert_below}")


def _query_points(cfg: Config, d: int) -> np.ndarray:
    raw = cfg.get("points")
    if raw:
        try:
            pts = [[float(v) for v in chunk.split(",")] for chunk in raw.split(";") if chunk.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"points: {exc}") from None
        if any(len(p) != d for p in pts):
            raise DimensionError(f"every query point needs {d} values")
        return np.array(pts)
    path = cfg.get("trajectory_path")
    if not path:
        raise ConfigurationError("jacobian needs 'points' or 'trajectory_path'")
    pts = csvio.read_trajectory(path).states
    if pts.shape[1] != d:
        raise DimensionError(f"{path} has {pts.shape[1]} columns, model expects {d}")
    return pts


def cmd_jacobian(cfg: Config, args) -> None:
    model = checkpoint.load_model(cfg.require("checkpoint_path"))
    out = cfg.require("jacobian_path")
    d = model.state_dim
    fn = jacobian_fd if args.method == "fd" else jacobian
    rows = []
    for i, p in enumerate(_query_points(cfg, d)):
        J = fn(model, p)
        rows += [[i, r] + [float(v) for v in J[r]] for r in range(d)]
    _write(out, csvio.write_table, ["point", "row"] + [f"d{j}" for j in range(d)], rows)
    print(f"jacobian: points={len(rows) // d} dims={d} method={args.method} -> {out}")


def cmd_compare_gmm(cfg: Config, args) -> None:
    out = cfg.require("comparison_path")
    skip = set(args.skip or ())
    bad = skip - set(MODELS)
    if bad:
        raise ConfigurationError(f"--skip accepts {', '.join(MODELS)}; got {', '.join(sorted(bad))}")
    wl = GmmWorkload()
    wl.spec = GmmSpec(cfg.get("gmm_weights"), cfg.get("gmm_means"), cfg.get("gmm_stds"))
    # only keys set explicitly override the workload's own defaults
    for key in ("n_train", "n_eval", "proposal_std", "burn_in", "thin", "neighbor_k", "hidden", "noise_dim",
                "epochs", "steps_per_epoch", "batch_groups", "m_generated", "corruption_std", "learning_rate",
                "lr_final", "bandwidths", "hmm_states", "hmm_iters", "kf_iters", "seed"):
        if key in cfg:
            setattr(wl, key, cfg.get(key))
    rows = compare_gmm(wl, skip)
    table = [(name, float(r["emd"]), float(r["train_seconds"]), float(r["sample_seconds"]))
             for name, r in rows.items()]
    _write(out, csvio.write_table, ["model", "emd", "train_seconds", "sample_seconds"], table)
    for name, emd, tr, sa in table:
        print(f"{name:6s} emd={emd:.4f} train={tr:.1f}s sample={sa:.1f}s")


COMMANDS = {
    "simulate": cmd_simulate,
    "build-transitions": cmd_build_transitions,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "jacobian": cmd_jacobian,
    "compare-gmm": cmd_compare_gmm,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dymon", description="Dynamics modeling networks: simulate, train, generate.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name == "eval":
            s.add_argument("--assert-below", type=float, default=None,
                           help="exit 5 unless the first metric is below this value")
        if name == "jacobian":
            s.add_argument("--method", choices=("backprop", "fd"), default="backprop")
        if name == "compare-gmm":
            s.add_argument("--skip", action="append", choices=MODELS, help="omit a model row")
    return p


def _threads() -> int:
    raw = os.environ.get("DYMON_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"DYMON_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("DYMON_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else Config()
        apply_overrides(cfg, args.set)
        with threadpool_limits(_threads()):
            COMMANDS[args.command](cfg, args)
    except AssertionFailed as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, DimensionError, ParseError, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
