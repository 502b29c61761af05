"""End-to-end experiment pipelines shared by the CLI and the acceptance suite.

Each returns plain dicts of metrics so callers decide what to print or assert.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import emd_1d, hmm_fit, hmm_sample, kalman_fit_em, kalman_sample, latent_cycle_report, mse
from .model import TrainConfig, build_model, generate_chain, generate_chains, predict, train_dymon
from .numcore import make_rng, mlp_apply
from .systems import GmmSpec, generate_rotating_sequence, sample_gmm_metropolis, simulate_double_pendulum, \
    simulate_pendulum
from .transitions import TransitionDataset, augment_targets_with_neighbors, transitions_from_trajectory


def mode_occupancy(x, means) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    means = np.asarray(means, dtype=np.float64)
    assign = np.argmin(np.abs(x[:, None] - means[None, :]), axis=1)
    return np.bincount(assign, minlength=means.size) / x.size


# -- mixture-model stationary distribution ---------------------------------------

@dataclass
class GmmWorkload:
    spec: GmmSpec = field(default_factory=GmmSpec.default)
    n_train: int = 50_000
    n_eval: int = 5_000
    proposal_std: float = 4.0
    burn_in: int = 1000
    thin: int = 10  # both evaluation chains keep every thin-th state
    neighbor_k: int = 20
    hidden: tuple = (64, 64, 64)
    noise_dim: int = 4
    epochs: int = 120
    steps_per_epoch: int | None = 100
    batch_groups: int = 64
    m_generated: int | None = 64
    corruption_std: float = 0.01
    learning_rate: float = 3e-3
    lr_final: float | None = 1e-5
    # the sub-1e-2 kernels only reward near-exact hits and swamp the gradient
    bandwidths: tuple | None = tuple(np.logspace(-2, 6, 13))
    hmm_states: int = 4
    hmm_iters: int = 50
    kf_iters: int = 20
    seed: int = 0


def gmm_training_chain(wl: GmmWorkload):
    return sample_gmm_metropolis(wl.spec, wl.n_train, wl.proposal_std, wl.burn_in, seed=wl.seed)


def gmm_heldout(wl: GmmWorkload) -> np.ndarray:
    chain = sample_gmm_metropolis(wl.spec, wl.n_eval * wl.thin, wl.proposal_std, wl.burn_in, seed=wl.seed + 1)
    return chain.states[:: wl.thin, 0]


def compare_gmm(wl: GmmWorkload, skip=()) -> dict:
    """Train DyMoN, a Gaussian HMM and a Kalman model on one MH chain; score by EMD."""
    train = gmm_training_chain(wl)
    held = gmm_heldout(wl)
    x = train.states
    rows = {}

    if "dymon" not in skip:
        t0 = time.perf_counter()
        ds = augment_targets_with_neighbors(transitions_from_trajectory(train, 1, 1), wl.neighbor_k)
        model = build_model(1, 1, 1, wl.hidden, noise_dim=wl.noise_dim, seed=wl.seed)
        cfg = TrainConfig(epochs=wl.epochs, batch_groups=wl.batch_groups, m_generated=wl.m_generated,
                          corruption_std=wl.corruption_std, learning_rate=wl.learning_rate,
                          lr_final=wl.lr_final, steps_per_epoch=wl.steps_per_epoch, seed=wl.seed)
        if wl.bandwidths is not None:
            cfg.bandwidths = np.asarray(wl.bandwidths, dtype=np.float64)
        model, curve = train_dymon(ds, model, cfg)
        t1 = time.perf_counter()
        chain = generate_chain(model, x[-1:], wl.n_eval * wl.thin, make_rng(wl.seed + 2))
        samples = chain.states[1:: wl.thin, 0]
        t2 = time.perf_counter()
        rows["dymon"] = dict(emd=emd_1d(samples, held), train_seconds=t1 - t0, sample_seconds=t2 - t1,
                             samples=samples, losses=curve.losses, model=model)

    if "hmm" not in skip:
        t0 = time.perf_counter()
        hmm = hmm_fit(x[:, 0], wl.hmm_states, wl.hmm_iters, seed=wl.seed)
        t1 = time.perf_counter()
        samples = hmm_sample(hmm, wl.n_eval * wl.thin, seed=wl.seed + 3)[:: wl.thin]
        t2 = time.perf_counter()
        rows["hmm"] = dict(emd=emd_1d(samples, held), train_seconds=t1 - t0, sample_seconds=t2 - t1,
                           samples=samples)

    if "kf" not in skip:
        t0 = time.perf_counter()
        kf = kalman_fit_em(x, wl.kf_iters, latent_dim=1)
        t1 = time.perf_counter()
        samples = kalman_sample(kf, wl.n_eval * wl.thin, seed=wl.seed + 4)[:: wl.thin, 0]
        t2 = time.perf_counter()
        rows["kf"] = dict(emd=emd_1d(samples, held), train_seconds=t1 - t0, sample_seconds=t2 - t1,
                          samples=samples)
    return rows


# -- pendulum -------------------------------------------------------------------

@dataclass
class PendulumWorkload:
    train_angles: tuple = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2)
    heldout_angle: float = 1.0
    length: float = 1.0
    dt: float = 0.05
    steps: int = 400
    hidden: tuple = (8, 16, 8)
    epochs: int = 3000
    batch_groups: int = 64
    corruption_std: float = 0.01  # pulls rollouts back toward the circle
    learning_rate: float = 3e-3
    lr_final: float | None = 1e-5
    bandwidths: tuple | None = tuple(np.logspace(-2, 6, 13))
    rollout: int = 500
    seed: int = 0


def _stack(trajs, step, order):
    parts = [transitions_from_trajectory(t, step, order) for t in trajs]
    return TransitionDataset(np.concatenate([p.histories for p in parts]),
                             [y for p in parts for y in p.targets])


def r2_per_coordinate(pred, truth) -> np.ndarray:
    ss_res = np.sum((truth - pred) ** 2, axis=0)
    ss_tot = np.sum((truth - truth.mean(axis=0)) ** 2, axis=0)
    return 1.0 - ss_res / ss_tot


def pendulum_experiment(wl: PendulumWorkload) -> dict:
    t0 = time.perf_counter()
    trajs = [simulate_pendulum(a, 0.0, length=wl.length, dt=wl.dt, steps=wl.steps) for a in wl.train_angles]
    ds = _stack(trajs, 1, 2)
    model = build_model(1, 2, order=2, hidden=wl.hidden, noise_dim=0, seed=wl.seed)
    cfg = TrainConfig(epochs=wl.epochs, batch_groups=wl.batch_groups, corruption_std=wl.corruption_std,
                      learning_rate=wl.learning_rate, lr_final=wl.lr_final, seed=wl.seed)
    if wl.bandwidths is not None:
        cfg.bandwidths = np.asarray(wl.bandwidths, dtype=np.float64)
    model, curve = train_dymon(ds, model, cfg)
    seconds = time.perf_counter() - t0

    held = simulate_pendulum(wl.heldout_angle, 0.0, length=wl.length, dt=wl.dt, steps=wl.steps).states
    hist = np.stack([held[:-2], held[1:-1]], axis=1)
    pred = predict(model, hist)
    r2 = r2_per_coordinate(pred, held[2:])

    roll = generate_chain(model, held[:2], wl.rollout, make_rng(wl.seed)).states[2:]
    radius = np.linalg.norm(roll, axis=1)
    on_circle = float(np.mean(np.abs(radius - wl.length) <= 0.05 * wl.length))
    signs = np.sign(roll[:, 0])
    signs = signs[signs != 0]
    crossings = int(np.sum(signs[1:] != signs[:-1]))
    return dict(r2=r2, on_circle_fraction=on_circle, sign_changes=crossings, train_seconds=seconds,
                losses=curve.losses, rollout=roll, model=model)


# -- double pendulum --------------------------------------------------------------

@dataclass
class DoublePendulumWorkload:
    angles0: tuple = (2.0, 2.5)  # rollouts start on this trajectory
    extra_angles0: tuple = ()  # further release angles (other energies) added to the training set
    lengths: tuple = (1.0, 1.0)
    dt: float = 0.01
    steps: int = 60_000  # 600 s of motion; shorter runs leave rollouts drifting off the rod lengths
    order: int = 2
    neighbor_k: int = 0  # neighbours on one trajectory are mostly adjacent frames, which blurs targets
    hidden: tuple = (64, 128, 64)
    noise_dim: int = 4
    epochs: int = 600
    steps_per_epoch: int | None = 100
    batch_groups: int = 64
    m_generated: int | None = 8
    corruption_std: float = 0.015  # 0.01 lets rare chains escape, 0.02 blurs the first steps
    learning_rate: float = 3e-3
    lr_final: float | None = 1e-5
    bandwidths: tuple | None = tuple(np.logspace(-2, 6, 13))
    chains: int = 500
    horizon: int = 300
    perturbation: float = 1e-3
    seed: int = 0


def double_pendulum_experiment(wl: DoublePendulumWorkload) -> dict:
    t0 = time.perf_counter()
    trajs = [simulate_double_pendulum(a, (0.0, 0.0), lengths=wl.lengths, dt=wl.dt, steps=wl.steps)
             for a in (wl.angles0, *wl.extra_angles0)]
    traj = trajs[0]
    ds = augment_targets_with_neighbors(_stack(trajs, 1, wl.order), wl.neighbor_k)
    model = build_model(1, 4, wl.order, wl.hidden, noise_dim=wl.noise_dim, seed=wl.seed)
    cfg = TrainConfig(epochs=wl.epochs, batch_groups=wl.batch_groups, m_generated=wl.m_generated,
                      corruption_std=wl.corruption_std, learning_rate=wl.learning_rate,
                      lr_final=wl.lr_final, steps_per_epoch=wl.steps_per_epoch, seed=wl.seed)
    if wl.bandwidths is not None:
        cfg.bandwidths = np.asarray(wl.bandwidths, dtype=np.float64)
    model, curve = train_dymon(ds, model, cfg)
    seconds = time.perf_counter() - t0

    rng = make_rng(wl.seed + 1)
    mid = len(traj.states) // 2
    start = traj.states[mid - wl.order + 1: mid + 1]
    init = start[None] + wl.perturbation * rng.standard_normal((wl.chains, wl.order, 4))
    states, cut = generate_chains(model, init, wl.horizon, rng)
    spread = states[:, wl.order - 1:, 2].std(axis=0)  # index k = k steps after the last seed state
    reach = 1.1 * sum(wl.lengths)
    inside = bool(np.all(np.hypot(states[..., 0], states[..., 1]) <= reach)
                  and np.all(np.hypot(states[..., 2], states[..., 3]) <= reach))
    return dict(std_step10=float(spread[min(10, len(spread) - 1)]), std_step300=float(spread[-1]),
                truncated=cut, inside_disk=inside, train_seconds=seconds, losses=curve.losses, model=model,
                states=states)


# -- rotating image sequence --------------------------------------------------------

@dataclass
class RotatingWorkload:
    image_px: int = 16
    frames: int = 400
    step: int = 10
    latent_dim: int = 3
    ae_hidden: tuple = (64,)
    hidden: tuple = (32, 32)
    epochs: int = 3000
    batch_groups: int = 64
    corruption_std: float = 0.0
    learning_rate: float = 3e-3
    lr_final: float | None = 1e-5
    recon_weight: float = 1.0
    heldout_phase: float = 0.5
    seed: int = 0


def latent_codes(model, states) -> np.ndarray:
    z = model.standardizer.forward(np.asarray(states, dtype=np.float64))
    return mlp_apply(model.encoder, z)


def rotating_experiment(wl: RotatingWorkload) -> dict:
    t0 = time.perf_counter()
    seq = generate_rotating_sequence(wl.image_px, wl.frames)
    ds = transitions_from_trajectory(seq, wl.step, 1)
    model = build_model(2, seq.dim, 1, wl.hidden, noise_dim=0, latent_dim=wl.latent_dim,
                        ae_hidden=wl.ae_hidden, seed=wl.seed)
    cfg = TrainConfig(epochs=wl.epochs, batch_groups=wl.batch_groups, corruption_std=wl.corruption_std,
                      learning_rate=wl.learning_rate, lr_final=wl.lr_final, recon_weight=wl.recon_weight,
                      seed=wl.seed)
    model, curve = train_dymon(ds, model, cfg)
    seconds = time.perf_counter() - t0

    held = generate_rotating_sequence(wl.image_px, wl.frames, phase=wl.heldout_phase).states
    src, dst = held[: -wl.step], held[wl.step:]
    pred = predict(model, src[:, None, :])
    per_frame = np.mean((pred - dst) ** 2, axis=1)
    baseline = np.mean((src - dst) ** 2, axis=1)
    report = latent_cycle_report(latent_codes(model, seq.states))
    return dict(model_mse=float(per_frame.mean()), constant_mse=float(baseline.mean()),
                model_mse_std=float(per_frame.std()), cycle=report, train_seconds=seconds,
                losses=curve.losses, model=model)
