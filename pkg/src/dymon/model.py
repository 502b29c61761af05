"""The residual generative Markov model and its training loop.

A model maps the last ``order`` states plus a noise vector to the next
state as ``x_last + f(history, eps)``. Architecture 1 does this in the
(standardized) ambient space; architectures 2 and 3 do it in the latent
space of a dense autoencoder, and 3 also re-encodes/decodes every generated
state during chain generation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import mmd as mmd_mod
from .errors import ConfigurationError, DimensionError, NumericError
from .numcore import AdamState, Params, adam_step, make_rng, mlp_apply, mlp_backward, mlp_forward, mlp_init
from .systems import Trajectory

log = logging.getLogger(__name__)

ARCHITECTURES = (1, 2, 3)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray) -> "Standardizer":
        states = np.asarray(states, dtype=np.float64)
        mean = states.mean(axis=0)
        scale = states.std(axis=0)
        # constant coordinates (e.g. always-empty pixels) keep unit scale
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean


@dataclass
class DymonModel:
    architecture: int
    order: int
    state_dim: int
    noise_dim: int
    transition_net: Params
    standardizer: Standardizer
    encoder: Params | None = None
    decoder: Params | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"architecture must be one of {ARCHITECTURES}")
        if self.order < 1 or self.noise_dim < 0:
            raise ConfigurationError("order must be >= 1 and noise_dim >= 0")
        latent = self.architecture != 1
        if latent and (self.encoder is None or self.decoder is None):
            raise ConfigurationError(f"architecture {self.architecture} requires an encoder and decoder")
        if not latent and (self.encoder is not None or self.decoder is not None):
            raise ConfigurationError("architecture 1 takes no encoder/decoder")
        e = self.effective_dim
        sizes = self.transition_net.layer_sizes
        if sizes[0] != self.order * e + self.noise_dim or sizes[-1] != e:
            raise DimensionError(f"transition net sizes {sizes} inconsistent with order={self.order}, "
                                 f"effective dim={e}, noise_dim={self.noise_dim}")
        if latent:
            if self.encoder.layer_sizes[0] != self.state_dim or self.decoder.layer_sizes[-1] != self.state_dim:
                raise DimensionError("autoencoder widths do not match state_dim")
            if self.decoder.layer_sizes[0] != e:
                raise DimensionError("decoder input width must equal the latent width")

    @property
    def effective_dim(self) -> int:
        if self.architecture == 1:
            return self.state_dim
        return self.encoder.layer_sizes[-1]

    @property
    def deterministic(self) -> bool:
        return self.noise_dim == 0

    def nets(self) -> list[Params]:
        out = [self.transition_net]
        if self.encoder is not None:
            out += [self.encoder, self.decoder]
        return out


def build_model(architecture: int, state_dim: int, order: int = 1, hidden=(64, 64, 64),
                noise_dim: int | None = None, latent_dim: int = 3, ae_hidden=(64,),
                standardizer: Standardizer | None = None, seed: int = 0) -> DymonModel:
    """Freshly initialized model.

    ``noise_dim`` defaults to the dimension the transition acts on (state_dim
    for architecture 1, latent_dim otherwise). The decoder mirrors ``ae_hidden``.
    The transition net's output layer starts at zero, so a fresh model is the
    identity map; random output weights leave kinks that training never irons out.
    """
    rng = make_rng(seed)
    eff = state_dim if architecture == 1 else latent_dim
    if noise_dim is None:
        noise_dim = eff
    encoder = decoder = None
    if architecture in (2, 3):
        encoder = mlp_init([state_dim, *ae_hidden, latent_dim], rng)
        decoder = mlp_init([latent_dim, *reversed(tuple(ae_hidden)), state_dim], rng)
    net = mlp_init([order * eff + noise_dim, *hidden, eff], rng)
    net.weights[-1][:] = 0.0
    return DymonModel(architecture, order, state_dim, noise_dim, net,
                      standardizer or Standardizer.identity(state_dim), encoder, decoder, seed)


# -- differentiable pipeline in standardized coordinates ---------------------

@dataclass
class _PipeCache:
    batch: int
    net: object
    enc: object = None
    dec: object = None


def _pipe_forward(model: DymonModel, hist: np.ndarray, eps: np.ndarray):
    """hist (B, order, d) standardized -> next state (B, d) standardized."""
    B, n, d = hist.shape
    if model.architecture == 1:
        inp = np.concatenate([hist.reshape(B, n * d), eps], axis=1)
        f, net_c = mlp_forward(model.transition_net, inp)
        return hist[:, -1, :] + f, _PipeCache(B, net_c)
    L = model.effective_dim
    z, enc_c = mlp_forward(model.encoder, hist.reshape(B * n, d))
    z = z.reshape(B, n, L)
    inp = np.concatenate([z.reshape(B, n * L), eps], axis=1)
    f, net_c = mlp_forward(model.transition_net, inp)
    out, dec_c = mlp_forward(model.decoder, z[:, -1, :] + f)
    return out, _PipeCache(B, net_c, enc_c, dec_c)


def _pipe_backward(model: DymonModel, cache: _PipeCache, grad_out: np.ndarray, order: int):
    """Returns (list of param grads matching model.nets(), grad w.r.t. hist)."""
    B = cache.batch
    d = model.state_dim
    if model.architecture == 1:
        g_net, g_inp = mlp_backward(model.transition_net, cache.net, grad_out)
        g_hist = g_inp[:, : order * d].reshape(B, order, d).copy()
        g_hist[:, -1, :] += grad_out
        return [g_net], g_hist
    L = model.effective_dim
    g_dec, g_zn = mlp_backward(model.decoder, cache.dec, grad_out)
    g_net, g_inp = mlp_backward(model.transition_net, cache.net, g_zn)
    g_z = g_inp[:, : order * L].reshape(B, order, L).copy()
    g_z[:, -1, :] += g_zn
    g_enc, g_x = mlp_backward(model.encoder, cache.enc, g_z.reshape(B * order, L))
    return [g_net, g_enc, g_dec], g_x.reshape(B, order, d)


def _pipe_apply(model: DymonModel, hist: np.ndarray, eps: np.ndarray) -> np.ndarray:
    B, n, d = hist.shape
    if model.architecture == 1:
        return hist[:, -1, :] + mlp_apply(model.transition_net, np.concatenate([hist.reshape(B, n * d), eps], 1))
    L = model.effective_dim
    z = mlp_apply(model.encoder, hist.reshape(B * n, d)).reshape(B, n, L)
    f = mlp_apply(model.transition_net, np.concatenate([z.reshape(B, n * L), eps], 1))
    return mlp_apply(model.decoder, z[:, -1, :] + f)


def _denoise(model: DymonModel, x_std: np.ndarray) -> np.ndarray:
    return mlp_apply(model.decoder, mlp_apply(model.encoder, x_std))


def _as_history(model: DymonModel, history) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    n, d = model.order, model.state_dim
    if h.size != n * d:
        raise DimensionError(f"history must hold {n} states of dim {d}, got shape {h.shape}")
    return h.reshape(n, d)


def _as_eps(model: DymonModel, eps, batch: int) -> np.ndarray:
    if eps is None:
        return np.zeros((batch, model.noise_dim))
    e = np.asarray(eps, dtype=np.float64)
    if e.size != batch * model.noise_dim:
        raise DimensionError(f"eps must have {model.noise_dim} entries per sample, got shape {e.shape}")
    return e.reshape(batch, model.noise_dim)


def dymon_forward(model: DymonModel, history, eps=None) -> np.ndarray:
    """Next state in original units. ``history`` holds the last ``order`` states, newest last."""
    h = model.standardizer.forward(_as_history(model, history))[None]
    out = _pipe_apply(model, h, _as_eps(model, eps, 1))
    return model.standardizer.inverse(out[0])


def predict(model: DymonModel, histories, eps=None) -> np.ndarray:
    """Batched one-step map: histories (B, order, d) -> next states (B, d), original units."""
    h = np.asarray(histories, dtype=np.float64)
    if h.ndim != 3 or h.shape[1:] != (model.order, model.state_dim):
        raise DimensionError(f"histories must be (B, {model.order}, {model.state_dim}), got {h.shape}")
    e = np.zeros((h.shape[0], model.noise_dim)) if eps is None else np.asarray(eps, dtype=np.float64)
    if e.shape != (h.shape[0], model.noise_dim):
        raise DimensionError(f"eps must be ({h.shape[0]}, {model.noise_dim}), got {e.shape}")
    out = _pipe_apply(model, model.standardizer.forward(h), e)
    return model.standardizer.inverse(out)


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_groups: int = 64
    m_generated: int | None = None  # None -> max(32, largest |Y_x|)
    corruption_std: float = 0.05
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    bandwidths: np.ndarray = field(default_factory=lambda: mmd_mod.DEFAULT_BANDWIDTHS.copy())
    seed: int = 0
    steps_per_epoch: int | None = None  # None -> one pass over all groups
    recon_weight: float = 1.0
    lr_final: float | None = None  # geometric decay from learning_rate to this value

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_groups < 1:
            raise ConfigurationError("batch_groups must be >= 1")
        if self.m_generated is not None and self.m_generated < 2:
            raise ConfigurationError("m_generated must be >= 2")
        if self.corruption_std < 0:
            raise ConfigurationError("corruption_std must be >= 0")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ConfigurationError("lr_final must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be >= 1")
        self.bandwidths = mmd_mod.check_bandwidths(self.bandwidths)


@dataclass
class LossCurve:
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.losses)


def _unique_weighted(y: np.ndarray):
    """Collapse repeated targets into weights (same V-statistic, fewer kernel terms)."""
    uniq, counts = np.unique(y, axis=0, return_counts=True)
    return uniq, counts / counts.sum()


def train_dymon(dataset, model: DymonModel, config: TrainConfig | None = None,
                fit_standardizer: bool = True, callback=None):
    """Fit ``model`` in place by minimizing mean per-group MMD^2; returns (model, LossCurve).

    Each step draws ``batch_groups`` source groups, generates m samples per
    group with fresh noise from a corrupted copy of the history, and
    backpropagates the MMD^2 to the generated set (plus an autoencoder
    reconstruction term for latent architectures).
    """
    config = config or TrainConfig()
    config.validate()
    if len(dataset) == 0:
        raise ConfigurationError("empty transition dataset")
    if dataset.order != model.order or dataset.state_dim != model.state_dim:
        raise DimensionError(f"dataset (order {dataset.order}, dim {dataset.state_dim}) does not match "
                             f"model (order {model.order}, dim {model.state_dim})")

    counts = dataset.target_counts()
    keep = np.flatnonzero(counts > 0)
    if keep.size < len(dataset):
        log.warning("skipping %d groups with no targets", len(dataset) - keep.size)

    if fit_standardizer:
        all_states = np.concatenate([dataset.histories.reshape(-1, dataset.state_dim)]
                                    + [dataset.targets[g] for g in keep], axis=0)
        model.standardizer = Standardizer.fit(all_states)
    std = model.standardizer
    bw = config.bandwidths

    hist_s = std.forward(dataset.histories[keep])
    tgt_list = [_unique_weighted(std.forward(dataset.targets[g])) for g in keep]
    K = max(t.shape[0] for t, _ in tgt_list)
    G, n, d = hist_s.shape
    tgt = np.zeros((G, K, d))
    wts = np.zeros((G, K))
    for g, (t, w) in enumerate(tgt_list):
        tgt[g, : t.shape[0]] = t
        wts[g, : t.shape[0]] = w
    tgt_term = mmd_mod.target_self_term(tgt, wts, bw)

    if model.deterministic:
        m = 1  # identical copies give the same loss and gradient
    else:
        m = config.m_generated or max(32, int(counts.max()))

    rng = make_rng(config.seed)
    nets = model.nets()
    adam = AdamState.for_params(nets, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    B = min(config.batch_groups, G)
    steps = config.steps_per_epoch or int(np.ceil(G / B))
    curve = LossCurve()
    latent = model.architecture != 1
    total_steps = config.epochs * steps
    decay = 1.0
    if config.lr_final is not None and total_steps > 1:
        decay = (config.lr_final / config.learning_rate) ** (1.0 / (total_steps - 1))

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(G)
        pos = 0
        epoch_losses = []
        for step in range(steps):
            if pos + B > G:
                perm = rng.permutation(G)
                pos = 0
            idx = perm[pos: pos + B]
            pos += B
            b = idx.size
            h = hist_s[idx]
            if config.corruption_std > 0:
                h = h + config.corruption_std * rng.standard_normal(h.shape)
            h_rep = np.repeat(h, m, axis=0)
            eps = rng.standard_normal((b * m, model.noise_dim))
            out, cache = _pipe_forward(model, h_rep, eps)
            losses, g_gen = mmd_mod.batched_mmd2(out.reshape(b, m, d), tgt[idx], wts[idx], bw, tgt_term[idx])
            loss = float(losses.mean())
            grads, _ = _pipe_backward(model, cache, g_gen.reshape(b * m, d) / b, n)

            if latent and config.recon_weight > 0:
                x = hist_s[idx][:, -1, :]
                z, ec = mlp_forward(model.encoder, x)
                r, dc = mlp_forward(model.decoder, z)
                diff = r - x
                loss += config.recon_weight * float(np.mean(diff * diff))
                g_r = config.recon_weight * 2.0 * diff / diff.size
                g_dec, g_z = mlp_backward(model.decoder, dc, g_r)
                g_enc, _ = mlp_backward(model.encoder, ec, g_z)
                for acc, extra in ((grads[1], g_enc), (grads[2], g_dec)):
                    for a, e in zip(acc.arrays(), extra.arrays()):
                        a += e

            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {step}")
            adam_step(adam, nets, grads)
            adam.learning_rate *= decay
            epoch_losses.append(loss)
        curve.losses.append(float(np.mean(epoch_losses)))
        curve.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, curve)
    return model, curve


# -- generation ---------------------------------------------------------------

def generate_chains(model: DymonModel, init_histories, steps: int, rng: np.random.Generator):
    """Run C chains in lockstep.

    init_histories: (C, order, d). Returns (states (C, order + steps, d),
    truncated_at or None). A chain producing a non-finite state stops every
    chain at the last fully finite step.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    init = np.asarray(init_histories, dtype=np.float64)
    if init.ndim == 2:
        init = init[None]
    C, n, d = init.shape
    if n != model.order or d != model.state_dim:
        raise DimensionError(f"init histories must be (C, {model.order}, {model.state_dim}), got {init.shape}")
    std = model.standardizer
    out = np.empty((C, n + steps, d))
    out[:, :n] = init
    h = std.forward(init)
    for t in range(steps):
        eps = rng.standard_normal((C, model.noise_dim))
        nxt = _pipe_apply(model, h, eps)
        if model.architecture == 3:
            nxt = _denoise(model, nxt)
        if not np.all(np.isfinite(nxt)):
            return out[:, : n + t], t
        out[:, n + t] = std.inverse(nxt)
        h = np.concatenate([h[:, 1:], nxt[:, None, :]], axis=1)
    return out, None


def generate_chain(model: DymonModel, init_history, steps: int, rng: np.random.Generator) -> Trajectory:
    init = _as_history(model, init_history)
    states, cut = generate_chains(model, init[None], steps, rng)
    meta = {"truncated": cut is not None}
    if cut is not None:
        meta["truncated_at_step"] = cut
    return Trajectory(states[0], 0.0, meta)


# -- analysis -----------------------------------------------------------------

def jacobian(model: DymonModel, x, history=None) -> np.ndarray:
    """d(next - x)/dx at eps = 0 in original units, by backprop.

    For order > 1 the derivative is taken w.r.t. the most recent state, with
    earlier states taken from ``history`` (defaults to repeating ``x``).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d, n = model.state_dim, model.order
    if x.size != d:
        raise DimensionError(f"x must have {d} entries")
    if history is None:
        hist = np.tile(x, (n, 1))
    else:
        hist = _as_history(model, history).copy()
        hist[-1] = x
    std = model.standardizer
    h = np.repeat(std.forward(hist)[None], d, axis=0)
    out, cache = _pipe_forward(model, h, np.zeros((d, model.noise_dim)))
    _, g_hist = _pipe_backward(model, cache, np.eye(d), n)
    dF = g_hist[:, -1, :]  # row i: d next_i / d u (standardized)
    return std.scale[:, None] * dF / std.scale[None, :] - np.eye(d)


def jacobian_fd(model: DymonModel, x, history=None, h: float = 1e-5) -> np.ndarray:
    """Central finite differences, step ``h`` in standardized units."""
    x = np.asarray(x, dtype=np.float64).ravel()
    d, n = model.state_dim, model.order
    hist = np.tile(x, (n, 1)) if history is None else _as_history(model, history).copy()
    hist[-1] = x
    std = model.standardizer
    J = np.empty((d, d))
    for j in range(d):
        step = np.zeros(d)
        step[j] = h * std.scale[j]
        hp, hm = hist.copy(), hist.copy()
        hp[-1] += step
        hm[-1] -= step
        dp = dymon_forward(model, hp) - hp[-1]
        dm = dymon_forward(model, hm) - hm[-1]
        J[:, j] = (dp - dm) / (2 * step[j])
    return J
