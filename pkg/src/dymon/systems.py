"""Ground-truth generators: pendulums (RK4), a 1-D mixture sampled by
Metropolis-Hastings, and a rotating-glyph image sequence."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .numcore import make_rng


@dataclass
class Trajectory:
    states: np.ndarray  # (T, d)
    dt: float = 0.0  # 0 for index-time data
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ConfigurationError("trajectory needs at least one state")

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def times(self) -> np.ndarray:
        idx = np.arange(len(self), dtype=np.float64)
        return idx * self.dt if self.dt > 0 else idx


def rk4_step(deriv, state, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    state = np.asarray(state, dtype=np.float64)
    k1 = np.asarray(deriv(state), dtype=np.float64)
    k2 = np.asarray(deriv(state + 0.5 * dt * k1), dtype=np.float64)
    k3 = np.asarray(deriv(state + 0.5 * dt * k2), dtype=np.float64)
    k4 = np.asarray(deriv(state + dt * k3), dtype=np.float64)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NumericError("derivative returned non-finite values")
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(deriv, y0, dt, steps):
    """``steps`` states starting at y0 (so steps - 1 RK4 updates)."""
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    out = np.empty((steps, len(y0)))
    y = np.asarray(y0, dtype=np.float64)
    out[0] = y
    for t in range(1, steps):
        y = rk4_step(deriv, y, dt)
        out[t] = y
    return out


# -- single pendulum ---------------------------------------------------------

def pendulum_deriv(g: float, length: float):
    def deriv(s):
        return np.array([s[1], -(g / length) * math.sin(s[0])])
    return deriv


def pendulum_energy(theta, omega, g=9.81, length=1.0):
    """Energy per unit mass."""
    return 0.5 * length**2 * np.square(omega) - g * length * np.cos(theta)


def simulate_pendulum(theta0=1.0, omega0=0.0, g=9.81, length=1.0, dt=0.01, steps=1000,
                      return_angles=False):
    """Bob position (x, y) = (L sin th, -L cos th) for ``steps`` samples."""
    if not length > 0 or not dt > 0:
        raise ConfigurationError("length and dt must be positive")
    angles = _integrate(pendulum_deriv(g, length), [theta0, omega0], dt, int(steps))
    th = angles[:, 0]
    states = np.column_stack([length * np.sin(th), -length * np.cos(th)])
    traj = Trajectory(states, dt, {"system": "pendulum", "g": g, "length": length})
    if return_angles:
        return traj, angles
    return traj


# -- double pendulum ---------------------------------------------------------

def double_pendulum_deriv(masses=(1.0, 1.0), lengths=(1.0, 1.0), g=9.81):
    m1, m2 = masses
    l1, l2 = lengths

    def deriv(s):
        t1, t2, w1, w2 = s
        delta = t1 - t2
        den = 2 * m1 + m2 - m2 * math.cos(2 * delta)
        a1 = (-g * (2 * m1 + m2) * math.sin(t1)
              - m2 * g * math.sin(t1 - 2 * t2)
              - 2 * math.sin(delta) * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * math.cos(delta))) / (l1 * den)
        a2 = (2 * math.sin(delta) * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * math.cos(t1)
                                      + w2 * w2 * l2 * m2 * math.cos(delta))) / (l2 * den)
        return np.array([w1, w2, a1, a2])
    return deriv


def double_pendulum_energy(state, masses=(1.0, 1.0), lengths=(1.0, 1.0), g=9.81):
    """Total mechanical energy for (t1, t2, w1, w2) rows."""
    s = np.atleast_2d(state)
    t1, t2, w1, w2 = s.T
    m1, m2 = masses
    l1, l2 = lengths
    kinetic = 0.5 * m1 * (l1 * w1) ** 2 + 0.5 * m2 * (
        (l1 * w1) ** 2 + (l2 * w2) ** 2 + 2 * l1 * l2 * w1 * w2 * np.cos(t1 - t2))
    potential = -(m1 + m2) * g * l1 * np.cos(t1) - m2 * g * l2 * np.cos(t2)
    return kinetic + potential


def simulate_double_pendulum(angles0=(2.0, 2.5), omegas0=(0.0, 0.0), masses=(1.0, 1.0),
                             lengths=(1.0, 1.0), g=9.81, dt=0.005, steps=1000, return_angles=False):
    """Cartesian positions (x1, y1, x2, y2) of both bobs."""
    if min(lengths) <= 0 or min(masses) <= 0 or not dt > 0:
        raise ConfigurationError("masses, lengths and dt must be positive")
    y0 = [angles0[0], angles0[1], omegas0[0], omegas0[1]]
    angles = _integrate(double_pendulum_deriv(masses, lengths, g), y0, dt, int(steps))
    l1, l2 = lengths
    t1, t2 = angles[:, 0], angles[:, 1]
    x1, y1 = l1 * np.sin(t1), -l1 * np.cos(t1)
    x2, y2 = x1 + l2 * np.sin(t2), y1 - l2 * np.cos(t2)
    traj = Trajectory(np.column_stack([x1, y1, x2, y2]), dt,
                      {"system": "double_pendulum", "lengths": tuple(lengths)})
    if return_angles:
        return traj, angles
    return traj


# -- Gaussian mixture via Metropolis-Hastings --------------------------------

@dataclass
class GmmSpec:
    weights: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (len(self.weights) == len(self.means) == len(self.stds)) or w.size == 0:
            raise ConfigurationError("weights, means and stds must have equal non-zero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError("mixture weights must be positive and sum to 1")
        if np.any(np.asarray(self.stds) <= 0):
            raise ConfigurationError("component stds must be positive")

    @classmethod
    def default(cls) -> "GmmSpec":
        return cls((0.3, 0.4, 0.3), (-4.0, 0.0, 4.0), (1.0, 1.0, 1.0))


def gmm_pdf(spec: GmmSpec, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for w, mu, sd in zip(spec.weights, spec.means, spec.stds):
        out = out + w * np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return out


def _gmm_logpdf_scalar(spec: GmmSpec):
    comps = [(math.log(w) - math.log(sd * math.sqrt(2 * math.pi)), mu, sd)
             for w, mu, sd in zip(spec.weights, spec.means, spec.stds)]

    def logp(x):
        terms = [c - 0.5 * ((x - mu) / sd) ** 2 for c, mu, sd in comps]
        top = max(terms)
        return top + math.log(sum(math.exp(t - top) for t in terms))
    return logp


def sample_gmm_metropolis(spec: GmmSpec, n: int, proposal_std: float = 2.5, burn_in: int = 1000,
                          seed: int = 0) -> Trajectory:
    """Random-walk MH chain targeting the mixture; consecutive samples kept in order."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if not proposal_std > 0:
        raise ConfigurationError("proposal_std must be positive")
    if burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0")
    rng = make_rng(seed)
    total = n + burn_in
    steps = rng.standard_normal(total) * proposal_std
    logu = np.log(rng.random(total))
    logp = _gmm_logpdf_scalar(spec)
    x = float(spec.means[int(np.argmax(spec.weights))])
    lp = logp(x)
    out = np.empty(total)
    accepted = 0
    for i in range(total):
        cand = x + steps[i]
        lc = logp(cand)
        if logu[i] < lc - lp:
            x, lp = cand, lc
            accepted += 1
        out[i] = x
    return Trajectory(out[burn_in:, None], 0.0,
                      {"system": "gmm_mcmc", "acceptance_rate": accepted / total})


# -- rotating glyph ----------------------------------------------------------

# L-shaped glyph as a union of axis-aligned rectangles (xmin, xmax, ymin, ymax)
# in [-1, 1]^2; not symmetric under a half turn.
GLYPH_RECTS = ((-0.55, -0.15, -0.65, 0.65), (-0.55, 0.55, -0.65, -0.25))


def generate_rotating_sequence(image_px: int = 16, frames: int = 400, phase: float = 0.0,
                               supersample: int = 8) -> Trajectory:
    """Frames of the glyph rotated by 2*pi*(t + phase)/frames, flattened row-major.

    Pixel values are area coverage estimated on a supersample x supersample grid.
    """
    if image_px < 8 or frames < 16:
        raise ConfigurationError("need image_px >= 8 and frames >= 16")
    ss = int(supersample)
    # subpixel centres in [-1, 1]
    coords = (np.arange(image_px * ss) + 0.5) / (image_px * ss) * 2.0 - 1.0
    gx, gy = np.meshgrid(coords, -coords)  # row 0 at the top
    out = np.empty((frames, image_px * image_px))
    for t in range(frames):
        ang = 2.0 * math.pi * (t + phase) / frames
        c, s = math.cos(ang), math.sin(ang)
        # rotate sample points by -ang into the glyph frame
        u = c * gx + s * gy
        v = -s * gx + c * gy
        inside = np.zeros(gx.shape, dtype=bool)
        for x0, x1, y0, y1 in GLYPH_RECTS:
            inside |= (u >= x0) & (u <= x1) & (v >= y0) & (v <= y1)
        cover = inside.reshape(image_px, ss, image_px, ss).mean(axis=(1, 3))
        out[t] = cover.ravel()
    return Trajectory(out, 0.0, {"system": "rotating", "image_px": image_px, "frames": frames,
                                 "phase": phase})
