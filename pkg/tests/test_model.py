import numpy as np
import pytest

from dymon.errors import ConfigurationError, DimensionError, NumericError
from dymon.mmd import mmd2
from dymon.model import (Standardizer, TrainConfig, build_model, dymon_forward, generate_chain,
                         generate_chains, jacobian, jacobian_fd, train_dymon)
from dymon.numcore import make_rng
from dymon.transitions import TransitionDataset


def _randomize_output(model, seed=0):
    w = model.transition_net.weights[-1]
    w[:] = make_rng(seed).standard_normal(w.shape) * 0.5
    return model


def _zero_output(model):
    model.transition_net.weights[-1][:] = 0.0
    model.transition_net.biases[-1][:] = 0.0
    return model


@pytest.mark.parametrize("arch", [1, 2])
def test_residual_identity(arch):
    # zero last layer -> f = 0 -> T(x) = x in latent space; for arch 1 exactly x
    model = _zero_output(_randomize_output(build_model(arch, 3, order=2, hidden=(8,), latent_dim=2, seed=1)))
    hist = np.array([[0.1, 0.2, 0.3], [1.0, -2.0, 0.5]])
    out = dymon_forward(model, hist, np.ones(model.noise_dim))
    if arch == 1:
        assert np.array_equal(out, hist[-1])
    else:
        assert out.shape == (3,)


def test_fresh_model_is_identity():
    model = build_model(1, 2, order=2, hidden=(8,), seed=0)
    hist = np.array([[1.0, 2.0], [3.0, -4.0]])
    assert np.array_equal(dymon_forward(model, hist, [0.3, -0.7]), hist[-1])


def test_zero_net_zero_jacobian():
    model = build_model(1, 3, hidden=(8,), seed=0)
    assert np.array_equal(jacobian(model, [0.1, 0.2, 0.3]), np.zeros((3, 3)))


def test_forward_deterministic():
    model = _randomize_output(build_model(1, 2, hidden=(16, 16), seed=4))
    a = dymon_forward(model, [[0.3, -0.1]], [0.5, 0.5])
    b = dymon_forward(model, [[0.3, -0.1]], [0.5, 0.5])
    assert np.array_equal(a, b)


def test_forward_eps_matters():
    model = _randomize_output(build_model(1, 2, hidden=(16,), seed=4))
    assert not np.allclose(dymon_forward(model, [[0.3, -0.1]], [1.0, 0.0]),
                           dymon_forward(model, [[0.3, -0.1]], [-1.0, 0.0]))


def test_forward_shape_errors():
    model = build_model(1, 2, order=2, hidden=(4,), seed=0)
    with pytest.raises(DimensionError):
        dymon_forward(model, [[0.0, 0.0]])
    with pytest.raises(DimensionError):
        dymon_forward(model, np.zeros((2, 2)), np.zeros(3))


def test_bad_architecture():
    with pytest.raises(ConfigurationError):
        build_model(4, 2)


def test_standardizer_round_trip(rng):
    x = rng.normal(5.0, 3.0, (100, 3))
    x[:, 2] = 7.0  # constant column falls back to unit scale
    s = Standardizer.fit(x)
    assert s.scale[2] == 1.0
    assert np.allclose(s.inverse(s.forward(x)), x, atol=1e-12)
    z = s.forward(x)
    assert np.allclose(z[:, :2].mean(axis=0), 0, atol=1e-12)
    assert np.allclose(z[:, :2].std(axis=0), 1)


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(batch_groups=0), dict(corruption_std=-1.0), dict(m_generated=1)):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad).validate()


def test_fixed_point_dataset():
    rng = make_rng(0)
    x = rng.uniform(-1, 1, (200, 2))
    ds = TransitionDataset(x[:, None, :], [r[None] for r in x])
    model = _randomize_output(build_model(1, 2, hidden=(16, 16), noise_dim=0, seed=0))
    cfg = TrainConfig(epochs=60, batch_groups=32, corruption_std=0.0, learning_rate=3e-3, seed=0)
    model, curve = train_dymon(ds, model, cfg)
    assert curve.losses[-1] < curve.losses[0]
    probe = rng.uniform(-0.8, 0.8, (20, 2))
    step = np.array([dymon_forward(model, p[None]) - p for p in probe])
    assert np.max(np.abs(step)) < 0.05


def test_linear_system_jacobian():
    A = np.array([[0.9, 0.1], [0.0, 0.9]])
    rng = make_rng(1)
    x = rng.uniform(-1, 1, (400, 2))
    ds = TransitionDataset(x[:, None, :], [(A @ r)[None] for r in x])
    model = build_model(1, 2, hidden=(32, 32), noise_dim=0, seed=2)
    cfg = TrainConfig(epochs=150, batch_groups=32, corruption_std=0.0, learning_rate=3e-3,
                      lr_final=1e-4, seed=0)
    model, _ = train_dymon(ds, model, cfg)
    for p in make_rng(7).uniform(-0.8, 0.8, (20, 2)):
        assert np.all(np.abs(jacobian(model, p) - (A - np.eye(2))) < 0.1)


def test_trained_jacobian_matches_fd():
    rng = make_rng(3)
    x = rng.uniform(-1, 1, (200, 2))
    ds = TransitionDataset(x[:, None, :], [np.sin(2 * r)[None] for r in x])
    model, _ = train_dymon(ds, build_model(1, 2, hidden=(16, 16), noise_dim=0, seed=1),
                           TrainConfig(epochs=20, batch_groups=32, seed=0))
    for p in rng.uniform(-0.9, 0.9, (10, 2)):
        J, Jfd = jacobian(model, p), jacobian_fd(model, p)
        assert np.all(np.abs(J - Jfd) <= 1e-4 * np.maximum(np.abs(J), 1e-2))


@pytest.mark.parametrize("arch,order", [(1, 1), (1, 3), (2, 1), (3, 2)])
def test_jacobian_matches_fd(arch, order, rng):
    model = _randomize_output(build_model(arch, 4, order=order, hidden=(12, 12), latent_dim=3,
                                          ae_hidden=(6,), seed=7))
    model.standardizer = Standardizer(rng.normal(size=4), rng.uniform(0.5, 2.0, 4))
    x = rng.standard_normal(4)
    hist = rng.standard_normal((order, 4))
    J = jacobian(model, x, hist)
    Jfd = jacobian_fd(model, x, hist)
    assert np.allclose(J, Jfd, atol=1e-6, rtol=1e-5)


def test_generate_one_step_matches_forward():
    model = _randomize_output(build_model(1, 2, order=2, hidden=(8,), seed=3))
    init = np.array([[0.1, 0.2], [0.3, 0.4]])
    traj = generate_chain(model, init, 1, make_rng(5))
    eps = make_rng(5).standard_normal((1, model.noise_dim))[0]
    assert traj.states.shape == (3, 2)
    assert np.allclose(traj.states[-1], dymon_forward(model, init, eps))
    assert not traj.meta["truncated"]


def test_generate_reproducible():
    model = _randomize_output(build_model(1, 1, hidden=(8,), seed=3))
    a = generate_chain(model, [[0.0]], 50, make_rng(1)).states
    b = generate_chain(model, [[0.0]], 50, make_rng(1)).states
    assert np.array_equal(a, b)


def test_generate_truncates_on_overflow():
    model = build_model(1, 1, hidden=(4,), noise_dim=0, seed=0)
    model.transition_net.weights[-1][:] = 0.0
    model.transition_net.biases[-1][:] = 1e308  # each step adds 1e308 -> inf on the 2nd
    states, cut = generate_chains(model, np.zeros((2, 1, 1)), 10, make_rng(0))
    assert cut == 1
    assert np.all(np.isfinite(states))
    traj = generate_chain(model, [[0.0]], 10, make_rng(0))
    assert traj.meta["truncated"] and traj.meta["truncated_at_step"] == 1


def test_generate_rejects_zero_steps():
    with pytest.raises(ConfigurationError):
        generate_chain(build_model(1, 1, hidden=(4,)), [[0.0]], 0, make_rng(0))


def test_train_nonfinite_loss():
    x = np.array([[1.0], [2.0]])
    ds = TransitionDataset(x[:, None, :], [r[None] for r in x])
    model = build_model(1, 1, hidden=(4,), noise_dim=0)
    model.transition_net.biases[-1][:] = np.inf
    with pytest.raises(NumericError, match="epoch 0"):
        train_dymon(ds, model, TrainConfig(epochs=1), fit_standardizer=False)


def test_train_dimension_mismatch():
    ds = TransitionDataset(np.zeros((3, 1, 2)), [np.zeros((1, 2))] * 3)
    with pytest.raises(DimensionError):
        train_dymon(ds, build_model(1, 3, hidden=(4,)), TrainConfig(epochs=1))


def test_stochastic_self_consistency():
    # each source x jumps to x + N(0, 0.3^2); the model must learn a spread, not a point
    rng = make_rng(2)
    src = rng.uniform(-1, 1, 300)
    targets = [np.array([[s + 0.3 * rng.standard_normal()] for _ in range(20)]) for s in src]
    ds = TransitionDataset(src[:, None, None], targets)
    model = build_model(1, 1, hidden=(32, 32), noise_dim=1, seed=0)
    cfg = TrainConfig(epochs=40, batch_groups=32, m_generated=32, corruption_std=0.0,
                      learning_rate=3e-3, lr_final=3e-4, seed=0)
    model, _ = train_dymon(ds, model, cfg)
    states, _ = generate_chains(model, np.zeros((2000, 1, 1)), 1, make_rng(3))
    gen = states[:, 1]
    fresh = 0.3 * make_rng(4).standard_normal((2000, 1))
    assert abs(gen.std() - 0.3) < 0.08
    assert mmd2(gen, fresh) < mmd2(gen, fresh + 0.3)
    assert mmd2(gen, fresh) < mmd2(np.zeros((2000, 1)), fresh)
