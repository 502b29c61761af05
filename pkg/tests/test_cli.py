import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dymon import checkpoint, csvio
from dymon.cli import main
from dymon.config import parse_config
from dymon.errors import ConfigurationError, ParseError
from dymon.model import build_model
from dymon.transitions import TimePointCloud, TransitionDataset


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)

    def _run(*argv):
        return main([str(a) for a in argv])

    return _run


def _cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


PENDULUM = """\
system = pendulum   # bob in Cartesian coordinates
steps = 1000
trajectory_path = traj.csv
transitions_path = tr.csv
checkpoint_path = m.ckpt
loss_path = loss.csv
generated_path = gen.csv
order = 2
hidden = 8,16,8
noise_dim = 0
epochs = 2
"""


# -- config --------------------------------------------------------------------

def test_config_parses_types_and_comments():
    cfg = parse_config("# header\nhidden = 8, 16,8\nepochs = 5 # trailing\n\nlr_final = none\n")
    assert cfg.get("hidden") == (8, 16, 8)
    assert cfg.get("epochs") == 5
    assert cfg.get("lr_final") is None
    assert cfg.get("order") == 1  # default


def test_config_unknown_key_line_number():
    with pytest.raises(ConfigurationError, match="line 3: unknown key 'colour'"):
        parse_config("seed = 1\n\ncolour = red\n", "x.cfg")


def test_config_bad_value_and_duplicates():
    with pytest.raises(ConfigurationError, match="line 1: bad value"):
        parse_config("epochs = many\n")
    with pytest.raises(ConfigurationError, match="line 2: duplicate"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigurationError, match="line 1: expected"):
        parse_config("seed 1\n")


# -- csv formats ---------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=8))
def test_trajectory_round_trip_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    x = np.array(rows)
    csvio.write_trajectory(path, x)
    assert np.array_equal(csvio.read_trajectory(path).states, x)


def test_transitions_round_trip(tmp_path, rng):
    ds = TransitionDataset(rng.standard_normal((4, 2, 3)), [rng.standard_normal((k, 3)) for k in (1, 3, 2, 5)])
    path = tmp_path / "tr.csv"
    csvio.write_transitions(path, ds)
    back = csvio.read_transitions(path)
    assert np.array_equal(back.histories, ds.histories)
    assert all(np.array_equal(a, b) for a, b in zip(back.targets, ds.targets))
    assert path.read_text().splitlines()[0] == "group_id,role,x0,x1,x2"


def test_points_round_trip(tmp_path, rng):
    cloud = TimePointCloud(rng.standard_normal((6, 2)), rng.random(6))
    path = tmp_path / "p.csv"
    csvio.write_points(path, cloud)
    back = csvio.read_points(path)
    assert np.array_equal(back.points, cloud.points) and np.array_equal(back.time_labels, cloud.time_labels)


@pytest.mark.parametrize("text,msg", [
    ("t,x0\n0,1\n1\n", "row 3: expected 2 fields"),
    ("t,x0\n0,abc\n", "row 2"),
    ("time,x0\n0,1\n", "row 1"),
    ("", "empty"),
])
def test_trajectory_parse_errors(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParseError, match=msg):
        csvio.read_trajectory(path)


@pytest.mark.parametrize("body,msg", [
    ("0,target,1\n", "target before any history"),
    ("0,history0,1\n0,history1,2\n0,target,3\n1,history0,1\n1,target,2\n", "history rows"),
    ("0,history0,1\n0,target,3\n1,history0,1\n1,target,2\n0,history0,1\n0,target,1\n", "not contiguous"),
    ("0,history0,1\n0,wibble,3\n", "unknown role"),
    ("0,history0,1\n", "no target rows"),
])
def test_transitions_parse_errors(tmp_path, body, msg):
    path = tmp_path / "bad.csv"
    path.write_text("group_id,role,x0\n" + body)
    with pytest.raises(ParseError, match=msg):
        csvio.read_transitions(path)


# -- subcommands -----------------------------------------------------------------

def test_simulate_row_count_and_determinism(run, tmp_path):
    cfg = _cfg(tmp_path, PENDULUM)
    assert run("simulate", "--config", cfg) == 0
    first = (tmp_path / "traj.csv").read_bytes()
    lines = first.decode().splitlines()
    assert len(lines) == 1001 and lines[0] == "t,x0,x1"
    assert run("simulate", "--config", cfg) == 0
    assert (tmp_path / "traj.csv").read_bytes() == first


@pytest.mark.parametrize("system,cols", [("double_pendulum", 5), ("gmm_mcmc", 2), ("rotating", 257)])
def test_simulate_other_systems(run, tmp_path, system, cols):
    assert run("simulate", "--set", f"system={system}", "--set", "steps=50", "--set", "frames=40",
               "--set", "trajectory_path=o.csv") == 0
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert len(lines[0].split(",")) == cols


def test_simulate_unknown_system(run, capsys):
    assert run("simulate", "--set", "system=teapot", "--set", "trajectory_path=o.csv") == 2
    assert "pendulum, double_pendulum, gmm_mcmc, rotating" in capsys.readouterr().err


def test_unknown_config_key_exit(run, tmp_path, capsys):
    cfg = _cfg(tmp_path, "system = pendulum\nwidth = 3\n")
    assert run("simulate", "--config", cfg) == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_required_key(run, capsys):
    assert run("simulate", "--set", "system=pendulum") == 2
    assert "trajectory_path" in capsys.readouterr().err


def test_io_error_exit(run, tmp_path):
    assert run("build-transitions", "--set", "trajectory_path=missing.csv", "--set", "transitions_path=o.csv") == 3


def test_build_transitions_count(run, tmp_path):
    csvio.write_trajectory(tmp_path / "t.csv", np.arange(400.0)[:, None])  # 401 rows incl. header
    assert run("build-transitions", "--set", "trajectory_path=t.csv", "--set", "transitions_path=tr.csv",
               "--set", "step_size=10") == 0
    ds = csvio.read_transitions(tmp_path / "tr.csv")
    assert len(ds) == 390
    assert all(len(y) == 1 for y in ds.targets)  # neighbor_k = 0 keeps raw pairs
    assert ds.targets[0][0, 0] == 10.0


def test_build_transitions_directed_constant_labels(run, tmp_path, capsys):
    csvio.write_points(tmp_path / "p.csv", TimePointCloud(np.arange(10.0)[:, None], np.zeros(10)))
    assert run("build-transitions", "--set", "transition_mode=directed", "--set", "points_path=p.csv",
               "--set", "transitions_path=o.csv", "--set", "affinity_k=3") == 2
    assert "no later neighbors" in capsys.readouterr().err


def test_pipeline_reproducible(run, tmp_path):
    cfg = _cfg(tmp_path, PENDULUM)
    outputs = {}
    for attempt in range(2):
        assert run("simulate", "--config", cfg) == 0
        assert run("build-transitions", "--config", cfg) == 0
        assert run("train", "--config", cfg) == 0
        assert run("generate", "--config", cfg, "--set", "steps=20") == 0
        assert run("jacobian", "--config", cfg, "--set", "points=0.1,-0.9", "--set", "jacobian_path=j.csv") == 0
        assert run("eval", "--config", cfg, "--set", "reference_path=gen.csv", "--set", "metrics_path=m.csv") == 0
        outputs[attempt] = {n: (tmp_path / n).read_bytes()
                            for n in ("traj.csv", "tr.csv", "m.ckpt", "loss.csv", "gen.csv", "j.csv", "m.csv")}
    assert outputs[0] == outputs[1]
    assert len((tmp_path / "gen.csv").read_text().splitlines()) == 21
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 3


def test_train_zero_epochs(run, tmp_path):
    cfg = _cfg(tmp_path, PENDULUM)
    assert run("simulate", "--config", cfg) == 0
    assert run("build-transitions", "--config", cfg) == 0
    assert run("train", "--config", cfg, "--set", "epochs=0") == 2


def test_train_nan_exit(run, tmp_path, capsys):
    ds = TransitionDataset(np.array([[[1.0]], [[np.inf]]]), [np.array([[1.0]]), np.array([[2.0]])])
    csvio.write_transitions(tmp_path / "tr.csv", ds)
    assert run("train", "--set", "transitions_path=tr.csv", "--set", "checkpoint_path=m.ckpt",
               "--set", "hidden=4", "--set", "epochs=1") == 4
    assert "epoch 0" in capsys.readouterr().err


def test_train_bad_architecture_exit(run, tmp_path):
    csvio.write_transitions(tmp_path / "tr.csv", TransitionDataset(np.zeros((3, 1, 2)), [np.ones((1, 2))] * 3))
    assert run("train", "--set", "transitions_path=tr.csv", "--set", "checkpoint_path=m.ckpt",
               "--set", "architecture=5", "--set", "epochs=1") == 2


def _save(tmp_path, model, name="m.ckpt"):
    checkpoint.save_model(model, tmp_path / name)
    return name


def test_generate_rows_and_seeds(run, tmp_path):
    model = build_model(1, 1, hidden=(4,), seed=0)
    model.transition_net.weights[-1][:] = 0.3
    _save(tmp_path, model)
    base = ["generate", "--set", "checkpoint_path=m.ckpt", "--set", "init=0.5", "--set", "steps=1000"]
    assert run(*base, "--set", "generated_path=a.csv", "--set", "seed=1") == 0
    assert run(*base, "--set", "generated_path=b.csv", "--set", "seed=2") == 0
    a = (tmp_path / "a.csv").read_text().splitlines()
    assert len(a) == 1001 and a[0] == "t,x0"
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


def test_generate_deterministic_checkpoint(run, tmp_path):
    model = build_model(1, 2, hidden=(4,), noise_dim=0, seed=0)
    model.transition_net.weights[-1][:] = 0.1
    _save(tmp_path, model)
    for name in ("a.csv", "b.csv"):
        assert run("generate", "--set", "checkpoint_path=m.ckpt", "--set", "init=0.1,0.2", "--set", "steps=30",
                   "--set", f"generated_path={name}") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_generate_from_data_file(run, tmp_path):
    _save(tmp_path, build_model(1, 2, order=2, hidden=(4,), seed=0))
    csvio.write_trajectory(tmp_path / "t.csv", np.arange(20.0).reshape(10, 2))
    assert run("generate", "--set", "checkpoint_path=m.ckpt", "--set", "trajectory_path=t.csv",
               "--set", "init_index=3", "--set", "steps=2", "--set", "generated_path=g.csv") == 0
    # fresh model is the identity map, so it repeats the newest history state
    assert np.array_equal(csvio.read_trajectory(tmp_path / "g.csv").states, [[8.0, 9.0], [8.0, 9.0]])


def test_generate_version_error(run, tmp_path):
    text = checkpoint.dumps(build_model(1, 1, hidden=(4,))).replace("dymon-checkpoint 1", "dymon-checkpoint 9")
    (tmp_path / "m.ckpt").write_text(text)
    assert run("generate", "--set", "checkpoint_path=m.ckpt", "--set", "init=0", "--set", "generated_path=g.csv") == 2


def test_generate_thin(run, tmp_path):
    _save(tmp_path, build_model(1, 1, hidden=(4,), seed=0))
    assert run("generate", "--set", "checkpoint_path=m.ckpt", "--set", "init=1", "--set", "steps=4",
               "--set", "thin=5", "--set", "generated_path=g.csv") == 0
    traj = csvio.read_trajectory(tmp_path / "g.csv")
    assert np.array_equal(traj.meta["times"], [5, 10, 15, 20])


def test_eval_identical_and_assert(run, tmp_path, capsys):
    csvio.write_trajectory(tmp_path / "a.csv", np.linspace(0, 1, 50)[:, None])
    common = ["eval", "--set", "generated_path=a.csv", "--set", "metrics_path=m.csv"]
    assert run(*common, "--set", "reference_path=a.csv") == 0
    assert (tmp_path / "m.csv").read_text() == "metric,value\nemd,0\nmse,0\n"
    csvio.write_trajectory(tmp_path / "b.csv", np.linspace(0, 1, 50)[:, None] + 0.5)
    assert run(*common, "--set", "reference_path=b.csv", "--assert-below", "0.3") == 5
    assert run(*common, "--set", "reference_path=b.csv", "--assert-below", "0.6") == 0
    assert "emd: 0.5" in capsys.readouterr().out


def test_eval_shape_mismatch(run, tmp_path):
    csvio.write_trajectory(tmp_path / "a.csv", np.zeros((5, 2)))
    csvio.write_trajectory(tmp_path / "b.csv", np.zeros((5, 3)))
    assert run("eval", "--set", "generated_path=a.csv", "--set", "reference_path=b.csv") == 2


def test_eval_latent_cycle(run, tmp_path):
    t = np.linspace(0, 2 * np.pi, 30, endpoint=False)
    csvio.write_trajectory(tmp_path / "z.csv", np.c_[np.cos(t), np.sin(t), np.zeros(30)])
    assert run("eval", "--set", "generated_path=z.csv", "--set", "reference_path=z.csv",
               "--set", "metrics_path=m.csv") == 0
    assert "is_single_cycle,1" in (tmp_path / "m.csv").read_text()


def test_jacobian_zero_and_fd(run, tmp_path):
    model = build_model(1, 3, hidden=(6, 6), seed=2)
    _save(tmp_path, model, "zero.ckpt")
    assert run("jacobian", "--set", "checkpoint_path=zero.ckpt", "--set", "points=0.1,0.2,0.3;1,2,3",
               "--set", "jacobian_path=j0.csv") == 0
    rows = np.loadtxt(tmp_path / "j0.csv", delimiter=",", skiprows=1)
    assert rows.shape == (6, 5) and np.all(rows[:, 2:] == 0)

    model.transition_net.weights[-1][:] = np.random.default_rng(0).standard_normal((6, 3))
    _save(tmp_path, model)
    for method, name in (("backprop", "jb.csv"), ("fd", "jf.csv")):
        assert run("jacobian", "--set", "checkpoint_path=m.ckpt", "--set", "points=0.1,0.2,0.3",
                   "--set", f"jacobian_path={name}", "--method", method) == 0
    jb = np.loadtxt(tmp_path / "jb.csv", delimiter=",", skiprows=1)[:, 2:]
    jf = np.loadtxt(tmp_path / "jf.csv", delimiter=",", skiprows=1)[:, 2:]
    assert np.all(np.abs(jb - jf) <= 1e-4 * np.maximum(np.abs(jb), 1e-3))


def test_dymon_threads_validation(run, monkeypatch):
    monkeypatch.setenv("DYMON_THREADS", "zero")
    assert run("simulate", "--set", "system=pendulum", "--set", "trajectory_path=o.csv") == 2
    monkeypatch.setenv("DYMON_THREADS", "2")
    assert run("simulate", "--set", "system=pendulum", "--set", "trajectory_path=o.csv") == 0


SMALL_GMM = ["--set", "n_train=3000", "--set", "n_eval=300", "--set", "epochs=2", "--set", "steps_per_epoch=10",
             "--set", "hmm_iters=3", "--set", "kf_iters=2", "--set", "hidden=8,8", "--set", "thin=2"]


def test_compare_gmm_rows_and_skip(run, tmp_path):
    assert run("compare-gmm", *SMALL_GMM, "--set", "comparison_path=c.csv") == 0
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "model,emd,train_seconds,sample_seconds"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["dymon", "hmm", "kf"]
    emd_first = [ln.split(",")[1] for ln in lines[1:]]

    assert run("compare-gmm", *SMALL_GMM, "--set", "comparison_path=c2.csv", "--skip", "kf") == 0
    lines2 = (tmp_path / "c2.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines2[1:]] == ["dymon", "hmm"]
    # timings vary between runs; the scores do not
    assert [ln.split(",")[1] for ln in lines2[1:]] == emd_first[:2]
