import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadtcn import physics
from quadtcn.dataset import (
    CSV_HEADER,
    SynthSpec,
    Trajectory,
    fit_norm_stats,
    interpolate_uniform,
    load_telemetry,
    make_windows,
    save_telemetry,
    split_dataset,
    synth_trajectories,
    window_arrays,
    window_count,
)
from quadtcn.errors import DataError, TelemetryError
from quadtcn.quadstate import truncate_state

P = physics.PhysicsParams()


def random_traj(n, seed=0, dt=0.01):
    rng = np.random.default_rng(seed)
    return Trajectory(np.arange(n) * dt, rng.normal(size=(n, 12)), rng.random((n, 4)), source=f"rand{seed}")


def write_rows(path, rows, header=None, comments=()):
    lines = list(comments) + [header or ",".join(CSV_HEADER)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def test_trajectory_validation():
    with pytest.raises(DataError):
        Trajectory(np.array([0.0]), np.zeros((1, 12)), np.zeros((1, 4)))
    with pytest.raises(DataError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 12)), np.zeros((2, 4)))
    with pytest.raises(DataError):
        Trajectory(np.array([0.0, 1.0]), np.full((2, 12), np.inf), np.zeros((2, 4)))


def test_load_minimal_file(tmp_path):
    p = tmp_path / "a.csv"
    write_rows(p, [np.arange(17.0), np.arange(17.0) + 1], comments=["# exported flight"])
    traj = load_telemetry(p)
    assert len(traj) == 2
    np.testing.assert_array_equal(traj.states[1], np.arange(1.0, 13.0) + 1)


def test_timestamp_regression_cites_line(tmp_path):
    rows = [[0.01 * i] + [0.0] * 16 for i in range(20)]
    rows[15][0] = rows[14][0] - 0.005  # data row 16 sits on file line 17
    p = tmp_path / "b.csv"
    write_rows(p, rows)
    with pytest.raises(TelemetryError) as err:
        load_telemetry(p)
    assert err.value.line == 17
    assert "17" in str(err.value)


def test_bad_header_and_rows(tmp_path):
    p = tmp_path / "c.csv"
    write_rows(p, [[0.0] * 17, [1.0] * 17], header="t,roll,pitch")
    with pytest.raises(TelemetryError):
        load_telemetry(p)
    p.write_text(",".join(CSV_HEADER) + "\n" + ",".join(["0"] * 16) + "\n")
    with pytest.raises(TelemetryError) as err:
        load_telemetry(p)
    assert err.value.line == 2
    p.write_text(",".join(CSV_HEADER) + "\n" + ",".join(["0"] * 16 + ["nan"]) + "\n" + ",".join(["1"] * 17) + "\n")
    with pytest.raises(TelemetryError):
        load_telemetry(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_csv_roundtrip_lossless(tmp_path_factory, seed):
    traj = random_traj(7, seed)
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    save_telemetry(traj, p, comment="roundtrip")
    back = load_telemetry(p)
    assert np.array_equal(back.timestamps, traj.timestamps)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.controls, traj.controls)
    q = p.with_name("u.csv")
    save_telemetry(back, q, comment="roundtrip")
    assert q.read_bytes() == p.read_bytes()


def test_interpolate_uniform_identity():
    traj = random_traj(50, 1)
    out = interpolate_uniform(traj, 100.0)
    np.testing.assert_allclose(out.states, traj.states, atol=1e-12)
    np.testing.assert_array_equal(out.controls, traj.controls)


def test_interpolate_linear_four_hz():
    states = np.zeros((2, 12))
    states[1, 3] = 1.0
    traj = Trajectory(np.array([0.0, 1.0]), states, np.zeros((2, 4)))
    out = interpolate_uniform(traj, 4.0)
    np.testing.assert_allclose(out.timestamps, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(out.states[:, 3], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)


def test_interpolate_yaw_takes_shortest_arc():
    states = np.zeros((2, 12))
    states[0, 2] = np.deg2rad(179.0)
    states[1, 2] = np.deg2rad(-179.0)
    out = interpolate_uniform(Trajectory(np.array([0.0, 1.0]), states, np.zeros((2, 4))), 2.0)
    assert abs(np.rad2deg(out.states[1, 2]) - 180.0) < 1e-9


def test_interpolate_controls_zero_order_hold():
    traj = Trajectory(np.array([0.0, 0.1, 0.2]), np.zeros((3, 12)), np.array([[1.0] * 4, [2.0] * 4, [3.0] * 4]))
    out = interpolate_uniform(traj, 40.0)
    np.testing.assert_array_equal(out.controls[:, 0], [1, 1, 1, 1, 2, 2, 2, 2, 3])


def test_interpolate_too_short():
    with pytest.raises(DataError):
        interpolate_uniform(Trajectory(np.array([0.0, 0.001]), np.zeros((2, 12)), np.zeros((2, 4))), 100.0)


def test_norm_stats_properties():
    train = [random_traj(100, i) for i in range(3)]
    stats = fit_norm_stats(train)
    z = stats.normalize_states(np.concatenate([t.states for t in train]))
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-9)
    x = random_traj(10, 99).states
    np.testing.assert_allclose(stats.denormalize_states(stats.normalize_states(x)), x, atol=1e-12)
    y = x[:, 6:]
    np.testing.assert_allclose(stats.denormalize_labels(stats.normalize_labels(y)), y, atol=1e-12)
    test_z = stats.normalize_states(random_traj(100, 50).states + 3.0)
    assert np.all(np.abs(test_z.mean(axis=0)) > 0.1)


def test_norm_stats_constant_channel_flagged():
    traj = random_traj(20, 2)
    states = traj.states.copy()
    states[:, 5] = 4.0
    stats = fit_norm_stats([Trajectory(traj.timestamps, states, traj.controls)])
    assert stats.input_constant[5] and stats.input_std[5] == 1.0
    assert not stats.input_constant[0]
    with pytest.raises(DataError):
        fit_norm_stats([])


def test_window_examples():
    assert len(make_windows([random_traj(10)], 6, 4, 1)) == 1
    assert len(make_windows([random_traj(300)], 90, 90, 10)) == 13
    traj = random_traj(40, 3)
    for w in make_windows([traj], 5, 7, 3):
        np.testing.assert_array_equal(w.Y_f[0], truncate_state(traj.states[w.t0 + 1]))
        np.testing.assert_array_equal(w.X_p[-1], traj.states[w.t0])
        np.testing.assert_array_equal(w.U_f[0], traj.controls[w.t0 + 1])


@given(st.integers(2, 60), st.integers(1, 20), st.integers(1, 20), st.integers(1, 7))
def test_window_count_matches_enumeration(n, past, future, stride):
    wins = make_windows([random_traj(n)], past, future, stride)
    assert len(wins) == window_count(n, past, future, stride)
    expected = (n - past - future) // stride + 1 if n >= past + future else 0
    assert len(wins) == expected


@settings(max_examples=25)
@given(st.lists(st.integers(2, 40), min_size=1, max_size=4), st.integers(1, 6), st.integers(1, 6))
def test_windows_never_cross_trajectories(lengths, past, future):
    trajs = [random_traj(n, i) for i, n in enumerate(lengths)]
    for w in make_windows(trajs, past, future, 1):
        t = trajs[w.traj_id]
        assert w.t0 - past + 1 >= 0 and w.t0 + future <= len(t) - 1
        np.testing.assert_array_equal(w.X_p, t.states[w.t0 - past + 1:w.t0 + 1])


def test_window_arrays_mask_future_states():
    trajs = [random_traj(30, 4)]
    stats = fit_norm_stats(trajs)
    wins = make_windows(trajs, 5, 4, 2)
    X, Y = window_arrays(wins, stats)
    assert X.shape == (len(wins), 16, 9) and Y.shape == (len(wins), 6, 4)
    assert np.all(X[:, :12, 5:] == 0.0)
    np.testing.assert_allclose(stats.denormalize_labels(Y, axis=1)[0].T, wins[0].Y_f, atol=1e-12)
    with pytest.raises(DataError):
        window_arrays([])


def test_split_counts_and_determinism():
    trajs = [random_traj(5, i) for i in range(54)]
    train, test = split_dataset(trajs, 0.1, seed=3)
    assert len(test) == 5 and len(train) == 49
    ids = {t.source for t in train} | {t.source for t in test}
    assert len(ids) == 54 and not ({t.source for t in train} & {t.source for t in test})
    again = split_dataset(trajs, 0.1, seed=3)
    assert [t.source for t in again[1]] == [t.source for t in test]
    with pytest.raises(DataError):
        split_dataset(trajs[:1], 0.1)
    with pytest.raises(DataError):
        split_dataset(trajs, 1.0)


def test_synth_zero_amplitude_hovers():
    spec = SynthSpec(amplitude=0.0, perturbation=0.0)
    (traj,) = synth_trajectories(P, 1, 2.0, seed=0, spec=spec)
    assert np.abs(traj.states[:, 9:12]).max() < 1e-9


def test_synth_deterministic_and_bounded():
    a = synth_trajectories(P, 3, 5.0, seed=5)
    b = synth_trajectories(P, 3, 5.0, seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.states, y.states) and np.array_equal(x.controls, y.controls)
    for t in a:
        assert len(t) == 501
        assert np.abs(t.states[:, 3:6]).max() <= 5.0
        assert np.abs(t.states[:, 0:3]).max() <= 1.0
        assert t.controls.min() >= 0.0


def test_synth_prefix_independent_of_count():
    a = synth_trajectories(P, 2, 3.0, seed=8)
    b = synth_trajectories(P, 4, 3.0, seed=8)
    assert np.array_equal(a[1].states, b[1].states)


def test_synth_obeys_dynamics():
    (traj,) = synth_trajectories(P, 1, 1.0, seed=2)
    for k in (1, 50, 99):
        step = physics.integrate_step(traj.states[k - 1], traj.controls[k], physics.DT, P)
        np.testing.assert_allclose(step, traj.states[k], atol=1e-12)


def test_synth_input_errors():
    with pytest.raises(DataError):
        synth_trajectories(P, 0, 1.0)
