import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forcesense.datagen import (
    ConfigError,
    ContactConfig,
    CsvParseError,
    TrajectoryConfig,
    build_dataset,
    contact_wrench_profile,
    generate_contact_trajectory,
    generate_freespace_trajectory,
    load_csv,
    make_partition,
    save_csv,
    split_sizes,
)
from forcesense.manipulator import SensorModel, reference_chain


@pytest.fixture(scope="module")
def chain():
    return reference_chain()


def test_zero_harmonics_is_constant_midpoint(chain):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=5, n_harmonics=0))
    np.testing.assert_array_equal(traj.q, np.tile(chain.mid_configuration, (500, 1)))
    np.testing.assert_array_equal(traj.qd, np.zeros((500, 6)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_velocity_and_position_budgets(chain, seed):
    cfg = TrajectoryConfig(duration_s=120, seed=seed, max_velocity=[0.3, 0.5, 0.02, 0.6, 0.6, 0.6],
                           n_harmonics=4, amplitude_fraction=1.0)
    traj = generate_freespace_trajectory(chain, cfg)
    assert np.all(np.abs(traj.qd).max(axis=0) <= np.asarray(cfg.max_velocity) + 1e-12)
    lo, hi = chain.joint_limits.T
    assert np.all(traj.q >= lo - 1e-12) and np.all(traj.q <= hi + 1e-12)


def test_generation_is_deterministic(chain):
    cfg = TrajectoryConfig(duration_s=10, rate_hz=100, seed=42)
    a = generate_freespace_trajectory(chain, cfg)
    b = generate_freespace_trajectory(chain, cfg)
    assert len(a) == 1000
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.qd, b.qd)


def test_velocity_is_derivative_of_position(chain):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=60, rate_hz=1000, seed=3))
    fd = np.gradient(traj.q, traj.t, axis=0)
    np.testing.assert_allclose(fd[5:-5], traj.qd[5:-5], atol=2e-4)


def test_dwells_have_exactly_zero_velocity(chain):
    cfg = TrajectoryConfig(duration_s=60, dwell_period_s=20, dwell_s=2, ramp_s=1)
    traj = generate_freespace_trajectory(chain, cfg)
    u = traj.t % 20
    assert np.all(traj.qd[u < 2] == 0)
    assert np.all(np.abs(traj.qd[u > 2.005]).max(axis=1) > 0)


def test_infeasible_amplitude_budget(chain):
    with pytest.raises(ConfigError):
        generate_freespace_trajectory(chain, TrajectoryConfig(amplitude_fraction=1.5))


def test_zero_peak_gives_zero_wrench(chain):
    _, W = generate_contact_trajectory(chain, ContactConfig(peak_force=0.0))
    assert np.all(W == 0)


def test_ramp_midpoint():
    cfg = ContactConfig(duration_s=60, rate_hz=100, peak_force=[10, 0, 0], lead_s=0.0, ramp_s=2.0, hold_s=1.0)
    W = contact_wrench_profile(cfg)
    np.testing.assert_allclose(W[100], [5, 0, 0, 0, 0, 0], atol=1e-12)


def test_profile_range_equals_peak():
    for profile in ("ramp_hold_release", "sinusoidal_push"):
        cfg = ContactConfig(profile=profile, peak_force=[12.0, 8.0, 15.0])
        W = contact_wrench_profile(cfg)
        rng = W[:, :3].max(axis=0) - W[:, :3].min(axis=0)
        np.testing.assert_allclose(rng, [12.0, 8.0, 15.0], atol=1e-9)


def test_contact_profile_that_does_not_fit_is_rejected():
    with pytest.raises(ConfigError):
        ContactConfig(duration_s=10).validate()


def test_partition_examples():
    assert split_sizes(1000) == (800, 100, 100)
    assert split_sizes(10) == (8, 1, 1)


@given(st.integers(min_value=10, max_value=100_000))
def test_partition_invariant(n):
    part = make_partition(n)
    (a0, a1), (b0, b1), (c0, c1) = part["train"], part["val"], part["test"]
    assert a0 == 0 and a1 == b0 and b1 == c0 and c1 == n
    for (lo, hi), frac in zip((part["train"], part["val"], part["test"]), (0.8, 0.1, 0.1)):
        assert abs((hi - lo) - frac * n) <= 1


def test_zeroed_sensor_dataset(chain):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=5))
    ds = build_dataset(chain, SensorModel(), traj)
    np.testing.assert_array_equal(ds.tau_measured, ds.tau_free)
    assert not ds.has_contact.any()
    assert ds.partition == {"train": (0, 400), "val": (400, 450), "test": (450, 500)}


def test_empty_dataset_rejected(chain):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=5))
    with pytest.raises(ValueError):
        build_dataset(chain, SensorModel(), traj.__class__(traj.t[:0], traj.q[:0], traj.qd[:0]))


def test_contact_flags_follow_contacts(chain):
    traj, W = generate_contact_trajectory(chain, ContactConfig())
    ds = build_dataset(chain, SensorModel(), traj, W)
    assert ds.has_contact.all()
    assert ds[10].contact_wrench_truth is not None
    free = build_dataset(chain, SensorModel(), traj)
    assert free[10].contact_wrench_truth is None


def small_dataset(chain, seed=0, duration=3.0):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=duration, seed=seed))
    sensor = SensorModel(noise_sigma=np.full(6, 0.01), bias_kind="ou_drift", ou_theta=0.1, ou_sigma=0.05, seed=seed)
    W = np.random.default_rng(seed).normal(size=(len(traj), 6))
    return build_dataset(chain, sensor, traj, W, meta={"profile": "si", "seed": seed})


def test_csv_round_trip(chain, tmp_path):
    ds = small_dataset(chain)
    path = save_csv(ds, tmp_path / "d.csv")
    back = load_csv(path)
    assert back.equals(ds)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=66, max_size=66))
def test_csv_round_trip_arbitrary_floats(tmp_path_factory, values):
    chain = reference_chain()
    ds = small_dataset(chain, duration=0.1)
    ds.tau_measured[0] = values[:6]
    ds.wrench[0] = values[6:12]
    ds.jacobian[0] = np.reshape(values[12:48], (6, 6))
    ds.q[0] = values[48:54]
    ds.qd[0] = values[54:60]
    ds.tau_free[0] = values[60:66]
    path = save_csv(ds, tmp_path_factory.mktemp("rt") / "d.csv")
    assert load_csv(path).equals(ds)


def test_csv_row_count(chain, tmp_path):
    traj = generate_freespace_trajectory(chain, TrajectoryConfig(duration_s=60, rate_hz=100))
    ds = build_dataset(chain, SensorModel(), traj)
    path = save_csv(ds, tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 6001
    assert lines[0].split(",")[:3] == ["t", "q1", "q2"]
    assert len(lines[0].split(",")) == 68


def test_csv_wrong_column_count(chain, tmp_path):
    ds = small_dataset(chain, duration=0.1)
    path = save_csv(ds, tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    lines[4] = ",".join(lines[4].split(",")[:-2])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CsvParseError) as err:
        load_csv(path)
    assert err.value.line == 5
    assert "line 5" in str(err.value)


def test_csv_bad_value_names_column(chain, tmp_path):
    ds = small_dataset(chain, duration=0.1)
    path = save_csv(ds, tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[3] = "abc"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CsvParseError) as err:
        load_csv(path)
    assert (err.value.line, err.value.column) == (3, 4)
    assert "q3" in str(err.value)
