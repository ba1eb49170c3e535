import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forcesense.baselines import MeasurementOnly
from forcesense.datagen import ContactConfig, build_dataset, generate_contact_trajectory
from forcesense.estimator import SingularJacobianError, SolvePolicy, estimate_series, estimate_wrench
from forcesense.manipulator import SensorModel, jacobian, reference_chain


def well_conditioned(rng):
    while True:
        J = rng.normal(size=(6, 6))
        if np.linalg.cond(J) < 1e3:
            return J


def test_identity_jacobian_returns_residual():
    est = estimate_wrench(np.eye(6), np.array([1.0, 2, 3, 0, 0, 0]), np.zeros(6))
    np.testing.assert_array_equal(est.wrench.as_vector(), [1, 2, 3, 0, 0, 0])
    assert est.ok and est.jacobian_condition == 1.0


def test_perfect_prediction_gives_zero_wrench():
    rng = np.random.default_rng(0)
    J, tau = well_conditioned(rng), rng.normal(size=6)
    np.testing.assert_array_equal(estimate_wrench(J, tau, tau).wrench.as_vector(), np.zeros(6))


def test_constructed_wrench_is_recovered():
    rng = np.random.default_rng(1)
    for _ in range(100):
        J = well_conditioned(rng)
        F = rng.normal(size=6) * 10
        est = estimate_wrench(J, J.T @ F, np.zeros(6))
        np.testing.assert_allclose(est.wrench.as_vector(), F, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_estimate_is_linear_in_residual(seed, a, b):
    rng = np.random.default_rng(seed)
    J = well_conditioned(rng)
    r1, r2 = rng.normal(size=6), rng.normal(size=6)
    f = lambda r: estimate_wrench(J, r, np.zeros(6)).wrench.as_vector()
    np.testing.assert_allclose(f(a * r1 + b * r2), a * f(r1) + b * f(r2), atol=1e-8)


def test_damped_agrees_with_exact_when_well_conditioned():
    rng = np.random.default_rng(2)
    J, tau = well_conditioned(rng), rng.normal(size=6)
    exact = estimate_wrench(J, tau, np.zeros(6)).wrench.as_vector()
    damped = estimate_wrench(J, tau, np.zeros(6), SolvePolicy(kind="damped", damping=1e-8)).wrench.as_vector()
    np.testing.assert_allclose(damped, exact, atol=1e-6)


def test_singular_jacobian_refused_or_damped():
    J = np.eye(6)
    J[5, 5] = 0.0
    with pytest.raises(SingularJacobianError) as err:
        estimate_wrench(J, np.ones(6), np.zeros(6))
    assert err.value.condition > 1e8
    est = estimate_wrench(J, np.ones(6), np.zeros(6), SolvePolicy(fallback=True))
    assert np.all(np.isfinite(est.wrench.as_vector()))
    np.testing.assert_allclose(est.wrench.as_vector()[:5], 1.0, atol=1e-9)


def test_rejects_bad_jacobian():
    with pytest.raises(ValueError):
        estimate_wrench(np.full((6, 6), np.nan), np.zeros(6), np.zeros(6))
    with pytest.raises(ValueError):
        SolvePolicy(kind="pinv")


def test_closed_loop_identity_with_perfect_predictor():
    chain = reference_chain()
    traj, W = generate_contact_trajectory(chain, ContactConfig(duration_s=60.0))
    ds = build_dataset(chain, SensorModel(), traj, W)

    class Perfect:
        method_tag = "perfect"

        def predict_series(self, d):
            return d.tau_free, np.ones(len(d), bool)

    _, F, ok = estimate_series(Perfect(), ds)
    assert ok.all()
    assert np.abs(F - ds.wrench).max() < 1e-9


def test_measurement_only_carries_free_space_torque():
    chain = reference_chain()
    traj, W = generate_contact_trajectory(chain, ContactConfig(duration_s=60.0))
    ds = build_dataset(chain, SensorModel(), traj, W)
    _, F, _ = estimate_series(MeasurementOnly(), ds)
    for i in (0, 1234, 5999):
        extra = np.linalg.solve(jacobian(chain, ds.q[i]).T, ds.tau_free[i])
        np.testing.assert_allclose(F[i] - ds.wrench[i], extra, atol=1e-9)


def test_unavailable_steps_are_reported():
    chain = reference_chain()
    traj, W = generate_contact_trajectory(chain, ContactConfig(duration_s=60.0))
    ds = build_dataset(chain, SensorModel(), traj, W)

    class WarmUp:
        method_tag = "w"

        def predict_series(self, d):
            tau = d.tau_free.copy()
            tau[:3] = np.nan
            ok = np.ones(len(d), bool)
            ok[:3] = False
            return tau, ok

    est, F, ok = estimate_series(WarmUp(), ds)
    assert [e.status for e in est[:4]] == ["unavailable"] * 3 + ["ok"]
    assert np.isnan(F[:3]).all() and not ok[:3].any()
