import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forcesense.baselines import (
    BiasModel,
    FitError,
    LookupIndex,
    MeasurementOnly,
    build_index,
    fit_bias,
    lookup,
    measurement_only,
)
from forcesense.datagen import ConfigError, Dataset, make_partition
from forcesense.manipulator import JointState


def table_dataset(q, qd, tau):
    n = len(q)
    return Dataset(
        t=np.arange(n) * 0.01, q=np.asarray(q, float), qd=np.asarray(qd, float),
        tau_measured=np.asarray(tau, float), tau_free=np.zeros((n, 6)), wrench=np.zeros((n, 6)),
        has_contact=np.zeros(n, bool), jacobian=np.tile(np.eye(6), (n, 1, 1)), rate_hz=100.0,
        partition=make_partition(n), meta={},
    )


def random_dataset(n, seed=0, levels=None):
    rng = np.random.default_rng(seed)
    if levels is None:
        q, qd = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
    else:  # coarse grid values produce many exact distance ties
        q, qd = rng.integers(0, levels, (n, 6)).astype(float), rng.integers(0, levels, (n, 6)).astype(float)
    return table_dataset(q, qd, rng.normal(size=(n, 6)))


def brute_force(ds, query, k):
    feats = ds.features
    mu, sd = feats.mean(axis=0), feats.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    keys = (feats - mu) / sd
    z = (np.asarray(query) - mu) / sd
    dist = [(float(np.sum((row - z) ** 2)), i) for i, row in enumerate(keys)]
    chosen = sorted(i for _, i in sorted(dist)[:k])
    total = np.zeros(6)
    for i in chosen:
        total = total + ds.tau_measured[i]
    return chosen, total / k


def test_measurement_only_is_zero():
    np.testing.assert_array_equal(measurement_only(), np.zeros(6))
    tau, ok = MeasurementOnly().predict_series(random_dataset(5))
    np.testing.assert_array_equal(tau, 0)
    assert ok.all()


@pytest.mark.parametrize("levels", [None, 3])
def test_index_matches_brute_force(levels):
    ds = random_dataset(1000, seed=1, levels=levels)
    index = build_index(ds, k=4)
    rng = np.random.default_rng(2)
    for _ in range(100):
        query = ds.features[rng.integers(1000)] if levels else rng.normal(size=12)
        chosen, mean = brute_force(ds, query, 4)
        assert sorted(index.neighbors(query).tolist()) == chosen
        np.testing.assert_array_equal(index.lookup(query), mean)


def test_equidistant_tie_goes_to_earlier_row():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(3, 6))
    q[:, 0] = [1.0, -1.0, 0.0]  # zero mean keeps the two candidates exactly symmetric
    q[2, 1:] += 10.0
    q[1, 1:] = q[0, 1:]
    ds = table_dataset(q, np.ones((3, 6)), np.arange(18.0).reshape(3, 6))
    with pytest.warns(RuntimeWarning):
        index = build_index(ds, k=1)
    query = np.concatenate([[0.0], q[0, 1:], np.ones(6)])
    d = index.keys - index.normalize(query)
    assert np.sum(d[0] ** 2) == np.sum(d[1] ** 2)
    assert index.neighbors(query).tolist() == [0]
    np.testing.assert_array_equal(index.lookup(query), ds.tau_measured[0])


def test_k_equals_n_is_global_mean():
    ds = random_dataset(7, seed=3)
    index = build_index(ds, k=7)
    np.testing.assert_allclose(index.lookup(np.zeros(12)), ds.tau_measured.mean(axis=0), atol=1e-15)


def test_single_row_index_returns_its_value():
    ds = random_dataset(1, seed=4)
    with pytest.warns(RuntimeWarning):
        index = build_index(ds, k=1)
    np.testing.assert_array_equal(index.lookup(np.ones(12)), ds.tau_measured[0])


def test_k_larger_than_n_names_both():
    with pytest.raises(ConfigError, match=r"k=5.*N=3"):
        build_index(random_dataset(3), k=5)


def test_lookup_accepts_samples_and_vectors():
    ds = random_dataset(50, seed=5)
    index = build_index(ds, k=3)
    s = ds[10]
    np.testing.assert_array_equal(lookup(index, s), lookup(index, ds.features[10]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_result_does_not_depend_on_row_order(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(60, seed=seed)
    perm = rng.permutation(60)
    shuffled = table_dataset(ds.q[perm], ds.qd[perm], ds.tau_measured[perm])
    query = rng.normal(size=12)
    a = build_index(ds, k=4)
    b = build_index(shuffled, k=4)
    # normalization statistics can differ in the last bit after reordering
    np.testing.assert_allclose(a.lookup(query), b.lookup(query), atol=1e-12)
    assert sorted(perm[b.neighbors(query)].tolist()) == sorted(a.neighbors(query).tolist())


def test_bias_uses_only_still_samples():
    q = np.zeros((4, 6))
    qd = np.zeros((4, 6))
    qd[1, 2] = 0.5
    qd[3, 0] = 2e-3
    tau = np.array([[1.0] * 6, [100.0] * 6, [3.0] * 6, [-50.0] * 6])
    model = fit_bias(table_dataset(q, qd, tau), velocity_eps=1e-3)
    np.testing.assert_array_equal(model.bias, np.full(6, 2.0))
    assert model.n_samples_used == 2
    tau_hat, ok = model.predict_series(table_dataset(q, qd, tau))
    np.testing.assert_array_equal(tau_hat, np.tile(model.bias, (4, 1)))


def test_bias_without_still_samples_explains_itself():
    ds = table_dataset(np.zeros((3, 6)), np.ones((3, 6)), np.zeros((3, 6)))
    with pytest.raises(FitError, match="velocity_eps"):
        fit_bias(ds)


def test_bias_model_validation():
    with pytest.raises(ValueError):
        BiasModel(np.zeros(6), 0, 1e-3)
    with pytest.raises(ValueError):
        fit_bias(random_dataset(3), velocity_eps=0.0)


def test_index_validation():
    with pytest.raises(ValueError):
        LookupIndex(np.zeros((3, 12)), np.zeros((2, 6)), np.zeros(12), np.ones(12))
    with pytest.raises(ConfigError):
        LookupIndex(np.zeros((3, 12)), np.zeros((3, 6)), np.zeros(12), np.ones(12), k=0)


def test_vector_search_series_matches_pointwise():
    ds = random_dataset(40, seed=6)
    index = build_index(ds, k=2)
    tau, ok = index.predict_series(ds)
    assert ok.all()
    for i in (0, 17, 39):
        np.testing.assert_array_equal(tau[i], index.lookup(ds.features[i]))
    assert isinstance(ds[0].state, JointState)
