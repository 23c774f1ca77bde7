import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcee.data import MrtDataset
from dcee.errors import DataError, EmptyArmError, SingularMatrixError, SpecError
from dcee.nuisance import (
    LearnerSpec,
    fit_outcome_model,
    fit_pooled_mean,
    make_folds,
    predict_mu,
)
from dcee.simulator import simulate_dataset


def exact_linear(n=50, T=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, T))
    # outcome equal to 2 + X_t at every row is only possible with T=1
    X[:, 1:] = X[:, :1]
    elig = np.ones((n, T))
    treat = rng.random((n, T)) < 0.5
    return MrtDataset(np.arange(n), elig, treat, np.full((n, T), 0.5), {"X": X}, 2 + X[:, 0])


def test_make_folds_sizes_and_determinism():
    assert make_folds(range(10), 5, 1).sizes() == [2] * 5
    assert sorted(make_folds(range(37), 5, 1).sizes(), reverse=True) == [8, 8, 7, 7, 7]
    a, b = make_folds(range(37), 5, 4), make_folds(range(37), 5, 4)
    assert a.fold_of == b.fold_of
    assert make_folds(range(37), 5, 5).fold_of != a.fold_of


@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**31))
def test_folds_partition_persons(n, K, seed):
    if K > n:
        with pytest.raises(SpecError):
            make_folds(range(n), K, seed)
        return
    f = make_folds([f"p{i}" for i in range(n)], K, seed)
    sizes = f.sizes()
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
    assert set(f.fold_of.values()) == set(range(K))


def test_make_folds_bounds():
    with pytest.raises(SpecError):
        make_folds(range(5), 1, 0)


def test_mean_only_constant_outcome():
    ds = simulate_dataset(n=30, seed=1).with_outcome(np.full(30, 3.0))
    m = fit_outcome_model(ds, spec=LearnerSpec("mean-only"))
    np.testing.assert_allclose(m.predict(ds, 1), 3.0)
    np.testing.assert_allclose(m.predict(ds, 0), 3.0)


def test_mean_only_arm_mean_ignores_covariates():
    n = 4
    ds = MrtDataset(
        np.arange(n),
        np.array([[1], [1], [1], [1]]),
        np.array([[1], [1], [0], [0]]),
        np.full((n, 1), 0.5),
        {"X": np.array([[0.0], [5.0], [1.0], [2.0]])},
        np.array([1.0, 3.0, 10.0, 10.0]),
    )
    m = fit_outcome_model(ds, spec=LearnerSpec("mean-only"))
    assert predict_mu(m, ds.row(0, 1), 1) == pytest.approx(2.0)
    assert predict_mu(m, ds.row(0, 1), 1) == predict_mu(m, ds.row(3, 1), 1)


def test_linear_exact_interpolation():
    ds = exact_linear()
    m = fit_outcome_model(ds, spec=LearnerSpec("linear"))
    for a in (0, 1):
        np.testing.assert_allclose(m.coef[a], [2.0, 1.0], atol=1e-8)


def test_ridge_spline_reproduces_noiseless_linear_at_training_rows():
    ds = exact_linear()
    m = fit_outcome_model(ds, spec=LearnerSpec("ridge-spline", spline_df=4, ridge_lambda=0.0))
    for i in (0, 7, 21):
        row = ds.row(i, 2)
        assert predict_mu(m, row, row.treat) == pytest.approx(ds.outcome[i], abs=1e-6)


def test_ridge_spline_beats_mean_only_out_of_sample():
    train, test = simulate_dataset(n=400, seed=1), simulate_dataset(n=400, seed=2)
    rows = test.elig == 1
    y = np.broadcast_to(test.outcome[:, None], rows.shape)

    def mse(spec):
        m = fit_outcome_model(train, spec=spec)
        pred = np.where(test.treat == 1, m.predict(test, 1), m.predict(test, 0))
        return np.mean((y - pred)[rows] ** 2)

    assert mse(LearnerSpec("ridge-spline", 4, 1e-4)) < mse(LearnerSpec("mean-only"))


def test_ridge_penalty_spares_intercept():
    ds = simulate_dataset(n=100, seed=3)
    m = fit_outcome_model(ds, spec=LearnerSpec("ridge-spline", ridge_lambda=1e12))
    rows = ds.elig == 1
    for a in (0, 1):
        sel = rows & (ds.treat == a)
        mean = np.broadcast_to(ds.outcome[:, None], rows.shape)[sel].mean()
        assert m.coef[a][0] == pytest.approx(mean, rel=1e-4)
        assert np.abs(m.coef[a][1:]).max() < 1e-6


def test_fit_uses_eligible_rows_only():
    ds = simulate_dataset(n=50, seed=4)
    m = fit_outcome_model(ds, spec=LearnerSpec("mean-only"))
    assert m.diagnostics["rows_used"][1] + m.diagnostics["rows_used"][0] == int(ds.elig.sum())


def test_learner_determinism():
    ds = simulate_dataset(n=80, seed=5)
    a = fit_outcome_model(ds, np.arange(40), LearnerSpec())
    b = fit_outcome_model(ds, np.arange(40), LearnerSpec())
    for arm in (0, 1):
        assert a.coef[arm].tobytes() == b.coef[arm].tobytes()


def test_include_subset_matters():
    ds = simulate_dataset(n=80, seed=5)
    a = fit_outcome_model(ds, np.arange(40), LearnerSpec("mean-only"))
    b = fit_outcome_model(ds, np.arange(40, 80), LearnerSpec("mean-only"))
    assert a.coef[1][0] != b.coef[1][0]


def test_empty_arm_and_singular():
    n, T = 5, 2
    ds = MrtDataset(np.arange(n), np.ones((n, T)), np.zeros((n, T)), np.full((n, T), 0.5), {"X": np.ones((n, T))}, np.zeros(n))
    with pytest.raises(EmptyArmError, match="a=1"):
        fit_outcome_model(ds, spec=LearnerSpec("mean-only"))
    treat = np.tile([[1, 0]], (n, 1))
    ds = MrtDataset(np.arange(n), np.ones((n, T)), treat, np.full((n, T), 0.5), {"X": np.ones((n, T))}, np.zeros(n))
    with pytest.raises(SingularMatrixError, match="condition"):
        fit_outcome_model(ds, spec=LearnerSpec("linear"))


def test_pooled_mean_fallback_fills_empty_arm():
    n, T = 4, 1
    ds = MrtDataset(np.arange(n), np.ones((n, T)), np.zeros((n, T)), np.full((n, T), 0.5), {}, np.arange(4.0))
    m = fit_pooled_mean(ds, np.arange(4))
    assert m.coef[1][0] == m.coef[0][0] == 1.5
    assert m.diagnostics["fallback"]


def test_predict_mu_missing_covariate():
    ds = simulate_dataset(n=50, seed=6)
    m = fit_outcome_model(ds, spec=LearnerSpec("linear"))
    row = ds.row(0, 1)
    assert predict_mu(m, row, 1) == pytest.approx(m.predict(ds, 1)[0, 0])
    bare = type(row)(row.person_id, row.t, row.elig, row.treat, row.prob, {"X": 1.0})
    with pytest.raises(DataError, match="'Z'"):
        predict_mu(m, bare, 1)


def test_constant_learner_and_spec_parsing():
    ds = simulate_dataset(n=10, seed=0)
    m = fit_outcome_model(ds, spec=LearnerSpec("constant", value=2.5))
    assert np.all(m.predict(ds, 0) == 2.5)
    assert LearnerSpec.from_dict(LearnerSpec("linear", covariates=["X"]).to_dict()) == LearnerSpec("linear", covariates=("X",))
    with pytest.raises(SpecError):
        LearnerSpec("forest")
    with pytest.raises(SpecError):
        LearnerSpec.from_dict({"kind": "linear", "depth": 3})
    with pytest.raises(SpecError):
        LearnerSpec(ridge_lambda=-1)
