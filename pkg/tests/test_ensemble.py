import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ensemblecast import seeding
from ensemblecast.ensemble import (
    EnsembleConfig,
    ensemble_mean,
    member_mean,
    run_ensemble,
    thread_cap,
)
from ensemblecast.griddata import Field, NormStats, VarStats
from ensemblecast.noise import FractalPerlin, Gaussian, Perlin
from ensemblecast.stepper import LinearStencil, Persistence, StepContext, forecast_inputs, rollout


@pytest.fixture(scope="module")
def model():
    return LinearStencil.init(7, std=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(1, Gaussian())
    with pytest.raises(ValueError):
        EnsembleConfig(3, Gaussian(), horizon=0)
    cfg = EnsembleConfig(3, Gaussian(), base_seed=4)
    assert cfg.member_seed(2) == seeding.mix(4, 2)


def test_zero_noise_collapses_to_deterministic(ctx32, series32, model):
    init, forcing = forecast_inputs(series32, 151, 15)
    det = rollout(model, ctx32, init, forcing, 15, 151)
    ens = run_ensemble(model, ctx32, init, forcing, EnsembleConfig(4, Gaussian(0.0, 0.0)), 151)
    for m in range(4):
        np.testing.assert_array_equal(ens.members[m], det.values)
    np.testing.assert_array_equal(ens.mean.values, det.values)
    assert ens.n_members == 4 and ens.horizon == 15 and ens.start_day == 151


def test_persistence_two_members_one_cell(one_cell_grid):
    stats = NormStats({k: VarStats(0.0, 1.0, 0.0, 1.0) for k in ("sst", "u10", "v10", "bathymetry")})
    ctx = StepContext(one_cell_grid, stats, np.array([[10.0]]))
    init = (Field(one_cell_grid, "sst", np.array([[289.0]])), Field(one_cell_grid, "sst", np.array([[290.0]])))
    cfg = EnsembleConfig(2, Gaussian(0.0, 0.2), base_seed=3, horizon=4)
    ens = run_ensemble(Persistence(), ctx, init, np.zeros((4, 2, 1, 1)), cfg, 0)
    perturbed = [290.0 + 0.2 * seeding.rng(cfg.member_seed(m)).standard_normal((2, 1, 1))[1, 0, 0] for m in (0, 1)]
    for m in (0, 1):
        assert np.all(ens.members[m][:, 0, 0] == perturbed[m])
    np.testing.assert_allclose(ens.mean.values[:, 0, 0], np.mean(perturbed), rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "noise", [Gaussian(0.0, 0.1), Perlin(res=(2, 4, 4)), FractalPerlin(res=(2, 2), octaves=2)], ids=["gauss", "perlin", "fractal"]
)
def test_thread_count_does_not_change_results(ctx32, series32, model, noise):
    init, forcing = forecast_inputs(series32, 160, 5)
    cfg = EnsembleConfig(5, noise, base_seed=11, horizon=5)
    a = run_ensemble(model, ctx32, init, forcing, cfg, 160, threads=1)
    b = run_ensemble(model, ctx32, init, forcing, cfg, 160, threads=3)
    np.testing.assert_array_equal(a.members, b.members)
    np.testing.assert_array_equal(a.mean.values, b.mean.values)


def test_member_independence(ctx32, series32, model):
    init, forcing = forecast_inputs(series32, 160, 3)
    small = run_ensemble(model, ctx32, init, forcing, EnsembleConfig(2, Gaussian(), base_seed=5, horizon=3), 160)
    big = run_ensemble(model, ctx32, init, forcing, EnsembleConfig(4, Gaussian(), base_seed=5, horizon=3), 160)
    np.testing.assert_array_equal(small.members, big.members[:2])
    assert not np.array_equal(big.members[2], big.members[3])


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("ENSEMBLECAST_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("ENSEMBLECAST_THREADS", "0")
    assert thread_cap() == 1
    monkeypatch.delenv("ENSEMBLECAST_THREADS")
    assert thread_cap() >= 1


def test_two_member_mean():
    assert member_mean(np.array([1.0, 3.0]).reshape(2, 1)) == pytest.approx([2.0])


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)))
def test_identical_members_average_to_themselves(row):
    stack = np.repeat(row[None], 4, axis=0)
    np.testing.assert_array_equal(member_mean(stack), row)


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)),
    st.randoms(use_true_random=False),
    st.floats(-100, 100),
)
def test_mean_permutation_and_shift(stack, rnd, c):
    perm = list(range(stack.shape[0]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(member_mean(stack[perm]), stack.mean(axis=0), rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(member_mean(stack + c), member_mean(stack) + c, rtol=1e-12, atol=1e-9)


def test_ensemble_mean_matches_stored_mean(ctx32, series32, model):
    init, forcing = forecast_inputs(series32, 155, 4)
    ens = run_ensemble(model, ctx32, init, forcing, EnsembleConfig(3, Gaussian(), horizon=4), 155)
    np.testing.assert_array_equal(ensemble_mean(ens).values, ens.mean.values)
    np.testing.assert_array_equal(ens.member(1).values, ens.members[1])
