import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import norm

from ensemblecast.ensemble import EnsembleConfig, run_ensemble
from ensemblecast.errors import GridMismatch, LeadMismatch, LeadOutOfRange, SingleMember
from ensemblecast.noise import Gaussian
from ensemblecast.stepper import LinearStencil, Trajectory, forecast_inputs, rollout
from ensemblecast.verify import (
    CSV_COLUMNS,
    MetricSeries,
    VerificationInput,
    bias_map,
    build_verification_input,
    crps_fair,
    evaluate,
    evaluate_deterministic,
    rmse_and_bias,
    rmse_increase_report,
    spread,
    spread_skill_ratio,
)


def one_cell(members, obs):
    return VerificationInput(np.asarray(members, float).reshape(1, -1, 1, 1), np.full((1, 1, 1), float(obs)))


def gaussian_crps(mu, sigma, obs):
    z = (obs - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / math.sqrt(math.pi))


# ------------------------------------------------------------------ crps


@pytest.mark.parametrize(
    "members, obs, skill, pair, crps",
    [([0, 0], 1, 1.0, 0.0, 1.0), ([0, 1], 0, 0.5, 0.5, 0.0), ([2, 2, 2], 2, 0.0, 0.0, 0.0)],
)
def test_crps_hand_cases(members, obs, skill, pair, crps):
    c, s, spr = crps_fair(one_cell(members, obs))
    assert (c[0], s[0], spr[0]) == pytest.approx((crps, skill, 2 * pair))


def test_crps_needs_two_members():
    with pytest.raises(SingleMember):
        crps_fair(one_cell([1.0], 0.0))
    with pytest.raises(SingleMember):
        spread(one_cell([1.0], 0.0))


def test_crps_pair_term_matches_brute_force(rng):
    f = rng.normal(size=(2, 7, 3, 5))
    o = rng.normal(size=(2, 3, 5))
    _, _, spr = crps_fair(VerificationInput(f, o))
    brute = np.abs(f[:, :, None] - f[:, None, :]).sum(axis=(1, 2)) / (7 * 6)
    np.testing.assert_allclose(spr, brute.mean(axis=(0, 2)), rtol=1e-12)


def test_crps_gaussian_oracle_small(rng):
    f = rng.normal(size=(1, 200, 1, 4000))
    c, _, _ = crps_fair(VerificationInput(f, np.full((1, 1, 4000), 0.5)))
    assert c[0] == pytest.approx(gaussian_crps(0.0, 1.0, 0.5), rel=0.02)


def test_crps_is_unbiased_in_m(rng):
    pool = rng.normal(size=(1, 400, 1, 50))
    obs = rng.normal(size=(1, 1, 50))
    full, _, _ = crps_fair(VerificationInput(pool, obs))
    pairs = []
    for _ in range(200):
        idx = rng.choice(400, size=2, replace=False)
        pairs.append(crps_fair(VerificationInput(pool[:, idx], obs))[0][0])
    err = np.std(pairs) / np.sqrt(len(pairs))
    assert abs(np.mean(pairs) - full[0]) < 4 * err


def test_crps_propriety(rng):
    obs = rng.normal(size=(1, 1, 5000))
    good = crps_fair(VerificationInput(rng.normal(size=(1, 20, 1, 5000)), obs))[0][0]
    shifted = crps_fair(VerificationInput(rng.normal(0.5, 1.0, size=(1, 20, 1, 5000)), obs))[0][0]
    wide = crps_fair(VerificationInput(rng.normal(0.0, 2.0, size=(1, 20, 1, 5000)), obs))[0][0]
    assert good < shifted and good < wide


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 6), st.integers(1, 3), st.integers(1, 4)),
               elements=st.floats(-50, 50)),
    st.data(),
)
def test_decomposition_identity(f, data):
    obs = data.draw(hnp.arrays(np.float64, (f.shape[0], f.shape[2], f.shape[3]), elements=st.floats(-50, 50)))
    c, s, spr = crps_fair(VerificationInput(f, obs))
    np.testing.assert_allclose(c, s - 0.5 * spr, rtol=1e-12, atol=1e-12)
    assert np.all(spr >= 0) and np.all(c >= -1e-9)


# ---------------------------------------------------------------- spread


@pytest.mark.parametrize("members, expected", [([0, 2], math.sqrt(2)), ([5, 5, 5], 0.0), ([0, 1], math.sqrt(0.5))])
def test_spread_hand_cases(members, expected):
    assert spread(one_cell(members, 0.0))[0] == pytest.approx(expected)


@given(st.floats(-1e3, 1e3))
def test_translation_invariance(c):
    gen = np.random.default_rng(1)
    f = gen.normal(size=(2, 4, 3, 6))
    o = gen.normal(size=(2, 3, 6))
    base = evaluate(VerificationInput(f, o))
    moved = evaluate(VerificationInput(f + c, o + c))
    for name in ("crps", "crps_skill", "crps_spread", "spread", "rmse", "bias", "rmse_debiased"):
        np.testing.assert_allclose(getattr(moved, name), getattr(base, name), atol=1e-9)
    members_only = evaluate(VerificationInput(f + c, o))
    np.testing.assert_allclose(members_only.bias, base.bias + c, atol=1e-9)
    np.testing.assert_allclose(members_only.rmse_debiased, base.rmse_debiased, atol=1e-9)
    np.testing.assert_allclose(members_only.spread, base.spread, atol=1e-9)


# ------------------------------------------------------------- rmse/bias


@pytest.mark.parametrize(
    "err, expected",
    [(np.zeros(4), (0.0, 0.0, 0.0)), (np.full(4, 0.5), (0.5, 0.5, 0.0)), (np.array([1.0, -1.0]), (1.0, 0.0, 1.0))],
)
def test_rmse_and_bias_cases(err, expected):
    obs = np.full((1, 1, err.size), 290.0)
    rmse, bias, deb = rmse_and_bias(obs + err, obs)
    assert (rmse[0], bias[0], deb[0]) == pytest.approx(expected, abs=1e-12)


def test_rmse_shape_mismatch():
    with pytest.raises(GridMismatch):
        rmse_and_bias(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)))


@settings(max_examples=60)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 8)),
                  elements=st.floats(-10, 10)), st.booleans())
def test_pythagorean_identity(err, weighted):
    w = np.linspace(0.5, 1.0, err.shape[2]) if weighted else None
    rmse, bias, deb = rmse_and_bias(err, np.zeros_like(err), w)
    np.testing.assert_allclose(rmse**2, bias**2 + deb**2, rtol=1e-12, atol=1e-12)


# ------------------------------------------------------------------- ssr


def test_ssr_zero_spread_is_zero():
    warnings = []
    r = spread_skill_ratio(one_cell([1.0, 1.0], 1.0), warnings=warnings)
    assert r[0] == 0.0 and warnings
    assert spread_skill_ratio(one_cell([1.0, 1.0], 3.0))[0] == 0.0


def test_ssr_infinite_marker():
    assert spread_skill_ratio(one_cell([0.0, 2.0], 1.0))[0] == math.inf


def test_ssr_reliable_ensemble(rng):
    f = rng.normal(size=(1, 100, 2, 10_000))
    o = rng.normal(size=(1, 2, 10_000))
    r = spread_skill_ratio(VerificationInput(f, o))
    assert np.all((r > 0.95) & (r < 1.05))
    corrected = spread_skill_ratio(VerificationInput(f, o), corrected=True)
    np.testing.assert_allclose(corrected, r * math.sqrt(101 / 100))


def test_weighted_flag_uses_cell_weights():
    f = np.array([0.0, 0.0, 2.0, 4.0]).reshape(1, 2, 1, 2)
    inp = VerificationInput(f, np.zeros((1, 1, 2)), weights=np.array([3.0, 1.0]))
    # per-cell variances 2 and 8, weights 3/4 and 1/4
    assert spread(inp)[0] == pytest.approx(math.sqrt(0.75 * 2 + 0.25 * 8))


# --------------------------------------------------------------- bias map


def test_bias_map(grid32, series32):
    truth = series32
    vals = truth.values("sst")[101:104]
    same = Trajectory(grid32, 100, vals)
    b = bias_map(same, truth, 1)
    sea = grid32.sea_mask
    assert np.all(b.values[sea] == 0.0) and np.all(np.isnan(b.values[~sea]))
    off = Trajectory(grid32, 100, vals + 1.0)
    np.testing.assert_allclose(bias_map(off, truth, 2).values[sea], 1.0, atol=1e-9)
    with pytest.raises(LeadOutOfRange):
        bias_map(same, truth, 4)
    with pytest.raises(LeadOutOfRange):
        bias_map(same, truth, 0)


def test_bias_map_single_cell(one_cell_grid):
    pred = Trajectory(one_cell_grid, 0, np.array([[[291.0]]]))
    truth = Trajectory(one_cell_grid, 0, np.array([[[290.0]]]))
    assert bias_map(pred, truth, 1).values[0, 0] == 1.0


def test_bias_map_is_linear_in_members(ctx32, series32):
    model = LinearStencil.init(0, std=0.05)
    init, forcing = forecast_inputs(series32, 151, 2)
    ens = run_ensemble(model, ctx32, init, forcing, EnsembleConfig(3, Gaussian(0.0, 0.1), horizon=2), 151)
    maps = [bias_map(ens.member(m), series32, 1).values for m in range(3)]
    sea = ctx32.grid.sea_mask
    np.testing.assert_allclose(bias_map(ens.mean, series32, 1).values[sea], np.mean(maps, axis=0)[sea], atol=1e-10)


# ------------------------------------------------------------ report/csv


def _series_with_rmse(leads, rmse):
    rmse = np.asarray(rmse, float)
    z = np.zeros_like(rmse)
    return MetricSeries(tuple(leads), z, z, z, z, rmse, z, rmse, z, 5, 1)


def test_report_reproduces_table_row():
    ref = _series_with_rmse((1, 5, 15), (0.109, 0.308, 0.586))
    cand = _series_with_rmse((1, 5, 15), (0.109 * 1.2896, 0.308 * 1.0536, 0.586 * 1.0043))
    rep = rmse_increase_report(ref, {"Gaussian sigma 0.1": cand}, (1, 5, 15))
    assert rep.rows[0][1] == (28.96, 5.36, 0.43)
    text = rep.format()
    assert "1 day" in text and "5 days" in text and "15 days" in text and "28.96%" in text


def test_report_identity_and_doubling():
    ref = _series_with_rmse((1, 2), (0.109, 0.2))
    rep = rmse_increase_report(ref, [ref, _series_with_rmse((1, 2), (0.218, 0.2))], (1, 2))
    assert rep.rows[0][1] == (0.0, 0.0)
    assert rep.rows[1][1] == (100.0, 0.0)


def test_report_lead_mismatch():
    ref = _series_with_rmse((1, 5), (0.1, 0.2))
    with pytest.raises(LeadMismatch):
        rmse_increase_report(ref, [_series_with_rmse((1, 2), (0.1, 0.2))], (1, 5))


def test_metrics_csv_round_trip(tmp_path, rng):
    m = evaluate(VerificationInput(rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 4, 5))))
    path = tmp_path / "m.csv"
    m.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 5
    back = MetricSeries.from_csv(path)
    for name in ("crps", "spread", "rmse", "spread_skill_ratio"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert (back.members, back.start_days, back.leads) == (3, 2, (1, 2, 3, 4))


def test_deterministic_metrics():
    pred = np.array([[[1.0, -1.0]]]) + 290.0
    m = evaluate_deterministic(pred, np.full((1, 1, 2), 290.0))
    assert m.members == 1 and m.crps[0] == m.crps_skill[0] == 1.0
    assert m.spread[0] == 0.0 and m.rmse[0] == 1.0 and m.bias[0] == 0.0


def test_build_input_from_forecasts(ctx32, series32):
    model = LinearStencil.init(0, std=0.05)
    ens = []
    for day in (151, 156):
        init, forcing = forecast_inputs(series32, day, 3)
        ens.append(run_ensemble(model, ctx32, init, forcing, EnsembleConfig(2, Gaussian(), horizon=3), day))
    inp = build_verification_input(ens, series32, leads=(1, 3))
    sea = ctx32.grid.sea_mask
    assert inp.forecasts.shape == (2, 2, 2, sea.sum())
    np.testing.assert_array_equal(inp.obs[1, 1], series32.values("sst")[159][sea])
    with pytest.raises(LeadOutOfRange):
        build_verification_input(ens, series32, leads=(4,))
    det = rollout(model, ctx32, *forecast_inputs(series32, 151, 3), 3, 151)
    assert det.horizon == 3
