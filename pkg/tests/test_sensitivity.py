import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ivmediate.errors import ConfigError, DimensionMismatch
from ivmediate.estimators import fit_two_stage
from ivmediate.dataset import Dataset
from ivmediate.sensitivity import TauPoint, fit_at_tau, grid_points, run_grid, transform_outcome

from conftest import make_dataset

CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]

# Published sensitivity table (tau_r, tau_m, direct, mediator), row order as printed.
PUBLISHED_GRID = [
    ((0, 0), (0, 0), -0.94, -2.87), ((0, 1), (0, 0), -2.75, 1.73),
    ((1, 0), (0, 0), -1.58, -1.24), ((1, 1), (0, 0), -3.39, 3.36),
    ((0, 0), (0, 1), -1.03, -1.62), ((0, 1), (0, 1), -2.84, 2.98),
    ((1, 0), (0, 1), -1.67, 0.02), ((1, 1), (0, 1), -3.48, 4.61),
    ((0, 0), (1, 0), -1.09, -2.16), ((0, 1), (1, 0), -2.90, 2.44),
    ((1, 0), (1, 0), -1.73, -0.52), ((1, 1), (1, 0), -3.54, 4.07),
    ((0, 0), (1, 1), -1.18, -0.91), ((0, 1), (1, 1), -2.99, 3.69),
    ((1, 0), (1, 1), -1.82, 0.73), ((1, 1), (1, 1), -3.63, 5.33),
]


def test_zero_tau_is_identity(small):
    assert_array_equal(transform_outcome(small, TauPoint((0, 0), (0, 0))), small.y)


def test_single_subject_arithmetic():
    # R=1, M=0, X - E[X] = (2, -1), tau_r = (1, 1) -> Y - 1
    data = Dataset(y=[5.0, 0.0], r=[1, 0], m=[0, 0], x=[[2.0, -1.0], [0.0, 0.0]])
    out = transform_outcome(data, TauPoint((1, 1), (0, 0), x_reference=(0.0, 0.0)))
    assert out[0] == pytest.approx(4.0)


def test_hand_computed_table():
    y = [10.0, 12.0, 9.0, 11.0, 8.0]
    r = [1, 0, 1, 0, 1]
    m = [1.0, 0.0, 0.0, 1.0, 1.0]
    x = [[1.0, 2.0], [0.0, 1.0], [2.0, 0.0], [1.0, 1.0], [1.0, 1.0]]
    data = Dataset(y=y, r=r, m=m, x=x)
    # column means: (1.0, 1.0)
    tau = TauPoint((0.5, -1.0), (2.0, 1.0))
    expected = []
    for i in range(5):
        d = [x[i][0] - 1.0, x[i][1] - 1.0]
        adj_r = 0.5 * d[0] - 1.0 * d[1]
        adj_m = 2.0 * d[0] + 1.0 * d[1]
        expected.append(y[i] - r[i] * adj_r - m[i] * adj_m)
    # subject 1: d=(0,1): 10 - (-1) - 1 = 10 ; subject 3: d=(1,-1): 9 - 1.5 - 0 = 7.5
    assert expected[0] == pytest.approx(10.0) and expected[2] == pytest.approx(7.5)
    assert_allclose(transform_outcome(data, tau), expected, rtol=1e-14)


def test_tau_length_checked(small):
    with pytest.raises(DimensionMismatch):
        transform_outcome(small, TauPoint((1,), (0,)))
    with pytest.raises(DimensionMismatch):
        transform_outcome(small, TauPoint((1, 0), (0, 0), x_reference=(0.0,)))
    with pytest.raises(ConfigError):
        TauPoint((np.nan, 0), (0, 0))


def test_fit_at_tau_compositional_identity(small):
    tau = TauPoint((0.3, -0.2), (1.0, 0.5))
    direct = fit_at_tau(small, tau)
    via_copy = fit_two_stage(small.with_outcome(transform_outcome(small, tau)), warn_weak=False)
    assert_array_equal(direct.params, via_copy.params)
    assert_array_equal(direct.covariance, via_copy.covariance)


def test_fit_at_tau_sigma_uses_adjusted_outcome_and_observed_m(small):
    tau = TauPoint((0.3, -0.2), (1.0, 0.5))
    fit = fit_at_tau(small, tau)
    y_adj = transform_outcome(small, tau)
    resid = (y_adj - fit.alpha - small.x @ fit.beta - fit.theta_r * small.r
             - fit.theta_m * small.m)
    assert fit.sigma2_hat == pytest.approx(resid @ resid / small.n, rel=1e-12)


def test_zero_grid_point_matches_base(small):
    grid = run_grid(small, [(0, 0)], [(0, 0)])
    base = fit_two_stage(small, warn_weak=False)
    assert grid.base_index == 0
    assert np.max(np.abs(grid.fits[0].params - base.params)) <= 1e-12
    assert np.max(np.abs(grid.fits[0].covariance - base.covariance)) <= 1e-12


def test_grid_order_matches_published_layout(small):
    pts = grid_points(CORNERS, CORNERS)
    assert [(p.tau_r, p.tau_m) for p in pts] == [
        (tuple(map(float, r)), tuple(map(float, m))) for r, m, _, _ in PUBLISHED_GRID]
    other = grid_points(CORNERS, CORNERS, order="tau_r_outer")
    assert other[1].tau_m == (0.0, 1.0) and other[1].tau_r == (0.0, 0.0)
    with pytest.raises(ConfigError):
        grid_points([], CORNERS)


def test_grid_cells_match_independent_fits():
    data = make_dataset(n=120, seed=31)
    grid = run_grid(data, [(0, 0), (1, 0)], [(0, 0), (0, 1)])
    assert len(grid.points) == len(grid.fits) == 4
    for point, fit in zip(grid.points, grid.fits):
        solo = fit_at_tau(data, TauPoint(point.tau_r, point.tau_m))
        assert_allclose(fit.params, solo.params, rtol=0, atol=1e-12)


def test_first_stage_invariant_across_grid(small):
    grid = run_grid(small, CORNERS, CORNERS)
    ref = grid.fits[0]
    for fit in grid.fits[1:]:
        assert_array_equal(fit.first_stage_coefficients, ref.first_stage_coefficients)
        assert_array_equal(fit.fitted_mediator, ref.fitted_mediator)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 5000),
       taus=st.lists(st.floats(-3, 3), min_size=8, max_size=8))
def test_estimates_affine_in_tau(seed, taus):
    data = make_dataset(n=80, seed=seed)
    a = TauPoint(taus[0:2], taus[2:4])
    b = TauPoint(taus[4:6], taus[6:8])
    mid = TauPoint(np.add(a.tau_r, b.tau_r) / 2, np.add(a.tau_m, b.tau_m) / 2)
    fa, fb, fm = (fit_at_tau(data, t) for t in (a, b, mid))
    assert fm.theta_r == pytest.approx((fa.theta_r + fb.theta_r) / 2, abs=1e-10)
    assert fm.theta_m == pytest.approx((fa.theta_m + fb.theta_m) / 2, abs=1e-10)


def test_published_grid_is_affine_in_tau():
    # The printed table must be consistent with an estimator that is affine
    # in (tau_r, tau_m); rounding to 2 decimals allows 5 * 0.005 drift.
    rows = {(r, m): (d, e) for r, m, d, e in PUBLISHED_GRID}
    base = rows[((0, 0), (0, 0))]
    unit = {
        "r1": rows[((1, 0), (0, 0))], "r2": rows[((0, 1), (0, 0))],
        "m1": rows[((0, 0), (1, 0))], "m2": rows[((0, 0), (0, 1))],
    }
    for (tr, tm), (d, e) in rows.items():
        weights = {"r1": tr[0], "r2": tr[1], "m1": tm[0], "m2": tm[1]}
        pred_d = base[0] + sum(w * (unit[k][0] - base[0]) for k, w in weights.items())
        pred_e = base[1] + sum(w * (unit[k][1] - base[1]) for k, w in weights.items())
        assert d == pytest.approx(pred_d, abs=0.03)
        assert e == pytest.approx(pred_e, abs=0.03)
    directs = [d for d, _ in rows.values()]
    assert (min(directs), max(directs)) == (-3.63, -0.94)


def test_grid_records_failures_without_aborting():
    data = make_dataset(n=60, p=2, seed=3)
    grid = run_grid(data, [(0, 0), (1, 0, 0)], [(0, 0)])
    assert grid.fits[0] is not None and grid.fits[1] is None
    assert "DimensionMismatch" in grid.errors[1]
    assert grid.summary()["n_failed"] == 1
    assert "failed" in grid.format_table()


def test_grid_exports(small):
    grid = run_grid(small, CORNERS, CORNERS)
    csv_text = grid.to_csv()
    assert csv_text.count("\n") == 17
    table = grid.format_table()
    assert table.splitlines()[2].startswith("(0,0) | (0,0)")
    s = grid.summary()
    assert s["theta_r_min"] == min(f.theta_r for f in grid.fits)
    assert s["theta_m_max"] == max(f.theta_m for f in grid.fits)
    sandwich = run_grid(small, [(0, 0)], [(0, 0)], covariance="sandwich")
    assert sandwich.fits[0].covariance_type == "sandwich"


def test_parallel_grid_matches_serial(small):
    a = run_grid(small, CORNERS, CORNERS)
    b = run_grid(small, CORNERS, CORNERS, workers=3)
    for fa, fb in zip(a.fits, b.fits):
        assert_array_equal(fa.params, fb.params)
