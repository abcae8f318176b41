import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrdte import qr
from qrdte.exceptions import NonConvergence, NonConvergenceWarning, RankDeficient

from oracles import check_loss, generalized_inverse, lp_vertex_oracle


def random_instance(rng, n, p):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = X @ rng.normal(size=p) + rng.standard_t(3, size=n)
    return X, y


# ---------------------------------------------------------------------------
# single level fits


def test_median_of_intercept_only():
    fit = qr.fit_quantile(np.ones((5, 1)), [1, 2, 3, 4, 5], 0.5)
    assert fit.coefficients[0] == pytest.approx(3.0, abs=1e-9)


def test_upper_quantile_with_mass_at_zero():
    fit = qr.fit_quantile(np.ones((5, 1)), [0, 0, 0, 0, 10], 0.8)
    assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_matches_vertex_enumeration_n12(seed):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, 12, 2)
    for tau in (0.1, 0.3, 0.5, 0.77, 0.9):
        best, beta = lp_vertex_oracle(X, y, tau)
        fit = qr.fit_quantile(X, y, tau)
        assert fit.objective == pytest.approx(best, abs=1e-9)
        # the optimum is unique for continuous data in general position
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-6)


def test_highs_backend_agrees():
    rng = np.random.default_rng(3)
    X, y = random_instance(rng, 60, 3)
    for tau in (0.2, 0.5, 0.8):
        a = qr.fit_quantile(X, y, tau)
        b = qr.fit_quantile(X, y, tau, method="highs")
        assert a.objective == pytest.approx(b.objective, abs=1e-10)


def test_objective_field_is_the_loss_at_the_coefficients():
    rng = np.random.default_rng(4)
    X, y = random_instance(rng, 40, 3)
    fit = qr.fit_quantile(X, y, 0.35)
    assert fit.objective == pytest.approx(check_loss(y - X @ fit.coefficients, 0.35).mean(), abs=1e-14)
    assert fit.objective <= check_loss(y, 0.35).mean()


def test_subgradient_certificate():
    rng = np.random.default_rng(5)
    X, y = random_instance(rng, 300, 4)
    for tau in (0.05, 0.5, 0.95):
        fit = qr.fit_quantile(X, y, tau)
        assert qr.subgradient_gap(X, y, fit.coefficients, tau) <= 1e-8


def test_coordinate_perturbations_do_not_improve():
    rng = np.random.default_rng(6)
    X, y = random_instance(rng, 150, 3)
    fit = qr.fit_quantile(X, y, 0.4)
    eps = 1e-4 * np.maximum(np.abs(fit.coefficients), 1.0)
    for j in range(3):
        for sign in (-1, 1):
            b = fit.coefficients.copy()
            b[j] += sign * eps[j]
            assert qr.mean_pinball(X, y, b, 0.4) >= fit.objective - 1e-9


def test_rank_deficient_design():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RankDeficient):
        qr.fit_quantile(X, np.arange(10.0), 0.5)


def test_tau_out_of_range():
    with pytest.raises(ValueError):
        qr.fit_quantile(np.ones((3, 1)), [1, 2, 3], 1.0)


def test_iteration_cap_flags_or_raises():
    rng = np.random.default_rng(7)
    X, y = random_instance(rng, 200, 3)
    with pytest.warns(NonConvergenceWarning):
        fit = qr.fit_quantile(X, y, 0.5, max_iter=1)
    assert not fit.converged
    with pytest.raises(NonConvergence) as info:
        qr.fit_quantile(X, y, 0.5, max_iter=1, strict=True)
    assert info.value.fit is not None


def test_design_matrix_invariants():
    with pytest.raises(ValueError):
        qr.DesignMatrix(np.array([[2.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        qr.DesignMatrix(np.column_stack([np.ones(3), np.zeros(3)]))
    with pytest.raises(ValueError):
        qr.DesignMatrix(np.ones((1, 2)))
    d = qr.DesignMatrix.from_covariates(np.arange(4.0), ["age"])
    assert d.column_names == ("const", "age")
    assert np.asarray(d).shape == (4, 2)


# ---------------------------------------------------------------------------
# processes


def test_constant_outcome():
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    proc = qr.fit_process(X, np.full(30, 7.5), [0.1, 0.5, 0.9])
    np.testing.assert_allclose(proc.coefficients, [[7.5, 0, 0]] * 3, atol=1e-8)


def test_location_shift_moves_only_the_intercept():
    rng = np.random.default_rng(9)
    X, y = random_instance(rng, 80, 3)
    grid = qr.default_grid(0.1)
    a = qr.fit_process(X, y, grid)
    b = qr.fit_process(X, y + 12.5, grid)
    np.testing.assert_allclose(b.coefficients[:, 0], a.coefficients[:, 0] + 12.5, atol=1e-6)
    np.testing.assert_allclose(b.coefficients[:, 1:], a.coefficients[:, 1:], atol=1e-6)


def test_recovers_linear_quantile_model():
    # y = 1 + 2x + (1 + x) e with e ~ N(0,1) and x in [0, 1]
    from scipy.stats import norm

    rng = np.random.default_rng(10)
    n = 4000
    x = rng.random(n)
    y = 1 + 2 * x + (1 + x) * rng.standard_normal(n)
    grid = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
    proc = qr.fit_process(np.column_stack([np.ones(n), x]), y, grid)
    truth = np.column_stack([1 + norm.ppf(grid), 2 + norm.ppf(grid)])
    np.testing.assert_allclose(proc.coefficients, truth, atol=0.25)


def test_process_matches_single_fits():
    rng = np.random.default_rng(11)
    X, y = random_instance(rng, 50, 2)
    grid = np.array([0.2, 0.5, 0.8])
    proc = qr.fit_process(X, y, grid)
    for k, t in enumerate(grid):
        assert proc.objectives[k] == pytest.approx(qr.fit_quantile(X, y, t).objective, abs=1e-12)


def test_frequency_weights_equal_duplicated_rows():
    rng = np.random.default_rng(12)
    X, y = random_instance(rng, 40, 3)
    idx = rng.integers(0, 40, 40)
    uniq, mult = np.unique(idx, return_counts=True)
    grid = np.array([0.25, 0.5, 0.75])
    a = qr.fit_process(X[idx], y[idx], grid)
    b = qr.fit_process(X[uniq], y[uniq], grid, weights=mult)
    np.testing.assert_allclose(a.objectives, b.objectives, atol=1e-12)
    with pytest.raises(ValueError):
        qr.fit_process(X, y, grid, weights=np.zeros(40))


def test_equivariance_affine():
    rng = np.random.default_rng(13)
    X, y = random_instance(rng, 70, 3)
    grid = np.array([0.1, 0.5, 0.9])
    a, b = 3.0, -4.0
    p = qr.fit_process(X, y, grid)
    q = qr.fit_process(X, a * y + b, grid)
    expected = a * p.coefficients
    expected[:, 0] += b
    np.testing.assert_allclose(q.coefficients, expected, atol=1e-6)


# ---------------------------------------------------------------------------
# rearrangement, prediction, inversion


def test_rearrangement_sorts_one_anchor():
    proc = qr.QuantileProcess(np.array([0.25, 0.5, 0.75]), np.array([[5.0], [3.0], [4.0]]))
    r = qr.rearrange(proc)
    np.testing.assert_array_equal(r.curves(np.ones((1, 1)))[0], [3, 4, 5])
    assert r.rearranged and not proc.rearranged


def test_rearrangement_idempotent_on_monotone_process():
    proc = qr.QuantileProcess(np.array([0.2, 0.6]), np.array([[1.0, 0.5], [2.0, 0.5]]))
    x = np.array([[1.0, -1.0], [1.0, 3.0]])
    np.testing.assert_array_equal(qr.rearrange(proc).curves(x), proc.raw_curves(x))


def test_rearrangement_never_raises_pinball_loss():
    rng = np.random.default_rng(14)
    X, y = random_instance(rng, 25, 3)
    grid = qr.default_grid(0.05)
    proc = qr.fit_process(X, y, grid)
    raw, fixed = proc.raw_curves(X), qr.rearrange(proc).curves(X)
    loss_raw = check_loss(y[:, None] - raw, grid[None, :]).sum()
    loss_fixed = check_loss(y[:, None] - fixed, grid[None, :]).sum()
    assert loss_fixed <= loss_raw + 1e-9


def test_predict_requires_rearranged():
    proc = qr.QuantileProcess(np.array([0.5]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        qr.predict_quantile(proc, [1.0], 0.5)


def test_prediction_on_grid_and_midpoint():
    proc = qr.rearrange(qr.QuantileProcess(np.array([0.2, 0.4]), np.array([[1.0, 1.0], [3.0, 2.0]])))
    x = np.array([1.0, 2.0])
    assert qr.predict_quantile(proc, x, 0.2) == 3.0
    assert qr.predict_quantile(proc, x, 0.4) == 7.0
    assert qr.predict_quantile(proc, x, 0.3) == pytest.approx(5.0)
    # outside the grid the level is clamped
    assert qr.predict_quantile(proc, x, 0.9) == 7.0


def test_conditional_cdf_clamps_tails():
    proc = qr.rearrange(qr.QuantileProcess(np.array([0.01, 0.5, 0.99]), np.array([[0.0], [1.0], [2.0]])))
    assert qr.conditional_cdf(proc, [1.0], -5.0) == 0.01
    assert qr.conditional_cdf(proc, [1.0], 5.0) == 0.99
    assert qr.conditional_cdf(proc, [1.0], 0.5) == pytest.approx(0.255)


def test_conditional_distribution_uses_zero_one_tails():
    proc = qr.rearrange(qr.QuantileProcess(np.array([0.25, 0.75]), np.array([[0.0], [1.0]])))
    F = qr.conditional_distribution(proc, np.ones((1, 1)), [-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(F[0], [0.0, 0.25, 0.5, 1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["clamp", "cdf"]))
def test_inversion_matches_pointwise_oracle(seed, tails):
    rng = np.random.default_rng(seed)
    grid = qr.default_grid(0.1)
    # rounding produces ties both in the curves and between curves and queries
    curves = np.sort(np.round(rng.normal(size=(4, grid.size)), 1), axis=1)
    Y = np.round(rng.normal(scale=1.5, size=(4, 25)), 1)
    lo, hi = (grid[0], grid[-1]) if tails == "clamp" else (0.0, 1.0)
    got = qr.invert_curves(curves, grid, Y, tails)
    want = np.array([[generalized_inverse(curves[i], grid, v, lo, hi) for v in Y[i]] for i in range(4)])
    # values are nudged by the tie tolerance before inversion
    np.testing.assert_allclose(got, want, atol=1e-8)
    # the one-value-per-row path agrees with the matrix path
    np.testing.assert_allclose(qr.invert_curves(curves, grid, Y[:, 0], tails), got[:, 0], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_rearranged_fits_are_monotone_at_sample_points(seed):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, 15, 3)
    proc = qr.rearrange(qr.fit_process(X, y, qr.default_grid(0.05)))
    assert np.all(np.diff(proc.curves(X), axis=1) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 0.99))
def test_quantile_rank_quantile_round_trip(seed, tau):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, 40, 2)
    grid = qr.default_grid(0.05)
    proc = qr.rearrange(qr.fit_process(X, y, grid))
    for x in X[:5]:
        q = qr.predict_quantile(proc, x, tau)
        t = qr.conditional_cdf(proc, x, q)
        # flat stretches send the rank to the top of the tied run
        assert t >= np.clip(tau, grid[0], grid[-1]) - 1e-9
        assert qr.predict_quantile(proc, x, t) == pytest.approx(q, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0))
def test_interpolated_prediction_between_neighbors(seed, tau):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, 30, 2)
    grid = qr.default_grid(0.1)
    proc = qr.rearrange(qr.fit_process(X, y, grid))
    x = X[0]
    q = qr.predict_quantile(proc, x, tau)
    curve = proc.curves(x[None, :])[0]
    k = np.clip(np.searchsorted(grid, tau), 1, grid.size - 1)
    lo, hi = curve[k - 1], curve[k]
    if tau <= grid[0]:
        lo = hi = curve[0]
    if tau >= grid[-1]:
        lo = hi = curve[-1]
    assert lo - 1e-12 <= q <= hi + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 10.0), st.floats(-50, 50))
def test_affine_equivariance_property(seed, a, b):
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, 20, 2)
    tau = 0.3
    f = qr.fit_quantile(X, y, tau)
    g = qr.fit_quantile(X, a * y + b, tau)
    # compare objectives: coefficients need not be unique in degenerate draws
    assert g.objective == pytest.approx(a * f.objective, rel=1e-7, abs=1e-9)


def test_conditional_cdf_converges_to_truth():
    from scipy.stats import norm

    errs = []
    for n in (300, 3000):
        rng = np.random.default_rng(n)
        x = rng.random(n)
        y = x + rng.standard_normal(n)
        proc = qr.rearrange(qr.fit_process(np.column_stack([np.ones(n), x]), y, qr.default_grid(0.02)))
        pts = np.linspace(-1.5, 2.5, 21)
        X = np.array([[1.0, 0.5]])
        F = qr.conditional_distribution(proc, X, pts)[0]
        errs.append(np.sqrt(np.mean((F - norm.cdf(pts - 0.5)) ** 2)))
    assert errs[1] < errs[0]


# ---------------------------------------------------------------------------
# least squares


def test_ols_exact_and_mean():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    np.testing.assert_allclose(qr.fit_ols(X, 2 + 3 * np.arange(6.0)), [2, 3], atol=1e-12)
    assert qr.fit_ols(np.ones((4, 1)), [1.0, 2.0, 3.0, 6.0])[0] == pytest.approx(3.0)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(15)
    X, y = random_instance(rng, 50, 4)
    beta = qr.fit_ols(X, y)
    np.testing.assert_allclose(beta, np.linalg.solve(X.T @ X, X.T @ y), atol=1e-10)
    assert np.abs(X.T @ (y - X @ beta)).max() <= 1e-8


def test_ols_rank_deficient():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(RankDeficient):
        qr.fit_ols(X, np.arange(5.0))


def test_no_warning_on_regular_fit():
    rng = np.random.default_rng(16)
    X, y = random_instance(rng, 100, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qr.fit_process(X, y)


def test_single_level_matrix_inversion():
    curves = np.array([[1.0], [2.0]])
    Y = np.array([[0.0, 1.5, 3.0], [0.0, 1.5, 3.0]])
    np.testing.assert_array_equal(qr.invert_curves(curves, np.array([0.5]), Y, "cdf"),
                                  [[0, 1, 1], [0, 0, 1]])
    np.testing.assert_array_equal(qr.invert_curves(curves, np.array([0.5]), Y), 0.5)
