import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from delaycast.em import JointModel, OccurrenceModel, OccurrenceSpec, fit_em
from delaycast.inference import (
    InferenceError,
    InformationPair,
    aiccd,
    cooks_distance,
    cooks_distances,
    fd_steps,
    nowcast,
    nowcast_from_means,
    numerical_hessian,
    observed_information,
    poisson_interval,
    poisson_quantile,
    prediction_intervals,
    top_cooks,
)
from delaycast.reporting import (
    IntraWeekMatrix,
    MatrixReportingSpec,
    StationaryDelayModel,
    StationaryReportingSpec,
    WeekModelSpec,
    WeeklyReportingModel,
)
from delaycast.simulate import (
    DEFAULT_P,
    SimulationConfig,
    default_calendar,
    default_occurrence,
    default_week_model,
    simulate_portfolio,
)
from delaycast.triangle import RunoffTriangle

from conftest import random_triangle


@pytest.fixture(scope="module")
def matrix_info(matrix_fit):
    tri, em = matrix_fit
    return observed_information(em.model, tri)


# ---------------------------------------------------------------- numerical Hessians


def test_poisson_intercept_information():
    y = np.array([2.0, 4.0])
    beta = math.log(3.0)  # the MLE
    f = lambda b: float(np.sum(y * b[0] - np.exp(b[0])))
    g = lambda b: np.array([np.sum(y - np.exp(b[0]))])
    assert -numerical_hessian(f, [beta])[0, 0] == pytest.approx(6.0, abs=1e-4)
    assert -numerical_hessian(None, [beta], grad=g)[0, 0] == pytest.approx(6.0, abs=1e-4)


def test_quadratic_hessian_is_exact():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    A = A + A.T
    b = rng.normal(size=4)
    f = lambda x: 0.5 * x @ A @ x + b @ x
    H = numerical_hessian(f, rng.normal(size=4))
    np.testing.assert_allclose(H, A, atol=1e-8 * 1e3)  # second differences lose ~1/h^2 of rounding
    H = numerical_hessian(None, rng.normal(size=4), grad=lambda x: A @ x + b)
    np.testing.assert_allclose(H, A, atol=1e-8)


def test_step_rule():
    np.testing.assert_allclose(fd_steps(np.array([0.0, 0.5, -3.0, 1e3])), [1e-5, 1e-5, 3e-5, 1e-2], rtol=1e-15)


def test_non_finite_entries_name_the_coordinate():
    g = lambda x: np.array([x[0], np.inf if x[1] > 1 else x[1]])
    with pytest.raises(InferenceError, match="coordinate 1"):
        numerical_hessian(None, [0.0, 1.0], grad=g)


def test_information_pair_properties(matrix_fit, matrix_info):
    tri, em = matrix_fit
    for M in (matrix_info.I_c, matrix_info.I_o):
        np.testing.assert_array_equal(M, M.T)
    assert np.linalg.eigvalsh(matrix_info.I_o).min() > 0
    assert np.all(matrix_info.standard_errors() > 0)
    assert matrix_info.names == em.model.param_names


def test_singular_information_is_reported():
    info = InformationPair(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(InferenceError, match="simplify"):
        info.covariance()


# ---------------------------------------------------------------- AICcd


def test_scalar_penalty(matrix_fit):
    tri, em = matrix_fit
    res = aiccd(em.model, tri, info=InformationPair(np.array([[2.0]]), np.array([[1.0]])))
    assert res.penalty == pytest.approx(4.0)
    assert res.value == pytest.approx(-2 * res.q + 4.0)


def test_penalty_at_least_parameter_count(matrix_fit, matrix_info):
    # missing information only adds to the complete-data information
    tri, em = matrix_fit
    res = aiccd(em.model, tri, info=matrix_info)
    assert res.dim == len(em.model.params())
    assert res.penalty >= 2 * res.dim * (1 - 1e-3)


def test_singular_io_fails_aiccd(matrix_fit):
    tri, em = matrix_fit
    with pytest.raises(InferenceError, match="simplify"):
        aiccd(em.model, tri, info=InformationPair(np.eye(1), np.zeros((1, 1))))


def _simple_truth(tau, seed):
    cal = default_calendar(n_days=tau)
    occ = default_occurrence(40.0, covariates=("dow",))
    week = default_week_model(covariates=("dow",))
    model = JointModel(occ, WeeklyReportingModel(week, IntraWeekMatrix(DEFAULT_P)), tau)
    return simulate_portfolio(SimulationConfig(tau, model, cal, seed=seed)).triangle()


def test_true_spec_usually_has_lower_aiccd():
    rep = MatrixReportingSpec(WeekModelSpec(covariates=("dow",)))
    wins = []
    for seed in range(20):
        tri = _simple_truth(91, seed)
        true = fit_em(tri, OccurrenceSpec(("dow",)), rep)
        over = fit_em(tri, OccurrenceSpec(("dow", "dom")), rep)
        wins.append(aiccd(true.model, tri).value < aiccd(over.model, tri).value)
    assert np.mean(wins) >= 0.8


# ---------------------------------------------------------------- Cook's distances


def test_distances_nonnegative_and_only_on_observed_cells(matrix_fit, matrix_info):
    tri, em = matrix_fit
    gd = cooks_distances(em.model, tri, matrix_info)
    obs = tri.observed_mask
    assert np.all(gd[obs] >= 0)
    assert np.all(np.isnan(gd[~obs]))


def test_zero_cell_with_negligible_mean(matrix_fit, matrix_info):
    tri, em = matrix_fit
    gd = cooks_distances(em.model, tri, matrix_info)
    mean = em.model.intensity(tri)[:, None] * em.model.probs(tri)
    cand = np.where(tri.observed_mask & (tri.counts == 0), mean, np.inf)
    i, d = np.unravel_index(np.argmin(cand), cand.shape)
    assert mean[i, d] < 1e-6
    assert gd[i, d] < 1e-8


def test_single_cell_matches_vectorised(matrix_fit, matrix_info):
    tri, em = matrix_fit
    gd = cooks_distances(em.model, tri, matrix_info)
    for t, d in [(1, 0), (5, 3), (150, 20), (200, 0)]:
        assert cooks_distance(em.model, tri, t, d, matrix_info) == pytest.approx(gd[t - 1, d], rel=1e-8)
    with pytest.raises(ValueError):
        cooks_distance(em.model, tri, 200, 1, matrix_info)


def test_corrupted_cell_stands_out(matrix_fit):
    tri, em = matrix_fit
    counts = tri.counts.copy()
    d = 1
    t = 100 + int(np.argmax(counts[99:150, d] > 0))
    counts[t - 1, d] *= 10
    bad = RunoffTriangle(counts, tri.exposure, tri.calendar)
    refit = fit_em(bad, OccurrenceSpec(), MatrixReportingSpec())
    top = top_cooks(cooks_distances(refit.model, bad), k=3)
    assert (top[0][0], top[0][1]) == (t, d)
    assert top[0][2] >= top[1][2] >= top[2][2]


# ---------------------------------------------------------------- nowcasts


def test_fully_reported_model_nowcasts_zero():
    tau = 6
    p = np.zeros(tau)
    p[0] = 1.0
    model = JointModel(OccurrenceModel(None, np.log(np.full(tau, 4.0)), saturated=True), StationaryDelayModel(p), tau)
    tri = RunoffTriangle(np.zeros((tau, tau), int))
    res = nowcast(model, tri)
    assert res.total == 0
    assert np.all(res.cell_means == 0)


def test_single_day_total():
    tri = RunoffTriangle([[7]])
    res = nowcast_from_means(np.array([10.0]), np.array([[0.7, 0.3]]), tri)
    assert res.total == pytest.approx(3.0, rel=1e-15)
    np.testing.assert_allclose(res.by_reporting, [3.0, 0.0])
    assert res.beyond_grid == 0


def test_groupings_reconcile(matrix_fit):
    tri, em = matrix_fit
    res = nowcast(em.model, tri)
    daily = res.groups("reporting_date")[1].sum()
    for grouping in ("week", "month"):
        assert res.groups(grouping)[1].sum() == pytest.approx(daily, abs=1e-10)
    assert res.groups("cell")[1].sum() == pytest.approx(daily, abs=1e-10)
    assert res.total == pytest.approx(daily + res.beyond_grid, abs=1e-9)
    assert np.all(res.by_occurrence >= 0) and np.all(res.cell_means >= 0)
    with pytest.raises(ValueError):
        res.groups("quarter")


def test_total_is_poisson_sum_of_cells():
    tri = random_triangle(np.random.default_rng(4), 40, 0, 6)
    em = fit_em(tri, OccurrenceSpec(saturated=True), StationaryReportingSpec())
    res = nowcast(em.model, tri)
    means = res.cell_means[res.cell_means > 0]
    mu = res.total
    assert means.sum() == pytest.approx(mu, rel=1e-12)
    rng = np.random.default_rng(5)
    draws = rng.poisson(means, size=(10_000, len(means))).sum(axis=1)
    # randomised probability integral transform makes the discrete law continuous
    u = rng.random(len(draws))
    pit = stats.poisson.cdf(draws - 1, mu) + u * stats.poisson.pmf(draws, mu)
    assert stats.kstest(pit, "uniform").pvalue > 0.01


# ---------------------------------------------------------------- intervals


def test_zero_mean_interval():
    assert poisson_interval(0.0) == (0, 0)
    lo, hi = prediction_intervals([0.0, 0.0], simultaneous=True)
    assert lo.tolist() == [0, 0] and hi.tolist() == [0, 0]


def test_interval_for_large_mean():
    mean = 2055.8
    lo, hi = poisson_interval(mean, 0.95)
    assert (lo, hi) == (int(stats.poisson.ppf(0.025, mean)), int(stats.poisson.ppf(0.975, mean)))
    half = 1.96 * math.sqrt(mean)
    assert abs(lo - (mean - half)) < 3 and abs(hi - (mean + half)) < 3


def test_bonferroni_tails():
    means = np.linspace(5, 500, 10)
    lo, hi = prediction_intervals(means, 0.95, simultaneous=True)
    for m, a, b in zip(means, lo, hi):
        assert a == stats.poisson.ppf(0.0025, m) and b == stats.poisson.ppf(0.9975, m)
    lo1, hi1 = prediction_intervals(means, 0.95)
    assert np.all(lo <= lo1) and np.all(hi >= hi1)


def test_bad_level_rejected():
    with pytest.raises(ValueError):
        prediction_intervals([1.0], level=1.0)


@settings(max_examples=200)
@given(st.floats(1e-3, 5e5), st.floats(1e-4, 1 - 1e-4))
def test_quantile_definition(mean, q):
    k = poisson_quantile(mean, q)
    assert stats.poisson.cdf(k, mean) >= q - 1e-12
    assert k == 0 or stats.poisson.cdf(k - 1, mean) < q + 1e-12
