import datetime as dt
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from delaycast.calendar import WDAY_TABLE, calendar_table, is_working_day
from delaycast.design import CategoricalDesign
from delaycast.reporting import (
    IntraWeekMatrix,
    MatrixReportingSpec,
    ReverseTimeModel,
    ReverseTimeReportingSpec,
    StationaryDelayModel,
    WeekDelayModel,
    WeekModelSpec,
    WeeklyReportingModel,
    cell_probability,
    default_reporting_start,
    intra_week_probability,
    p_to_q,
    q_to_p,
    reported_mass,
    reporting_m_step,
    reporting_objective,
    reverse_time_features,
    week_probability,
)

MONDAY_ROW = (0.271, 0.331, 0.171, 0.119, 0.100, 0.008, 0.000)
MONDAY = 3  # 2000-01-03


def intercept_week(mu, phi, w_max=104):
    design = CategoricalDesign((), {})
    return WeekDelayModel(design, [math.log(mu)], phi, w_max)


def nb_log_oracle(w, mu, phi):
    return (math.lgamma(phi + w) - math.lgamma(w + 1) - math.lgamma(phi)
            + phi * math.log(phi / (phi + mu)) + w * math.log(mu / (phi + mu)))


def monday_matrix():
    P = np.full((7, 7), 1.0 / 7)
    P[0] = MONDAY_ROW
    P[0, 0] += 1.0 - sum(MONDAY_ROW)  # the printed row is rounded
    return IntraWeekMatrix(P)


def random_matrix(rng):
    return IntraWeekMatrix(rng.dirichlet(np.ones(7), size=7))


# ---------------------------------------------------------------- week model


def test_week_zero_closed_form(calendar_2000):
    m = intercept_week(2.3, 0.8)
    assert week_probability(m, 5, 0, calendar_2000) == pytest.approx((0.8 / 3.1) ** 0.8, rel=1e-13)


def test_week_probability_at_reported_baseline(calendar_2000):
    mu, phi = math.exp(1.867), 0.177
    m = intercept_week(mu, phi)
    for w in range(6):
        assert week_probability(m, 1, w, calendar_2000) == pytest.approx(
            math.exp(nb_log_oracle(w, mu, phi)), rel=1e-12)
    # frozen oracle value of the first-week probability
    assert week_probability(m, 1, 0, calendar_2000) == pytest.approx(0.52638039, abs=1e-8)


@settings(max_examples=30)
@given(st.floats(-3, 4), st.floats(0.05, 20), st.integers(1, 60))
def test_week_probabilities_sum_to_one(log_mu, phi, w_max):
    from delaycast.simulate import default_calendar
    cal = default_calendar(dt.date(2000, 1, 1), 50)
    m = intercept_week(math.exp(log_mu), phi, w_max)
    total = math.fsum(week_probability(m, 1, w, cal) for w in range(w_max + 1))
    assert total == pytest.approx(1.0, abs=1e-12)
    assert week_probability(m, 1, w_max + 1, cal) == 0.0


def test_negative_week_rejected(calendar_2000):
    with pytest.raises(ValueError):
        week_probability(intercept_week(1.0, 1.0), 1, -1, calendar_2000)


# ---------------------------------------------------------------- intra-week models


def test_monday_row_is_reproduced(calendar_2000):
    assert calendar_2000.date_of(MONDAY).isoweekday() == 1
    intra = monday_matrix()
    for w in range(3):
        got = [intra_week_probability(intra, MONDAY, 7 * w + j, calendar_2000) for j in range(7)]
        np.testing.assert_allclose(got[1:], MONDAY_ROW[1:], atol=1e-15)
        assert got[0] == pytest.approx(MONDAY_ROW[0], abs=1e-3)


def test_reverse_time_half_cascade():
    p = q_to_p(np.full(6, 0.5))
    np.testing.assert_allclose(p, [1 / 64, 1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2], atol=1e-16)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def brute_force_p(q):
    """Enumerate the reverse-time cascade: report on day j given not later than j."""
    p = []
    for j in range(7):
        prob = q[j - 1] if j > 0 else 1.0
        for k in range(j + 1, 7):
            prob *= 1.0 - q[k - 1]
        p.append(prob)
    return np.array(p)


@settings(max_examples=50)
@given(st.lists(st.floats(-6, 6), min_size=6, max_size=6))
def test_cascade_matches_brute_force(eta):
    q = special.expit(np.array(eta))
    p = q_to_p(q)
    np.testing.assert_allclose(p, brute_force_p(q), atol=1e-15)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_q_p_roundtrip(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(7) * 0.7)
    np.testing.assert_allclose(q_to_p(p_to_q(p)), p, atol=1e-12)


def test_reverse_time_grid_matches_explicit_covariates(calendar_2000):
    tau, n_weeks = 40, 3
    index, patterns = reverse_time_features(calendar_2000, tau, n_weeks)
    design = CategoricalDesign.fit(patterns, ("workdays", "dow", "holiday"))
    rng = np.random.default_rng(5)
    model = ReverseTimeModel(design, rng.normal(scale=0.8, size=design.n_columns))
    grid = model.intra_grid(calendar_2000, tau, 7 * n_weeks)
    tab = calendar_table(calendar_2000, tau + 7 * n_weeks + 8)
    names = design.names
    coef = dict(zip(names, model.gamma))
    for t in (1, 9, 23, 40):
        for w in range(n_weeks):
            q = []
            for j in range(1, 7):
                start = t + 7 * w
                r = start + j
                workdays = sum(is_working_day(calendar_2000.date_of(k), calendar_2000)
                               for k in range(start + 1, r + 1))
                cov = {"workdays": workdays, "dow": calendar_2000.date_of(r).isoweekday(),
                       "holiday": int(tab.holiday[r - 1])}
                eta = coef["intercept"] + sum(coef.get(f"{c}[{v}]", 0.0) for c, v in cov.items())
                q.append(special.expit(eta))
            expected = brute_force_p(q)
            np.testing.assert_allclose(grid[t - 1, 7 * w:7 * w + 7], expected, atol=1e-12)
            assert grid[t - 1, 7 * w:7 * w + 7].sum() == pytest.approx(1.0, abs=1e-12)


def test_matrix_rows_must_sum_to_one():
    P = np.full((7, 7), 1.0 / 7)
    P[2, 3] += 0.1
    with pytest.raises(ValueError):
        IntraWeekMatrix(P)


# ---------------------------------------------------------------- cell probabilities


def test_cell_probability_monday_first_day(calendar_2000):
    week = intercept_week(math.exp(1.867), 0.177)
    intra = monday_matrix()
    pw0 = week_probability(week, MONDAY, 0, calendar_2000)
    assert cell_probability(week, intra, MONDAY, 0, calendar_2000) == pytest.approx(
        pw0 * intra.P[0, 0], rel=1e-14)
    assert cell_probability(week, intra, MONDAY, 1, calendar_2000) == pytest.approx(pw0 * 0.331, rel=1e-14)


@pytest.mark.parametrize("t", range(1, 8))
def test_degenerate_intra_model(calendar_2000, t):
    P = np.zeros((7, 7))
    P[:, 0] = 1.0
    intra = IntraWeekMatrix(P)
    week = intercept_week(1.3, 2.0)
    dow = calendar_2000.date_of(t).isoweekday()
    first = int(np.nonzero(WDAY_TABLE[dow - 1] == 0)[0][0])
    for d in range(21):
        got = cell_probability(week, intra, t, d, calendar_2000)
        if d % 7 == first:
            assert got == week_probability(week, t, d // 7, calendar_2000)
        else:
            assert got == 0.0


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_cell_probabilities_sum_to_one(seed, w_max):
    from delaycast.simulate import default_calendar
    cal = default_calendar(dt.date(2000, 1, 1), 60)
    rng = np.random.default_rng(seed)
    week = intercept_week(math.exp(rng.uniform(-2, 3)), rng.uniform(0.1, 10), w_max)
    intra = random_matrix(rng)
    t = int(rng.integers(1, 30))
    total = math.fsum(cell_probability(week, intra, t, d, cal) for d in range(7 * (w_max + 1)))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_prob_matrix_nonnegative_rows_below_one(calendar_2000):
    rng = np.random.default_rng(2)
    model = WeeklyReportingModel(intercept_week(1.5, 1.0), random_matrix(rng))
    grid = model.prob_matrix(calendar_2000, 60)
    assert np.all(grid >= 0)
    assert np.all(grid.sum(axis=1) <= 1 + 1e-12)
    long = model.prob_matrix(calendar_2000, 60, 7 * 400)
    np.testing.assert_allclose(long.sum(axis=1), 1.0, atol=1e-10)


# ---------------------------------------------------------------- reported mass


def test_reported_mass_last_day_is_first_cell(calendar_2000):
    rng = np.random.default_rng(8)
    model = WeeklyReportingModel(intercept_week(1.5, 1.0), random_matrix(rng))
    tau = 30
    assert reported_mass(model, calendar_2000, tau, tau) == pytest.approx(
        model.prob_matrix(calendar_2000, tau)[tau - 1, 0], rel=1e-15)


def test_reported_mass_degenerate_is_one(calendar_2000):
    p = np.zeros(25)
    p[0] = 1.0
    model = StationaryDelayModel(p)
    assert all(reported_mass(model, calendar_2000, t, 25) == 1.0 for t in range(1, 26))


def test_reported_mass_matches_cell_sum(calendar_2000):
    rng = np.random.default_rng(4)
    week, intra = intercept_week(0.9, 0.6), random_matrix(rng)
    model = WeeklyReportingModel(week, intra)
    tau = 45
    for t in (1, 10, 33, 45):
        oracle = math.fsum(cell_probability(week, intra, t, d, calendar_2000) for d in range(tau - t + 1))
        assert reported_mass(model, calendar_2000, t, tau) == pytest.approx(oracle, abs=1e-12)


def test_reported_mass_bounds(calendar_2000):
    with pytest.raises(ValueError):
        reported_mass(StationaryDelayModel([1.0]), calendar_2000, 0, 5)


# ---------------------------------------------------------------- M-step


def test_m_step_concentrated_counts_give_unit_row(calendar_2000):
    tau = 70
    E = np.zeros((tau, tau))
    mondays = [t for t in range(1, tau - 14) if calendar_2000.date_of(t).isoweekday() == 1]
    for t in mondays:
        E[t - 1, [0, 7, 14]] = [5.0, 2.0, 1.0]
    spec = MatrixReportingSpec(WeekModelSpec(covariates=()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # the other weekdays have no counts
        model = reporting_m_step(E, np.zeros(tau), spec, calendar_2000, tau)
    np.testing.assert_array_equal(model.intra.P[0], [1, 0, 0, 0, 0, 0, 0])


def test_m_step_empty_rows_warn_and_keep_previous(calendar_2000):
    tau = 70
    E = np.zeros((tau, tau))
    E[MONDAY - 1, 0] = 4.0
    spec = MatrixReportingSpec(WeekModelSpec(covariates=()))
    prev = default_reporting_start(spec, calendar_2000, tau)
    with pytest.warns(RuntimeWarning, match="keeping previous row"):
        model = reporting_m_step(E, np.zeros(tau), spec, calendar_2000, tau, previous=prev)
    np.testing.assert_allclose(model.intra.P[1:], prev.intra.P[1:], atol=1e-15)


def test_m_step_week_mean_is_weighted_mean(calendar_2000):
    tau = 14
    E = np.zeros((tau, tau))
    E[0, 0] = 3.0
    E[0, 7] = 1.0
    spec = MatrixReportingSpec(WeekModelSpec(covariates=(), fixed_phi=1e6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = reporting_m_step(E, np.zeros(tau), spec, calendar_2000, tau)
    assert math.exp(model.week.theta[0]) == pytest.approx(0.25, rel=1e-8)
    assert model.week.phi == pytest.approx(1e6, rel=1e-14)


def test_censoring_term_negligible_when_remainder_tiny(matrix_fit):
    tri, em = matrix_fit
    counts = em.counts
    assert counts.remainder.sum() < 1e-6 * counts.row_totals.sum()
    spec = MatrixReportingSpec()
    off = reporting_m_step(counts.expected, counts.remainder, spec, tri.calendar, tri.tau, False,
                           previous=em.model.reporting)
    on = reporting_m_step(counts.expected, counts.remainder, spec, tri.calendar, tri.tau, True,
                          previous=em.model.reporting)
    a, b = off.week.params(), on.week.params()
    assert np.all(np.abs(a - b) <= 1e-3 * np.maximum(1.0, np.abs(a)))


@settings(max_examples=12)
@given(st.integers(0, 10_000), st.sampled_from(["matrix", "reverse_time"]))
def test_m_step_never_decreases_objective(seed, kind):
    from delaycast.simulate import default_calendar
    cal = default_calendar(dt.date(2000, 1, 1), 200)
    tau = 42
    rng = np.random.default_rng(seed)
    E = rng.gamma(1.0, 2.0, size=(tau, tau)) * np.exp(-np.arange(tau) / 6.0)[None, :]
    week = WeekModelSpec(covariates=("dow",))
    spec = MatrixReportingSpec(week) if kind == "matrix" else ReverseTimeReportingSpec(week)
    prev = default_reporting_start(spec, cal, tau)
    R = np.zeros(tau)
    before = reporting_objective(prev, E, R, cal, tau)
    after_model = reporting_m_step(E, R, spec, cal, tau, previous=prev)
    after = reporting_objective(after_model, E, R, cal, tau)
    assert after >= before - 1e-9 * abs(before)
    # a second pass from the fitted model cannot improve much either
    again = reporting_objective(reporting_m_step(E, R, spec, cal, tau, previous=after_model), E, R, cal, tau)
    assert again >= after - 1e-7 * abs(after)


def test_serialization_roundtrip(calendar_2000, matrix_fit):
    from delaycast.reporting import reporting_from_dict
    _, em = matrix_fit
    rep = em.model.reporting
    back = reporting_from_dict(rep.to_dict())
    np.testing.assert_allclose(back.prob_matrix(calendar_2000, 50), rep.prob_matrix(calendar_2000, 50),
                               rtol=1e-12)
