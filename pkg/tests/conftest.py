import datetime as dt
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def calendar_2000():
    from delaycast.simulate import default_calendar
    return default_calendar(dt.date(2000, 1, 1), 2000)


@pytest.fixture(scope="session")
def matrix_portfolio():
    from delaycast.simulate import default_scenario, simulate_portfolio
    return simulate_portfolio(default_scenario(200, seed=11, kind="matrix"))


@pytest.fixture(scope="session")
def matrix_fit(matrix_portfolio):
    from delaycast.em import OccurrenceSpec, fit_em
    from delaycast.reporting import MatrixReportingSpec
    tri = matrix_portfolio.triangle()
    return tri, fit_em(tri, OccurrenceSpec(), MatrixReportingSpec())


def random_triangle(rng, tau, low=1, high=20):
    """Strictly positive random counts on the observed cells."""
    from delaycast.triangle import RunoffTriangle
    counts = rng.integers(low, high, size=(tau, tau))
    return RunoffTriangle(counts * RunoffTriangle.observed_mask_for(tau))


def recursive_marginal_solution(tri):
    """Solve the row/column score equations of the multiplicative Poisson model.

    Row 1 is complete, so lambda_1 is its total; each newly revealed column
    then fixes one more p_d, which in turn fixes the next lambda.
    """
    tau = tri.tau
    N = tri.counts.astype(float)
    rows = N.sum(axis=1)
    cols = N.sum(axis=0)
    lam = np.zeros(tau)
    p = np.zeros(tau)
    lam[0] = rows[0]
    for k in range(1, tau):
        d = tau - k  # column with k observed rows
        p[d] = cols[d] / lam[:k].sum()
        lam[k] = rows[k] / (1.0 - p[d:].sum())
    p[0] = 1.0 - p[1:].sum()
    return lam, p
