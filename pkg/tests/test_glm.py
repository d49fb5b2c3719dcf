import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, special, stats

from delaycast.glm import (
    PHI_CAP,
    DesignMatrix,
    RankDeficientError,
    SeparationError,
    check_gradient,
    fit_weighted_logistic,
    fit_weighted_negbin,
    fit_weighted_poisson,
    logistic_loglik,
    nb_logpmf,
)


def ones(n):
    return np.ones((n, 1))


def dense_newton(grad_hess, x0, iters=100):
    """Plain Newton iteration used as an independent oracle."""
    x = np.asarray(x0, float)
    for _ in range(iters):
        g, H = grad_hess(x)
        step = np.linalg.solve(H, g)
        x = x - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return x


# ---------------------------------------------------------------- Poisson


def test_poisson_intercept_is_log_mean():
    res = fit_weighted_poisson(ones(2), [2, 4])
    assert res.converged
    assert res.coefficients[0] == pytest.approx(np.log(3), abs=1e-10)


def test_poisson_offsets_give_rate():
    res = fit_weighted_poisson(ones(2), [2, 4], offset=np.log([1.0, 2.0]))
    assert res.coefficients[0] == pytest.approx(np.log(2), abs=1e-10)


def test_poisson_binary_covariate_matches_newton_oracle():
    x = np.array([0, 0, 1, 1.0])
    y = np.array([1, 2, 6, 8.0])
    X = np.column_stack([np.ones(4), x])

    def gh(b):
        mu = np.exp(X @ b)
        return -(X.T @ (y - mu)), X.T @ (mu[:, None] * X)

    oracle = dense_newton(gh, np.zeros(2))
    res = fit_weighted_poisson(X, y)
    np.testing.assert_allclose(res.coefficients, oracle, atol=1e-8)
    # closed form as a cross-check of the oracle itself
    np.testing.assert_allclose(oracle, [np.log(1.5), np.log(7 / 1.5)], atol=1e-12)


def test_poisson_fractional_weights_match_replicated_rows():
    X = np.column_stack([np.ones(3), [0, 1, 1.0]])
    y = np.array([3.0, 5.0, 2.0])
    w = np.array([2.0, 0.5, 1.5])
    res = fit_weighted_poisson(X, y, weights=w)
    mean0 = 3.0
    mean1 = (0.5 * 5 + 1.5 * 2) / 2.0
    np.testing.assert_allclose(res.coefficients, [np.log(mean0), np.log(mean1 / mean0)], atol=1e-9)


def test_poisson_rank_deficiency_is_reported():
    X = np.column_stack([np.ones(4), np.ones(4)])
    with pytest.raises(RankDeficientError):
        fit_weighted_poisson(X, [1, 2, 3, 4])


def test_poisson_separation_is_reported():
    X = np.column_stack([np.ones(4), [0, 0, 1, 1.0]])
    with pytest.raises(SeparationError) as err:
        fit_weighted_poisson(X, [1, 2, 0, 0])
    assert err.value.direction is not None
    assert err.value.direction[1] < 0


def test_poisson_separation_can_be_tolerated():
    X = np.column_stack([np.ones(4), [0, 0, 1, 1.0]])
    res = fit_weighted_poisson(X, [1, 2, 0, 0], allow_separation=True)
    assert res.separated
    assert res.coefficients[0] == pytest.approx(np.log(1.5), abs=1e-6)
    assert np.exp(res.coefficients.sum()) < 1e-6


@pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
def test_poisson_rejects_bad_weights(bad):
    with pytest.raises(ValueError):
        fit_weighted_poisson(ones(2), [1, 2], weights=[1.0, bad])


def test_design_matrix_names_and_offset_are_used():
    dm = DesignMatrix(ones(2), ["(intercept)"], np.log([1.0, 2.0]))
    res = fit_weighted_poisson(dm, [2, 4])
    assert res.as_dict() == pytest.approx({"(intercept)": np.log(2)})


# ---------------------------------------------------------------- negative binomial


@given(st.lists(st.integers(0, 30), min_size=2, max_size=12).filter(lambda v: len(set(v)) > 1),
       st.floats(0.1, 50.0))
def test_negbin_mean_mle_is_sample_mean_for_fixed_phi(y, phi):
    res = fit_weighted_negbin(ones(len(y)), y, phi=phi)
    assert np.exp(res.coefficients[0]) == pytest.approx(np.mean(y), rel=1e-8)


def test_negbin_dispersion_matches_profile_oracle():
    y = np.array([0, 0, 5, 5.0])
    mu = y.mean()

    def profile(phi):
        return stats.nbinom.logpmf(y, phi, phi / (phi + mu)).sum()

    def score(phi):
        return np.sum(special.digamma(y + phi) - special.digamma(phi)
                      + np.log(phi / (phi + mu)) + (mu - y) / (phi + mu))

    grid = np.exp(np.linspace(np.log(1e-3), np.log(1e3), 2001))
    k = int(np.argmax([profile(g) for g in grid]))
    phi_star = optimize.bisect(score, grid[k - 1], grid[k + 1], xtol=1e-14)

    res = fit_weighted_negbin(ones(4), y)
    assert not res.phi_at_cap
    assert res.dispersion == pytest.approx(phi_star, abs=1e-6)
    assert np.exp(res.coefficients[0]) == pytest.approx(mu, rel=1e-8)


def _poisson_like_samples():
    """Poisson draws with no excess variance at the Poisson fit.

    When sum((y - mu)**2 - y) < 0 the NB score in 1/phi is negative at the
    Poisson limit, so the profile likelihood peaks at the cap.
    """
    out = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 2, 60).astype(float)
        X = np.column_stack([np.ones(60), x])
        y = rng.poisson(np.exp(1.0 + 0.5 * x)).astype(float)
        mu = np.exp(X @ fit_weighted_poisson(X, y).coefficients)
        if np.sum((y - mu) ** 2 - y) < 0:
            out.append((X, y))
        if len(out) == 3:
            break
    return out


@pytest.mark.parametrize("case", range(3))
def test_negbin_on_poisson_data_hits_cap(case):
    X, y = _poisson_like_samples()[case]
    nb = fit_weighted_negbin(X, y)
    po = fit_weighted_poisson(X, y)
    assert nb.phi_at_cap
    assert nb.dispersion == pytest.approx(PHI_CAP)
    np.testing.assert_allclose(nb.coefficients, po.coefficients, atol=1e-4)


def test_negbin_logpmf_matches_high_precision_oracle():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40

    def oracle(y, mu, phi):
        y, mu, phi = mpmath.mpf(int(y)), mpmath.mpf(mu), mpmath.mpf(phi)
        return float(mpmath.loggamma(y + phi) - mpmath.loggamma(phi) - mpmath.loggamma(y + 1)
                     + phi * mpmath.log(phi / (phi + mu)) + y * mpmath.log(mu / (phi + mu)))

    y = np.array([0, 1, 4, 17, 120])
    for mu, phi in [(0.3, 0.177), (6.47, 0.177), (50.0, 3.0), (2.0, 1e7)]:
        expected = [oracle(v, mu, phi) for v in y]
        np.testing.assert_allclose(nb_logpmf(y, mu, phi), expected, rtol=1e-9, atol=1e-7)


def test_negbin_fisher_information_is_positive_definite():
    rng = np.random.default_rng(3)
    x = rng.normal(size=200)
    X = np.column_stack([np.ones(200), x])
    mu = np.exp(1 + 0.3 * x)
    y = rng.negative_binomial(2.0, 2.0 / (2.0 + mu))
    res = fit_weighted_negbin(X, y)
    assert res.converged
    assert 0.5 < res.dispersion < 8
    I = res.fisher_information
    np.testing.assert_allclose(I, I.T)
    assert np.linalg.eigvalsh(I).min() > 0


# ---------------------------------------------------------------- logistic


@pytest.mark.parametrize("s,n,expected", [(1, 2, 0.0), (3, 4, np.log(3))])
def test_logistic_intercept(s, n, expected):
    res = fit_weighted_logistic(ones(1), [s], [n])
    assert res.coefficients[0] == pytest.approx(expected, abs=1e-10)


def test_logistic_fractional_binary_covariate_matches_newton_oracle():
    X = np.column_stack([np.ones(4), [0, 0, 1, 1.0]])
    s = np.array([0.7, 1.9, 2.25, 0.4])
    n = np.array([1.5, 3.2, 2.5, 1.1])

    def gh(g):
        p = special.expit(X @ g)
        return -(X.T @ (s - n * p)), X.T @ ((n * p * (1 - p))[:, None] * X)

    oracle = dense_newton(gh, np.zeros(2))
    res = fit_weighted_logistic(X, s, n)
    np.testing.assert_allclose(res.coefficients, oracle, atol=1e-8)


def test_logistic_separation_reports_direction():
    X = np.column_stack([np.ones(4), [0, 0, 1, 1.0]])
    with pytest.raises(SeparationError) as err:
        fit_weighted_logistic(X, [0.5, 0.2, 2.0, 1.0], [1.0, 1.0, 2.0, 1.0])
    d = err.value.direction
    assert d is not None
    # moving along the direction never lowers the likelihood
    base = logistic_loglik(np.zeros(2), X, [0.5, 0.2, 2.0, 1.0], [1.0, 1.0, 2.0, 1.0])[0]
    far = logistic_loglik(10 * d, X, [0.5, 0.2, 2.0, 1.0], [1.0, 1.0, 2.0, 1.0])[0]
    assert far >= base - 1e-9


def test_logistic_rejects_successes_above_trials():
    with pytest.raises(ValueError):
        fit_weighted_logistic(ones(1), [3.0], [2.0])


# ---------------------------------------------------------------- gradient checks


def test_check_gradient_poisson_at_mle():
    y = np.array([2.0, 4.0, 7.0])
    point = np.array([np.log(y.mean())])
    assert check_gradient("poisson", ones(3), y, point) < 1e-6
    from delaycast.glm import poisson_loglik
    assert abs(poisson_loglik(point, ones(3), y)[1][0]) < 1e-12


def test_check_gradient_negbin_random_point():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.poisson(3.0, size=30).astype(float)
    point = np.array([rng.normal(), rng.normal(scale=0.3), rng.normal()])
    assert check_gradient("negbin", X, y, point) < 1e-5


def test_check_gradient_logistic_at_zero():
    s = np.array([0.3, 2.0, 1.5])
    n = np.array([1.0, 2.5, 4.0])
    X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
    _, score = logistic_loglik(np.zeros(2), X, s, n)
    assert np.array_equal(score, X.T @ (s - n / 2))
    assert check_gradient("logistic", X, s, np.zeros(2), trials=n) < 1e-6


# ---------------------------------------------------------------- properties


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 20), st.floats(0.2, 3.0)),
                min_size=4, max_size=15), st.integers(0, 100), st.floats(0.1, 0.9))
def test_poisson_row_split_invariance(rows, pick, frac):
    x = np.array([r[0] for r in rows], float)
    y = np.array([r[1] for r in rows], float)
    w = np.array([r[2] for r in rows], float)
    if len(set(x)) < 2 or any(y[x == v].sum() == 0 for v in (0, 1)):
        return
    X = np.column_stack([np.ones(len(x)), x])
    base = fit_weighted_poisson(X, y, weights=w)
    i = pick % len(x)
    X2 = np.vstack([X, X[i]])
    y2 = np.append(y, y[i])
    w2 = np.append(w, w[i] * (1 - frac))
    w2[i] *= frac
    split = fit_weighted_poisson(X2, y2, weights=w2)
    np.testing.assert_allclose(split.coefficients, base.coefficients, atol=1e-8)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_fisher_information_psd(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(25), rng.normal(size=(25, 2))])
    y = rng.poisson(2.0, size=25).astype(float)
    res = fit_weighted_poisson(X, y)
    I = res.fisher_information
    np.testing.assert_allclose(I, I.T, atol=1e-12)
    assert np.linalg.eigvalsh(I).min() > -1e-10


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_loglik_nondecreasing_over_iterations(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
    y = rng.poisson(np.exp(0.5 + X[:, 1])).astype(float)
    values = [fit_weighted_poisson(X, y, start=np.array([3.0, -2.0, 2.0]), max_iter=k).loglik
              for k in range(0, 12)]
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(values, values[1:]))
