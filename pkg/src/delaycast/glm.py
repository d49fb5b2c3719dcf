"""Weighted count regressions used by the M-steps and the direct models.

Three families, all with fractional weights/responses so that EM-completed
counts can be fed in directly:

* log-link Poisson with offsets,
* log-link negative binomial (NB2) with unknown dispersion ``phi``
  (variance ``mu + mu**2 / phi``),
* logit-link binomial with fractional successes and trials.

Design matrices may be dense arrays or ``scipy.sparse`` matrices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy import optimize, special, stats

log = logging.getLogger(__name__)

PHI_CAP = 1e8
PHI_FLOOR = 1e-8
MAX_ITER = 200
MAX_HALVINGS = 20
RTOL = 1e-10
GTOL = 1e-8


class GLMError(RuntimeError):
    pass


class RankDeficientError(GLMError):
    pass


class SeparationError(GLMError):
    """Maximum likelihood estimate does not exist (coefficients run off to infinity)."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


@dataclass
class DesignMatrix:
    """Regressors plus optional per-row offset and weight."""

    matrix: object
    names: list = None
    offset: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class FitResult:
    coefficients: np.ndarray
    loglik: float
    fisher_information: np.ndarray
    converged: bool
    iterations: int
    dispersion: float | None = None
    names: list | None = None
    phi_at_cap: bool = False
    separated: bool = False
    joint_information: np.ndarray | None = field(default=None, repr=False)

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.fisher_information)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def as_dict(self) -> dict:
        names = self.names or [f"x{i}" for i in range(len(self.coefficients))]
        return dict(zip(names, map(float, self.coefficients)))


def _unpack(X, weights, offset):
    names = None
    if isinstance(X, DesignMatrix):
        names = X.names
        offset = X.offset if offset is None else offset
        weights = X.weights if weights is None else weights
        X = X.matrix
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    o = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if w.shape != (n,) or o.shape != (n,):
        raise ValueError("weights and offset must have one entry per row")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.all(np.isfinite(o)):
        raise ValueError("offset must be finite")
    return X, w, o, names


def _gram(X, w) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray((X.T @ sp.diags(w) @ X).todense())
    return (X * w[:, None]).T @ X


def _xt(X, v) -> np.ndarray:
    return np.asarray(X.T @ v).ravel()


def _xb(X, b) -> np.ndarray:
    return np.asarray(X @ b).ravel()


def check_rank(X, w=None, names=None) -> None:
    """Raise :class:`RankDeficientError` unless ``X`` has full column rank on rows with w > 0."""
    n, p = X.shape
    if p == 0:
        return
    w = np.ones(n) if w is None else (np.asarray(w) > 0).astype(float)
    G = _gram(X, w)
    d = np.sqrt(np.clip(np.diag(G), 0, None))
    empty = np.nonzero(d == 0)[0]
    if len(empty):
        bad = [names[i] for i in empty] if names else list(empty)
        raise RankDeficientError(f"design columns with no positive-weight rows: {bad}")
    C = G / np.outer(d, d)
    ev, vec = np.linalg.eigh(C)
    if ev[0] < 1e-10 * max(ev[-1], 1.0):
        v = vec[:, 0]
        involved = np.nonzero(np.abs(v) > 1e-3)[0]
        bad = [names[i] for i in involved] if names else list(involved)
        raise RankDeficientError(f"design is rank deficient; aliased columns: {bad}")


def _newton(objective: Callable, derivs: Callable, beta: np.ndarray, scale: float,
            max_iter=MAX_ITER, rtol=RTOL, gtol=GTOL):
    """Maximise a concave objective by Newton steps with step halving.

    ``objective(beta) -> value``; ``derivs(beta) -> (gradient, negative hessian)``.
    Returns (beta, value, converged, iterations, info).
    """
    value = objective(beta)
    if not np.isfinite(value):
        raise GLMError("objective is not finite at the starting point")
    converged = False
    it = 0
    grad, info = derivs(beta)
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            new = objective(cand)
            if np.isfinite(new) and new >= value - 1e-14 * abs(value):
                break
            t *= 0.5
        else:
            # no ascent possible: we are at the limit of floating point precision
            converged = np.max(np.abs(grad)) < 1e-6 * scale
            break
        change = abs(new - value) / (abs(value) + 1.0)
        beta, value = cand, new
        grad, info = derivs(beta)
        if change < rtol and np.max(np.abs(grad)) < gtol * scale:
            converged = True
            break
    return beta, value, converged, it, info


# --------------------------------------------------------------------------
# Poisson


def poisson_loglik(beta, X, y, weights=None, offset=None):
    """Weighted Poisson log-likelihood (without log y! terms) and score."""
    X, w, o, _ = _unpack(X, weights, offset)
    eta = o + _xb(X, beta)
    mu = np.exp(eta)
    y = np.asarray(y, float)
    value = float(np.sum(w * (y * eta - mu)))
    return value, _xt(X, w * (y - mu))


def _poisson_separation(X, y, w, names):
    # a dummy column whose rows all have zero response drives its coefficient to -inf
    pos = (w > 0)
    Xp = X[pos] if not sp.issparse(X) else X.tocsr()[np.nonzero(pos)[0]]
    yp = y[pos] * w[pos]
    col_y = _xt(Xp, yp)
    col_n = _xt(Xp, np.ones(Xp.shape[0]))
    bad = np.nonzero((col_n > 0) & (col_y <= 0))[0]
    if len(bad) and Xp.shape[0] > 0:
        if sp.issparse(Xp):
            nonneg = Xp.data.min() >= 0 if Xp.nnz else True
        else:
            nonneg = bool(np.all(Xp >= 0))
        if nonneg:
            return bad
    return np.array([], dtype=int)


def fit_weighted_poisson(X, y, weights=None, offset=None, *, start=None,
                         allow_separation=False, check=True, max_iter=MAX_ITER) -> FitResult:
    """Poisson regression with log link, offsets and fractional weights.

    Maximises ``sum_i w_i * (y_i * eta_i - exp(eta_i))`` with
    ``eta_i = offset_i + x_i' beta``.
    """
    X, w, o, names = _unpack(X, weights, offset)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one entry per row")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("responses must be finite and nonnegative")
    if check:
        check_rank(X, w, names)
    separated = False
    bad = _poisson_separation(X, y, w, names)
    if len(bad):
        labels = [names[i] for i in bad] if names else list(bad)
        if not allow_separation:
            direction = np.zeros(X.shape[1])
            direction[bad] = -1.0
            raise SeparationError(f"no events for design columns {labels}; MLE is at -inf", direction)
        separated = True

    if start is None:
        ybar = np.sum(w * y) / max(np.sum(w), 1e-300)
        mu0 = (y + max(ybar, 1e-3)) / 2.0
        z = np.log(mu0) - o + (y - mu0) / mu0
        G = _gram(X, w * mu0)
        start = np.linalg.lstsq(G, _xt(X, w * mu0 * z), rcond=None)[0]
    beta = np.asarray(start, dtype=float).copy()

    def objective(b):
        eta = o + _xb(X, b)
        with np.errstate(over="ignore"):
            return float(np.sum(w * (y * eta - np.exp(eta))))

    def derivs(b):
        mu = np.exp(o + _xb(X, b))
        return _xt(X, w * (y - mu)), _gram(X, w * mu)

    scale = max(1.0, float(np.sum(w * y)))
    beta, value, converged, it, info = _newton(objective, derivs, beta, scale, max_iter=max_iter)
    return FitResult(beta, value, info, converged, it, names=names, separated=separated)


# --------------------------------------------------------------------------
# Negative binomial


def nb_logpmf(y, mu, phi):
    """NB2 log pmf, stable for large ``phi``."""
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (-special.betaln(phi, y + 1.0) - np.log(phi + y)
               - phi * np.log1p(mu / phi) + special.xlogy(y, mu) - y * np.log(phi + mu))
    return out


def nb_logsf(y, mu, phi):
    """log P(Y >= y) for NB2."""
    y = np.asarray(y, float)
    p = phi / (phi + np.asarray(mu, float))
    return np.where(y <= 0, 0.0, stats.nbinom.logsf(y - 1, phi, p))


def _nb_dlogpmf(v, mu, phi):
    # derivatives of log pmf w.r.t. eta = log mu and u = log phi
    d_eta = phi * (v - mu) / (phi + mu)
    d_phi = special.digamma(phi + v) - special.digamma(phi) - np.log1p(mu / phi) + (mu - v) / (phi + mu)
    return d_eta, phi * d_phi


def nb_logsf_grad(y, mu, phi):
    """log survival and its derivatives w.r.t. log mu and log phi.

    ``y`` is an integer array; derivatives come from summing pmf terms below ``y``.
    """
    y = np.asarray(y, dtype=np.int64)
    mu = np.asarray(mu, float)
    logS = nb_logsf(y, mu, phi)
    ymax = int(y.max()) if y.size else 0
    v = np.arange(max(ymax, 1))[None, :]
    below = v < y[:, None]
    lp = nb_logpmf(v, mu[:, None], phi)
    pmf = np.where(below, np.exp(lp), 0.0)
    de, du = _nb_dlogpmf(v, mu[:, None], phi)
    S = np.exp(logS)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_eta = np.where(S > 0, -np.sum(pmf * de, axis=1) / S, 0.0)
        g_u = np.where(S > 0, -np.sum(pmf * du, axis=1) / S, 0.0)
    return logS, g_eta, g_u


class _NBGroupedData:
    """Sufficient statistics of a weighted NB sample with group-shared covariates."""

    def __init__(self, Xg, og, group, y, w, censored):
        self.Xg, self.og = Xg, og
        G = Xg.shape[0]
        unc = ~censored
        self.S0 = np.bincount(group[unc], weights=w[unc], minlength=G)
        self.A = np.bincount(group[unc], weights=(w * y)[unc], minlength=G)
        yv, inv = np.unique(y[unc], return_inverse=True)
        self.yv = yv
        self.Cy = np.bincount(inv, weights=w[unc], minlength=len(yv))
        cens = censored & (w > 0)
        self.c_group = group[cens]
        self.c_y = y[cens].astype(np.int64)
        self.c_w = w[cens]
        self.scale = max(1.0, float(np.sum(w * y)), float(np.sum(w)))

    def eta(self, beta):
        return self.og + _xb(self.Xg, beta)

    def loglik(self, beta, phi):
        eta = self.eta(beta)
        mu = np.exp(eta)
        yv = self.yv
        with np.errstate(over="ignore", invalid="ignore"):
            part_y = np.sum(self.Cy * (-special.betaln(phi, yv + 1.0) - np.log(phi + yv)))
            part_g = np.sum(-phi * self.S0 * np.log1p(mu / phi) + self.A * (eta - np.log(phi + mu)))
        value = part_y + part_g
        if len(self.c_w):
            value += np.sum(self.c_w * nb_logsf(self.c_y, mu[self.c_group], phi))
        return float(value)

    def beta_derivs(self, beta, phi):
        """Score and observed information in beta at fixed phi (uncensored part)."""
        mu = np.exp(self.eta(beta))
        r = phi * (self.A - self.S0 * mu) / (phi + mu)
        h = (phi * self.S0 + self.A) * phi * mu / (phi + mu) ** 2
        return _xt(self.Xg, r), _gram(self.Xg, h)

    def phi_derivs(self, beta, phi):
        """First and second derivative of the uncensored log-likelihood in u = log phi."""
        mu = np.exp(self.eta(beta))
        yv, Cy, S0, A = self.yv, self.Cy, self.S0, self.A
        g = (np.sum(Cy * (special.digamma(phi + yv) - special.digamma(phi)))
             + np.sum(S0 * (mu / (phi + mu) - np.log1p(mu / phi)) - A / (phi + mu)))
        h = (np.sum(Cy * (special.polygamma(1, phi + yv) - special.polygamma(1, phi)))
             + np.sum(S0 * mu ** 2 / (phi * (phi + mu) ** 2) + A / (phi + mu) ** 2))
        return phi * g, phi * phi * h + phi * g

    def full_gradient(self, beta, phi):
        """Gradient in (beta, log phi), censored rows included."""
        gb, _ = self.beta_derivs(beta, phi)
        gu, _ = self.phi_derivs(beta, phi)
        if len(self.c_w):
            mu = np.exp(self.eta(beta))
            _, ge, gu_c = nb_logsf_grad(self.c_y, mu[self.c_group], phi)
            per_group = np.bincount(self.c_group, weights=self.c_w * ge, minlength=len(mu))
            gb = gb + _xt(self.Xg, per_group)
            gu = gu + np.sum(self.c_w * gu_c)
        return gb, gu

    def joint_information(self, beta, phi):
        mu = np.exp(self.eta(beta))
        _, Ibb = self.beta_derivs(beta, phi)
        gu, hu = self.phi_derivs(beta, phi)
        cross = _xt(self.Xg, phi * (self.A - self.S0 * mu) * mu / (phi + mu) ** 2)
        p = len(beta)
        J = np.empty((p + 1, p + 1))
        J[:p, :p] = Ibb
        J[:p, p] = J[p, :p] = -cross
        J[p, p] = -hu
        return J


def _maximize_log_phi(data, beta, u, u_hi, u_lo=np.log(PHI_FLOOR), max_iter=100):
    """Safeguarded 1-D Newton on u = log phi for fixed beta."""
    value = data.loglik(beta, np.exp(u))
    for _ in range(max_iter):
        g, h = data.phi_derivs(beta, np.exp(u))
        if abs(g) < 1e-10 * data.scale:
            break
        if h < 0:
            step = -g / h
        else:
            step = np.sign(g)
        step = float(np.clip(step, -2.0, 2.0))
        t = 1.0
        improved = False
        for _ in range(MAX_HALVINGS + 1):
            cand = float(np.clip(u + t * step, u_lo, u_hi))
            new = data.loglik(beta, np.exp(cand))
            if np.isfinite(new) and new >= value:
                improved = True
                break
            t *= 0.5
        if not improved or cand == u:
            break
        moved = abs(cand - u)
        u, value = cand, new
        if moved < 1e-12 or (u >= u_hi and g > 0):
            break
    far = np.log(1e6)
    if u_hi > u > far and data.phi_derivs(beta, np.exp(far))[0] > 0:
        # beyond 1e6 the profile is too flat for the line search (and the
        # score drowns in rounding); still rising there means the Poisson limit
        u = u_hi
    return u


def fit_weighted_negbin(X, y, weights=None, offset=None, *, groups=None, phi=None,
                        start=None, start_phi=None, censored=None, phi_cap=PHI_CAP,
                        max_iter=MAX_ITER, check=True) -> FitResult:
    """Negative binomial (NB2) regression with log link and fractional weights.

    ``mu_i = exp(offset_i + x_i' beta)``, ``Var = mu + mu**2 / phi``.  The
    coefficients and ``phi`` are estimated jointly by alternating a Newton
    step in ``beta`` with a 1-D Newton step on the profile in ``log(phi)``.
    Pass ``phi`` to hold the dispersion fixed.

    ``groups`` (optional) maps each response row to a row of ``X``; rows
    sharing covariates can then be passed without repeating the design.
    ``censored`` marks rows whose response is only known to be ``>= y``.

    When the data show no overdispersion, ``phi`` runs to ``phi_cap`` and
    the result is flagged ``phi_at_cap`` (the Poisson limit).
    """
    X, _, og, names = _unpack(X, None, offset if groups is not None else None)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if groups is None:
        group = np.arange(n)
        if X.shape[0] != n:
            raise ValueError("X must have one row per response when groups is not given")
        og = np.zeros(n) if offset is None else np.asarray(offset, float)
    else:
        group = np.asarray(groups, dtype=np.int64)
        if group.shape != (n,):
            raise ValueError("groups must have one entry per response")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("responses must be finite and nonnegative")
    cens = np.zeros(n, bool) if censored is None else np.asarray(censored, bool)
    if check:
        gw = np.bincount(group, weights=w, minlength=X.shape[0])
        check_rank(X, gw, names)

    data = _NBGroupedData(X, og, group, y, w, cens)
    fixed = phi is not None
    u_hi = np.log(phi_cap)
    if fixed:
        u = float(np.log(phi))
    elif start_phi is not None:
        u = float(np.clip(np.log(start_phi), np.log(PHI_FLOOR), u_hi))
    else:
        u = 0.0

    if start is None:
        # Poisson start on the group sufficient statistics
        pos = data.S0 > 0
        ybar = np.sum(data.A) / max(np.sum(data.S0), 1e-300)
        rate = np.where(pos, (data.A + ybar * 0.5) / (data.S0 + 0.5), ybar)
        rate = np.maximum(rate, 1e-3 * max(ybar, 1e-3))
        z = np.log(rate) - og
        wt = data.S0 * rate
        start = np.linalg.lstsq(_gram(X, wt), _xt(X, wt * z), rcond=None)[0]
    beta = np.asarray(start, float).copy()
    if not fixed and start_phi is None:
        u = _maximize_log_phi(data, beta, u, u_hi)

    value = data.loglik(beta, np.exp(u))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        phi_now = np.exp(u)
        beta, _, _, _, _ = _newton(lambda b: data.loglik(b, phi_now),
                                   lambda b: data.beta_derivs(b, phi_now),
                                   beta, data.scale, max_iter=50)
        if not fixed:
            u = _maximize_log_phi(data, beta, u, u_hi)
        new = data.loglik(beta, np.exp(u))
        gb, gu = data.beta_derivs(beta, np.exp(u))[0], data.phi_derivs(beta, np.exp(u))[0]
        at_cap = (not fixed) and u >= u_hi - 1e-12 and gu > 0
        gnorm = max(np.max(np.abs(gb)) if len(gb) else 0.0,
                    0.0 if (fixed or at_cap) else abs(gu))
        change = abs(new - value) / (abs(value) + 1.0)
        value = new
        if change < RTOL and gnorm < GTOL * data.scale:
            converged = True
            break
        if change < 1e-15 and gnorm < 1e-6 * data.scale:
            converged = True
            break

    if len(data.c_w):
        beta, u, value = _polish_censored(data, beta, u, fixed, u_hi)

    phi_hat = float(np.exp(u))
    at_cap = (not fixed) and u >= u_hi - 1e-9
    J = data.joint_information(beta, phi_hat)
    return FitResult(beta, value, J[:-1, :-1], converged, it, dispersion=phi_hat,
                     names=names, phi_at_cap=at_cap, joint_information=J)


def _polish_censored(data, beta, u, fixed, u_hi):
    p = len(beta)

    def fun(x):
        b = x[:p]
        uu = u if fixed else x[p]
        phi = np.exp(uu)
        value = data.loglik(b, phi)
        gb, gu = data.full_gradient(b, phi)
        grad = gb if fixed else np.append(gb, gu)
        return -value, -grad

    x0 = beta if fixed else np.append(beta, u)
    bounds = None if fixed else [(None, None)] * p + [(np.log(PHI_FLOOR), u_hi)]
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-9})
    x = res.x
    b = x[:p]
    uu = u if fixed else float(x[p])
    return b, uu, data.loglik(b, np.exp(uu))


def negbin_loglik(params, X, y, weights=None, offset=None):
    """Weighted NB log-likelihood and score in ``params = (beta, log phi)``."""
    X, w, o, _ = _unpack(X, weights, offset)
    y = np.asarray(y, float)
    beta, u = np.asarray(params[:-1], float), float(params[-1])
    data = _NBGroupedData(X, o, np.arange(len(y)), y, w, np.zeros(len(y), bool))
    phi = np.exp(u)
    gb, gu = data.full_gradient(beta, phi)
    return data.loglik(beta, phi), np.append(gb, gu)


# --------------------------------------------------------------------------
# Logistic


def logistic_loglik(gamma, X, successes, trials):
    """Binomial log-likelihood (logit link, no binomial coefficients) and score."""
    s = np.asarray(successes, float)
    m = np.asarray(trials, float)
    eta = _xb(X, gamma)
    value = float(np.sum(s * eta - m * np.logaddexp(0.0, eta)))
    return value, _xt(X, s - m * special.expit(eta))


def find_separation(X, successes, trials, tol=1e-9):
    """Direction ``b`` along which the binomial likelihood increases without bound, or None.

    Solves a small linear program: rows with no successes need ``x'b <= 0``,
    rows with no failures ``x'b >= 0`` and mixed rows ``x'b = 0``.
    """
    X = X.toarray() if sp.issparse(X) else np.asarray(X, float)
    s = np.asarray(successes, float)
    m = np.asarray(trials, float)
    keep = m > 0
    X, s, m = X[keep], s[keep], m[keep]
    if len(s) == 0:
        return None
    zero = s <= tol * m
    full = (m - s) <= tol * m
    mixed = ~(zero | full)
    c = -(X[full].sum(axis=0) - X[zero].sum(axis=0))
    A_ub = np.vstack([X[zero], -X[full]]) if (zero.any() or full.any()) else None
    b_ub = np.zeros(A_ub.shape[0]) if A_ub is not None else None
    A_eq = X[mixed] if mixed.any() else None
    b_eq = np.zeros(A_eq.shape[0]) if A_eq is not None else None
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                           bounds=[(-1, 1)] * X.shape[1], method="highs")
    if res.status == 0 and -res.fun > 1e-7:
        return res.x
    return None


def fit_weighted_logistic(X, successes, trials, *, start=None, allow_separation=False,
                          check=True, max_iter=MAX_ITER) -> FitResult:
    """Logistic regression on (possibly fractional) successes out of trials."""
    names = None
    if isinstance(X, DesignMatrix):
        names, X = X.names, X.matrix
    s = np.asarray(successes, dtype=float)
    m = np.asarray(trials, dtype=float)
    if s.shape != (X.shape[0],) or m.shape != s.shape:
        raise ValueError("successes and trials must have one entry per row")
    if np.any(s < 0) or np.any(s > m * (1 + 1e-12)) or not np.all(np.isfinite(m)):
        raise ValueError("need 0 <= successes <= trials")
    s = np.minimum(s, m)
    if check:
        check_rank(X, m, names)
    separated = False
    if X.shape[0] * X.shape[1] <= 2_000_000:
        direction = find_separation(X, s, m)
        if direction is not None:
            if not allow_separation:
                labels = names if names else None
                raise SeparationError(
                    f"complete or quasi-complete separation along direction {np.round(direction, 6)}"
                    + (f" over columns {labels}" if labels else ""), direction)
            separated = True

    if start is None:
        prop = (s + 0.5) / (m + 1.0)
        z = special.logit(prop)
        wt = m * prop * (1 - prop)
        start = np.linalg.lstsq(_gram(X, wt), _xt(X, wt * z), rcond=None)[0]
    gamma = np.asarray(start, float).copy()

    def objective(g):
        eta = _xb(X, g)
        return float(np.sum(s * eta - m * np.logaddexp(0.0, eta)))

    def derivs(g):
        p = special.expit(_xb(X, g))
        return _xt(X, s - m * p), _gram(X, m * p * (1 - p))

    scale = max(1.0, float(np.sum(m)))
    gamma, value, converged, it, info = _newton(objective, derivs, gamma, scale, max_iter=max_iter)
    return FitResult(gamma, value, info, converged, it, names=names, separated=separated)


# --------------------------------------------------------------------------


def check_gradient(family: str, X, y, point, *, weights=None, offset=None, trials=None) -> float:
    """Largest relative gap between the analytic score and central differences.

    ``point`` is ``beta`` (poisson), ``(beta, log phi)`` (negbin) or
    ``gamma`` (logistic, with ``y`` the successes and ``trials`` given).
    """
    point = np.asarray(point, dtype=float)
    if family == "poisson":
        f = lambda b: poisson_loglik(b, X, y, weights, offset)
    elif family == "negbin":
        f = lambda b: negbin_loglik(b, X, y, weights, offset)
    elif family == "logistic":
        if trials is None:
            raise ValueError("logistic check needs trials")
        f = lambda b: logistic_loglik(b, X, y, trials)
    else:
        raise ValueError(f"unknown family {family!r}")
    _, score = f(point)
    worst = 0.0
    for i in range(len(point)):
        h = 1e-6 * max(1.0, abs(point[i]))
        up, dn = point.copy(), point.copy()
        up[i] += h
        dn[i] -= h
        fd = (f(up)[0] - f(dn)[0]) / (2 * h)
        worst = max(worst, abs(score[i] - fd) / (1.0 + abs(score[i])))
    return worst
