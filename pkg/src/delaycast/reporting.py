"""Reporting-delay probabilities ``p_td`` and their complete-data M-step.

Three structures are available:

* ``WeeklyReportingModel(WeekDelayModel, IntraWeekMatrix)``: negative binomial
  probabilities for the reporting week times a 7x7 day-probability matrix
  indexed by occurrence weekday and within-week reporting level;
* ``WeeklyReportingModel(WeekDelayModel, ReverseTimeModel)``: the same week
  model with intra-week probabilities rebuilt from logistic
  "reverse-time" conditional probabilities ``q``;
* ``StationaryDelayModel``: a free probability vector ``p_d`` (chain ladder).

Delays are split as ``w = d // 7`` (reporting week) and ``j = d % 7``.
All grids are indexed ``[t - 1, d]``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .calendar import WDAY_TABLE, CalendarConfig, calendar_table
from .design import CategoricalDesign
from .glm import _nb_dlogpmf, fit_weighted_logistic, fit_weighted_negbin, nb_logpmf, nb_logsf

log = logging.getLogger(__name__)

OCCURRENCE_COVARIATES = ("jan1", "dec31", "month", "dow", "dom")
REVERSE_TIME_COVARIATES = ("workdays", "dow", "holiday")
# P entries below this are held fixed in the parameter vector (boundary values)
FREE_ENTRY_MIN = 1e-4


# --------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class WeekModelSpec:
    covariates: tuple = OCCURRENCE_COVARIATES
    w_max: int = 104
    fixed_phi: float | None = None

    def __post_init__(self):
        if self.w_max < 1:
            raise ValueError("w_max must be >= 1")
        if self.fixed_phi is not None and not self.fixed_phi > 0:
            raise ValueError("fixed_phi must be positive")


@dataclass(frozen=True)
class MatrixReportingSpec:
    week: WeekModelSpec = field(default_factory=WeekModelSpec)
    prob_floor: float = 0.0
    kind = "matrix"


@dataclass(frozen=True)
class ReverseTimeReportingSpec:
    week: WeekModelSpec = field(default_factory=WeekModelSpec)
    covariates: tuple = REVERSE_TIME_COVARIATES
    kind = "reverse_time"


@dataclass(frozen=True)
class StationaryReportingSpec:
    kind = "stationary"


# --------------------------------------------------------------------------
# helpers


def occurrence_columns(cal: CalendarConfig, tau: int) -> dict:
    """Calendar covariates of occurrence days 1..tau."""
    return calendar_table(cal, tau).columns(np.arange(1, tau + 1))


def _n_weeks(n_delays: int) -> int:
    return -(-n_delays // 7)


@lru_cache(maxsize=16)
def reverse_time_features(cal: CalendarConfig, tau: int, n_weeks: int):
    """Covariate patterns of the cells ``(t, 7w + j)`` for j = 1..6.

    Returns ``(index, patterns)``: ``index`` has shape (tau, n_weeks, 6) and
    points into ``patterns``, a dict of equal-length arrays with keys
    workdays, dow and holiday (all evaluated at the reporting day t + d).
    """
    tab = calendar_table(cal, tau + 7 * n_weeks + 8)
    t = np.arange(1, tau + 1)[:, None, None]
    w = np.arange(n_weeks)[None, :, None]
    j = np.arange(1, 7)[None, None, :]
    start = t + 7 * w
    r = start + j
    workdays = tab.cum_working[r] - tab.cum_working[start]
    dow = tab.dow[r - 1]
    hol = tab.holiday[r - 1]
    code = (workdays * 7 + (dow - 1)) * 3 + hol
    uniq, inv = np.unique(code.ravel(), return_inverse=True)
    patterns = {"holiday": uniq % 3, "dow": (uniq // 3) % 7 + 1, "workdays": uniq // 21}
    index = inv.reshape(code.shape).astype(np.int64)
    index.setflags(write=False)
    return index, patterns


def q_to_p(q: np.ndarray) -> np.ndarray:
    """Intra-week probabilities from reverse-time conditionals.

    ``q[..., k]`` for k = 1..6 is stored at position ``k - 1``.  Returns
    ``p[..., 0:7]`` with ``p_j = q_j prod_{k>j} (1 - q_k)`` and
    ``p_0 = prod_{k>=1} (1 - q_k)``.
    """
    q = np.asarray(q, float)
    one_minus = 1.0 - q
    # suffix products prod_{k>j} (1 - q_k) for j = 0..6
    suffix = np.ones(q.shape[:-1] + (7,))
    suffix[..., :6] = np.cumprod(one_minus[..., ::-1], axis=-1)[..., ::-1]
    p = np.empty(q.shape[:-1] + (7,))
    p[..., 0] = suffix[..., 0]
    p[..., 1:] = q * suffix[..., 1:]
    return p


def p_to_q(p: np.ndarray) -> np.ndarray:
    """Inverse of :func:`q_to_p`: ``q_j = p_j / sum_{k<=j} p_k`` for j = 1..6."""
    p = np.asarray(p, float)
    cum = np.cumsum(p, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(cum[..., 1:] > 0, p[..., 1:] / cum[..., 1:], 0.0)
    return q


# --------------------------------------------------------------------------
# week model


class WeekDelayModel:
    """Negative binomial distribution of the reporting week.

    ``mu_t = exp(x_t' theta)``, dispersion ``phi``.  Weeks at or beyond
    ``w_max`` are folded into one survival bucket by :meth:`week_probability`.
    """

    def __init__(self, design: CategoricalDesign, theta, phi: float, w_max: int = 104,
                 fixed_phi: bool = False):
        self.design = design
        self.theta = np.asarray(theta, float)
        self.phi = float(phi)
        self.w_max = int(w_max)
        self.fixed_phi = bool(fixed_phi)
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if len(self.theta) != design.n_columns:
            raise ValueError("theta length does not match the design")

    def x(self, cal: CalendarConfig, tau: int) -> np.ndarray:
        return self.design.matrix(occurrence_columns(cal, tau))

    def mu(self, cal: CalendarConfig, tau: int) -> np.ndarray:
        return np.exp(self.x(cal, tau) @ self.theta)

    def week_probs(self, mu: np.ndarray, n_weeks: int) -> np.ndarray:
        """NB pmf for weeks 0..n_weeks-1 (no tail folding), shape (len(mu), n_weeks)."""
        w = np.arange(n_weeks)[None, :]
        return np.exp(nb_logpmf(w, mu[:, None], self.phi))

    def week_probability(self, t: int, w: int, cal: CalendarConfig) -> float:
        """Probability of reporting week ``w`` for occurrence day ``t``.

        ``w == w_max`` returns the survival mass of weeks ``>= w_max``.
        """
        if w < 0:
            raise ValueError("week must be >= 0")
        mu = float(self.mu(cal, t)[t - 1])
        if w > self.w_max:
            return 0.0
        if w == self.w_max:
            return float(np.exp(nb_logsf(w, mu, self.phi)))
        return float(np.exp(nb_logpmf(w, mu, self.phi)))

    @property
    def param_names(self) -> list:
        names = [f"theta:{n}" for n in self.design.names]
        return names if self.fixed_phi else names + ["log_phi"]

    def params(self) -> np.ndarray:
        return self.theta.copy() if self.fixed_phi else np.append(self.theta, np.log(self.phi))

    def with_params(self, vec) -> "WeekDelayModel":
        p = self.design.n_columns
        phi = self.phi if self.fixed_phi else float(np.exp(vec[p]))
        return WeekDelayModel(self.design, vec[:p], phi, self.w_max, self.fixed_phi)

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "theta": dict(zip(self.design.names, map(float, self.theta))),
            "phi": self.phi,
            "w_max": self.w_max,
            "fixed_phi": self.fixed_phi,
        }

    @classmethod
    def from_dict(cls, d) -> "WeekDelayModel":
        design = CategoricalDesign.from_dict(d["design"])
        return cls(design, design.coef_from_dict(d["theta"]), d["phi"], d["w_max"], d.get("fixed_phi", False))


# --------------------------------------------------------------------------
# intra-week models


class IntraWeekMatrix:
    """Day probabilities ``P[dow(t), level]`` within each reporting week."""

    def __init__(self, P, free_mask=None):
        P = np.array(P, dtype=float)
        if P.shape != (7, 7):
            raise ValueError("P must be 7 x 7")
        if np.any(P < -1e-15) or np.any(P > 1 + 1e-12):
            raise ValueError("entries of P must lie in [0, 1]")
        P = np.clip(P, 0.0, 1.0)
        sums = P.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError(f"rows of P must sum to 1, got {sums}")
        self.P = P / sums[:, None]
        if free_mask is None:
            free_mask = self.P >= FREE_ENTRY_MIN
            free_mask[:, 0] = False
        self.free_mask = np.asarray(free_mask, bool)

    def day_matrix(self) -> np.ndarray:
        """``M[dow - 1, j]``: probability of intra-week day j for occurrence weekday dow."""
        return np.take_along_axis(self.P, WDAY_TABLE, axis=1)

    def intra_grid(self, cal: CalendarConfig, tau: int, n_delays: int) -> np.ndarray:
        dow = occurrence_columns(cal, tau)["dow"]
        M = self.day_matrix()
        j = np.arange(n_delays) % 7
        return M[dow - 1][:, j]

    def intra_week_probability(self, t: int, d: int, cal: CalendarConfig) -> float:
        dow = cal.date_of(t).isoweekday()
        return float(self.day_matrix()[dow - 1, d % 7])

    @property
    def param_names(self) -> list:
        from .calendar import DOW_NAMES, WDAY_LEVELS
        r, c = np.nonzero(self.free_mask)
        return [f"P:{DOW_NAMES[i]}:{WDAY_LEVELS[k]}" for i, k in zip(r, c)]

    def params(self) -> np.ndarray:
        return self.P[self.free_mask].copy()

    def with_params(self, vec) -> "IntraWeekMatrix":
        P = self.P.copy()
        P[self.free_mask] = vec
        others = np.where(np.arange(7)[None, :] > 0, P, 0.0).sum(axis=1)
        P[:, 0] = 1.0 - others
        new = object.__new__(IntraWeekMatrix)
        new.P, new.free_mask = P, self.free_mask
        return new

    def to_dict(self) -> dict:
        return {"P": self.P.tolist()}

    @classmethod
    def from_dict(cls, d) -> "IntraWeekMatrix":
        return cls(d["P"])


class ReverseTimeModel:
    """Intra-week probabilities through ``logit q_{t,d} = x_td' gamma``.

    ``x_td`` holds categorical covariates of the reporting day ``t + d``:
    working days elapsed in the current reporting week, weekday and holiday
    class.  ``q`` is defined for intra-week days j = 1..6.
    """

    def __init__(self, design: CategoricalDesign, gamma):
        self.design = design
        self.gamma = np.asarray(gamma, float)
        if len(self.gamma) != design.n_columns:
            raise ValueError("gamma length does not match the design")
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma must be finite")

    def pattern_eta(self, patterns) -> np.ndarray:
        return self.design.matrix(patterns) @ self.gamma

    def q_grid(self, cal: CalendarConfig, tau: int, n_weeks: int) -> np.ndarray:
        index, patterns = reverse_time_features(cal, tau, n_weeks)
        return special.expit(self.pattern_eta(patterns))[index]

    def intra_grid(self, cal: CalendarConfig, tau: int, n_delays: int) -> np.ndarray:
        W = _n_weeks(n_delays)
        p = q_to_p(self.q_grid(cal, tau, W))
        return p.reshape(tau, 7 * W)[:, :n_delays]

    def intra_week_probability(self, t: int, d: int, cal: CalendarConfig) -> float:
        w, j = divmod(d, 7)
        return float(self.intra_grid(cal, t, 7 * (w + 1))[t - 1, 7 * w + j])

    @property
    def param_names(self) -> list:
        return [f"gamma:{n}" for n in self.design.names]

    def params(self) -> np.ndarray:
        return self.gamma.copy()

    def with_params(self, vec) -> "ReverseTimeModel":
        return ReverseTimeModel(self.design, np.asarray(vec, float))

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(),
                "gamma": dict(zip(self.design.names, map(float, self.gamma)))}

    @classmethod
    def from_dict(cls, d) -> "ReverseTimeModel":
        design = CategoricalDesign.from_dict(d["design"])
        return cls(design, design.coef_from_dict(d["gamma"]))


# --------------------------------------------------------------------------
# full reporting models


class WeeklyReportingModel:
    """``p_td = pW_{t, d // 7} * p_intra_{t, d}``."""

    def __init__(self, week: WeekDelayModel, intra):
        self.week = week
        self.intra = intra

    @property
    def kind(self) -> str:
        return "matrix" if isinstance(self.intra, IntraWeekMatrix) else "reverse_time"

    def prob_matrix(self, cal: CalendarConfig, tau: int, n_delays: int | None = None) -> np.ndarray:
        """Grid ``p[t - 1, d]`` for t = 1..tau and d = 0..n_delays-1 (default tau).

        The week pmf is used for every week on the grid; the survival folding
        at ``w_max`` only applies beyond it.
        """
        n = n_delays or tau
        W = _n_weeks(n)
        pW = self.week.week_probs(self.week.mu(cal, tau), W)
        return np.repeat(pW, 7, axis=1)[:, :n] * self.intra.intra_grid(cal, tau, n)

    @property
    def blocks(self):
        return (self.week, self.intra)

    @property
    def param_names(self) -> list:
        return self.week.param_names + self.intra.param_names

    def params(self) -> np.ndarray:
        return np.concatenate([self.week.params(), self.intra.params()])

    def with_params(self, vec) -> "WeeklyReportingModel":
        k = len(self.week.params())
        return WeeklyReportingModel(self.week.with_params(vec[:k]), self.intra.with_params(vec[k:]))

    # -- derivatives ------------------------------------------------------

    def grad_log_prob(self, cal: CalendarConfig, tau: int, weights: np.ndarray) -> np.ndarray:
        """``sum_{t,d} weights[t-1, d] * d log p_td / d params``."""
        n = weights.shape[1]
        W = _n_weeks(n)
        Wt = np.zeros((tau, 7 * W))
        Wt[:, :n] = weights
        Wt = Wt.reshape(tau, W, 7)
        # week part
        B = Wt.sum(axis=2)
        X = self.week.x(cal, tau)
        mu = np.exp(X @ self.week.theta)
        de, du = _nb_dlogpmf(np.arange(W)[None, :], mu[:, None], self.week.phi)
        g = [X.T @ (B * de).sum(axis=1)]
        if not self.week.fixed_phi:
            g.append([np.sum(B * du)])
        g.append(self._intra_grad(cal, tau, Wt))
        return np.concatenate(g)

    def _intra_grad(self, cal, tau, Wt) -> np.ndarray:
        if isinstance(self.intra, IntraWeekMatrix):
            P = self.intra.P
            A = _level_totals(cal, tau, Wt)
            with np.errstate(divide="ignore", invalid="ignore"):
                G = np.where(P > 0, A / P, 0.0)
            G = G - G[:, :1]
            return G[self.intra.free_mask]
        W = Wt.shape[1]
        index, patterns = reverse_time_features(cal, tau, W)
        q = special.expit(self.intra.pattern_eta(patterns))[index]
        cum = np.cumsum(Wt, axis=2)[:, :, 1:]
        r = Wt[:, :, 1:] - q * cum
        per_pattern = np.bincount(index.ravel(), weights=r.ravel(), minlength=len(patterns["dow"]))
        return self.intra.design.matrix(patterns).T @ per_pattern

    def jac_log_prob(self, cal: CalendarConfig, tau: int, t: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Rows ``d log p_td / d params`` for the cells ``(t[i], d[i])``."""
        t = np.asarray(t, np.int64)
        d = np.asarray(d, np.int64)
        w, j = d // 7, d % 7
        X = self.week.x(cal, tau)[t - 1]
        mu = np.exp(X @ self.week.theta)
        de, du = _nb_dlogpmf(w, mu, self.week.phi)
        parts = [X * de[:, None]]
        if not self.week.fixed_phi:
            parts.append(du[:, None])
        if isinstance(self.intra, IntraWeekMatrix):
            P = self.intra.P
            dow = occurrence_columns(cal, tau)["dow"][t - 1]
            level = WDAY_TABLE[dow - 1, j]
            J = np.zeros((len(t), 7, 7))
            rows = np.arange(len(t))
            with np.errstate(divide="ignore"):
                J[rows, dow - 1, level] = np.where(P[dow - 1, level] > 0, 1.0 / P[dow - 1, level], 0.0)
                J[rows, dow - 1, :] -= np.where(P[dow - 1, 0] > 0, 1.0 / P[dow - 1, 0], 0.0)[:, None]
            parts.append(J[:, self.intra.free_mask])
        else:
            W = int(w.max()) + 1 if len(w) else 1
            index, patterns = reverse_time_features(cal, tau, W)
            Xp = self.intra.design.matrix(patterns)
            q = special.expit(Xp @ self.intra.gamma)
            idx = index[t - 1, w]  # (m, 6)
            qc = q[idx]
            k = np.arange(1, 7)[None, :]
            coef = np.where(k == j[:, None], 1.0 - qc, np.where(k > j[:, None], -qc, 0.0))
            parts.append(np.einsum("mk,mkp->mp", coef, Xp[idx]))
        return np.hstack(parts)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "week": self.week.to_dict(), "intra": self.intra.to_dict()}


def _level_totals(cal, tau, Wt) -> np.ndarray:
    """Totals of a (tau, W, 7) weight array by (occurrence dow, within-week level)."""
    dow = occurrence_columns(cal, tau)["dow"]
    by_day = Wt.sum(axis=1)  # (tau, 7) by intra-week day j
    per_dow = np.zeros((7, 7))
    np.add.at(per_dow, dow - 1, by_day)
    A = np.zeros((7, 7))
    rows = np.repeat(np.arange(7), 7)
    np.add.at(A, (rows, WDAY_TABLE.ravel()), per_dow.ravel())
    return A


class StationaryDelayModel:
    """Delay probabilities ``p_d`` shared by all occurrence days (chain ladder)."""

    def __init__(self, p):
        p = np.asarray(p, float)
        if np.any(p < -1e-15):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        self.p = np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum()

    kind = "stationary"

    def prob_matrix(self, cal: CalendarConfig, tau: int, n_delays: int | None = None) -> np.ndarray:
        n = n_delays or tau
        row = np.zeros(n)
        m = min(n, len(self.p))
        row[:m] = self.p[:m]
        return np.broadcast_to(row, (tau, n)).copy()

    @property
    def param_names(self) -> list:
        return [f"p:{d}" for d in range(1, len(self.p))]

    def params(self) -> np.ndarray:
        return self.p[1:].copy()

    def with_params(self, vec) -> "StationaryDelayModel":
        new = object.__new__(StationaryDelayModel)
        new.p = np.concatenate([[1.0 - np.sum(vec)], vec])
        return new

    def grad_log_prob(self, cal, tau, weights) -> np.ndarray:
        col = np.zeros(len(self.p))
        m = min(weights.shape[1], len(self.p))
        col[:m] = weights[:, :m].sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(self.p > 0, col / self.p, 0.0)
        return g[1:] - g[0]

    def jac_log_prob(self, cal, tau, t, d) -> np.ndarray:
        d = np.asarray(d)
        J = np.zeros((len(d), len(self.p)))
        with np.errstate(divide="ignore"):
            J[np.arange(len(d)), d] = np.where(self.p[d] > 0, 1.0 / self.p[d], 0.0)
            J[:, 0] -= np.where(self.p[0] > 0, 1.0 / self.p[0], 0.0)
        return J[:, 1:]

    def to_dict(self) -> dict:
        return {"kind": "stationary", "p": self.p.tolist()}


def reporting_from_dict(d):
    if d["kind"] == "stationary":
        return StationaryDelayModel(d["p"])
    week = WeekDelayModel.from_dict(d["week"])
    if d["kind"] == "matrix":
        return WeeklyReportingModel(week, IntraWeekMatrix.from_dict(d["intra"]))
    return WeeklyReportingModel(week, ReverseTimeModel.from_dict(d["intra"]))


# --------------------------------------------------------------------------
# single-value evaluation


def week_probability(model: WeekDelayModel, t: int, w: int, cal: CalendarConfig) -> float:
    return model.week_probability(t, w, cal)


def intra_week_probability(model, t: int, d: int, cal: CalendarConfig) -> float:
    return model.intra_week_probability(t, d, cal)


def cell_probability(week_model: WeekDelayModel, intra_model, t: int, d: int, cal: CalendarConfig) -> float:
    if d < 0:
        raise ValueError("delay must be >= 0")
    return week_model.week_probability(t, d // 7, cal) * intra_model.intra_week_probability(t, d, cal)


def reported_mass(model, cal: CalendarConfig, t: int, tau: int) -> float:
    """``p_t^r = sum_{d <= tau - t} p_td``."""
    if not 1 <= t <= tau:
        raise ValueError("need 1 <= t <= tau")
    grid = model.prob_matrix(cal, tau, tau)
    return float(grid[t - 1, : tau - t + 1].sum())


def tail_mass(grid: np.ndarray) -> np.ndarray:
    """``1 - sum_d p_td`` per row, clipped at 0."""
    return np.clip(1.0 - grid.sum(axis=1), 0.0, None)


# --------------------------------------------------------------------------
# M-step


def reporting_objective(model, expected: np.ndarray, remainder: np.ndarray, cal: CalendarConfig,
                        tau: int, include_censoring: bool = False) -> float:
    """``sum_{t,d<tau} E_td log p_td`` (+ ``sum_t R_t log sum_{d>=tau} p_td``)."""
    grid = model.prob_matrix(cal, tau, expected.shape[1])
    pos = expected > 0
    if np.any(grid[pos] <= 0):
        return -np.inf
    value = float(np.sum(expected[pos] * np.log(grid[pos])))
    if include_censoring:
        tail = tail_mass(grid)
        r = remainder > 0
        if np.any(tail[r] <= 0):
            return -np.inf
        value += float(np.sum(remainder[r] * np.log(tail[r])))
    return value


def week_design(cal, tau: int, covariates) -> CategoricalDesign:
    """Week-model design with levels taken from days whose first reporting week is fully observed.

    A level seen only in the last six days would be informed by a partial
    week alone and trade off against the occurrence effect of the same
    level; such days use the reference level instead.
    """
    rows = np.arange(max(tau - 6, 0))
    return CategoricalDesign.fit(occurrence_columns(cal, tau), covariates, rows=rows if len(rows) else None)


def _fit_week(spec: WeekModelSpec, cal, tau, B, surv_weight, previous: WeekDelayModel | None):
    """NB regression of reporting week on occurrence covariates, weighted by mass."""
    n_weeks = B.shape[1]
    if previous is not None:
        design = previous.design
    else:
        design = week_design(cal, tau, spec.covariates)
    X = design.matrix(occurrence_columns(cal, tau))
    groups = np.repeat(np.arange(tau), n_weeks)
    y = np.tile(np.arange(n_weeks, dtype=float), tau)
    w = B.ravel()
    censored = np.zeros(len(y), bool)
    if surv_weight is not None and np.any(surv_weight > 0):
        groups = np.concatenate([groups, np.arange(tau)])
        y = np.concatenate([y, np.full(tau, float(n_weeks))])
        w = np.concatenate([w, surv_weight])
        censored = np.concatenate([censored, np.ones(tau, bool)])
    keep = w > 0
    kw = {}
    if previous is not None:
        kw["start"] = previous.theta
        if spec.fixed_phi is None:
            kw["start_phi"] = previous.phi
    fit = fit_weighted_negbin(X, y[keep], w[keep], groups=groups[keep], phi=spec.fixed_phi,
                              censored=censored[keep], **kw)
    if fit.phi_at_cap:
        log.info("week model dispersion at cap (Poisson limit)")
    return WeekDelayModel(design, fit.coefficients, fit.dispersion, spec.w_max,
                          fixed_phi=spec.fixed_phi is not None)


def _fit_matrix(spec: MatrixReportingSpec, cal, tau, Wt, previous: IntraWeekMatrix | None):
    A = _level_totals(cal, tau, Wt)
    totals = A.sum(axis=1)
    prev = previous.P if previous is not None else np.full((7, 7), 1.0 / 7)
    P = prev.copy()
    for r in range(7):
        if totals[r] > 0:
            P[r] = A[r] / totals[r]
        else:
            warnings.warn(f"no expected counts for occurrence weekday {r + 1}; keeping previous row",
                          RuntimeWarning, stacklevel=3)
    if spec.prob_floor > 0:
        P = np.maximum(P, spec.prob_floor)
        P /= P.sum(axis=1, keepdims=True)
    return IntraWeekMatrix(P)


def _fit_reverse(spec: ReverseTimeReportingSpec, cal, tau, Wt, previous: ReverseTimeModel | None):
    W = Wt.shape[1]
    index, patterns = reverse_time_features(cal, tau, W)
    n_pat = len(patterns["dow"])
    succ = np.bincount(index.ravel(), weights=Wt[:, :, 1:].ravel(), minlength=n_pat)
    trials = np.bincount(index.ravel(), weights=np.cumsum(Wt, axis=2)[:, :, 1:].ravel(), minlength=n_pat)
    keep = trials > 0
    if previous is not None:
        design = previous.design
    else:
        design = CategoricalDesign.fit(patterns, spec.covariates, rows=np.nonzero(keep)[0])
    X = design.matrix(patterns)
    start = previous.gamma if previous is not None else None
    fit = fit_weighted_logistic(X[keep], np.minimum(succ[keep], trials[keep]), trials[keep],
                                start=start, allow_separation=True)
    if fit.separated:
        log.info("reverse-time model: separated direction, some q probabilities run to 0 or 1")
    return ReverseTimeModel(design, fit.coefficients)


def _distribute_remainder(model, cal, tau, remainder, n_weeks_ext):
    """Spread the remainder ``R_t`` over delays ``>= tau`` in proportion to ``p``.

    Returns the extended intra-week weights (tau, n_weeks_ext, 7) for d >= tau
    and the mass falling in the survival bucket (weeks >= n_weeks_ext).
    """
    grid = model.prob_matrix(cal, tau, 7 * n_weeks_ext)
    beyond = grid.copy()
    beyond[:, :tau] = 0.0
    mu = model.week.mu(cal, tau)
    surv = np.exp(nb_logsf(n_weeks_ext, mu, model.week.phi))
    tail = beyond.sum(axis=1) + surv
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(tail > 0, remainder / tail, 0.0)
    return (beyond * scale[:, None]).reshape(tau, n_weeks_ext, 7), surv * scale


def reporting_m_step(expected: np.ndarray, remainder: np.ndarray, spec, cal: CalendarConfig, tau: int,
                     include_censoring: bool = False, previous=None, max_inner: int = 25):
    """Maximise the reporting part of the complete-data objective.

    ``expected`` is the (tau, tau) grid of expected counts for d = 0..tau-1
    and ``remainder`` the expected count beyond delay tau - 1 per row.  With
    ``include_censoring`` the remainder enters through
    ``log sum_{d>=tau} p_td``; this is handled by repeatedly spreading it over
    the delays beyond the grid in proportion to the current model (a
    minorise-maximise loop that never lowers the objective).
    """
    expected = np.asarray(expected, float)
    remainder = np.asarray(remainder, float)
    if isinstance(spec, StationaryReportingSpec):
        col = expected.sum(axis=0)
        total = col.sum()
        if total <= 0:
            raise ValueError("no expected counts to estimate delay probabilities")
        return StationaryDelayModel(col / total)

    n_grid = _n_weeks(tau)
    base = np.zeros((tau, n_grid * 7))
    base[:, :tau] = expected
    base = base.reshape(tau, n_grid, 7)

    def fit_once(Wt, surv, prev):
        week = _fit_week(spec.week, cal, tau, Wt.sum(axis=2), surv, prev.week if prev else None)
        if isinstance(spec, MatrixReportingSpec):
            intra = _fit_matrix(spec, cal, tau, Wt, prev.intra if prev else None)
        else:
            intra = _fit_reverse(spec, cal, tau, Wt, prev.intra if prev else None)
        return WeeklyReportingModel(week, intra)

    model = fit_once(base, None, previous)
    if not include_censoring or not np.any(remainder > 0):
        return model

    n_ext = max(spec.week.w_max, tau // 7 + 1)
    value = reporting_objective(model, expected, remainder, cal, tau, True)
    for _ in range(max_inner):
        extra, surv = _distribute_remainder(model, cal, tau, remainder, n_ext)
        Wt = extra
        Wt[:, :n_grid, :] += base
        new = fit_once(Wt, surv, model)
        new_value = reporting_objective(new, expected, remainder, cal, tau, True)
        if new_value < value:
            break
        model, change = new, abs(new_value - value) / (abs(value) + 1.0)
        value = new_value
        if change < 1e-10:
            break
    return model


def default_reporting_start(spec, cal, tau):
    """A neutral model used when no previous model exists (for tests and tooling)."""
    if isinstance(spec, StationaryReportingSpec):
        return StationaryDelayModel(np.full(tau, 1.0 / tau))
    design = week_design(cal, tau, spec.week.covariates)
    theta = np.zeros(design.n_columns)
    week = WeekDelayModel(design, theta, spec.week.fixed_phi or 1.0, spec.week.w_max,
                          spec.week.fixed_phi is not None)
    if isinstance(spec, MatrixReportingSpec):
        return WeeklyReportingModel(week, IntraWeekMatrix(np.full((7, 7), 1.0 / 7)))
    index, patterns = reverse_time_features(cal, tau, _n_weeks(tau))
    rdesign = CategoricalDesign.fit(patterns, spec.covariates)
    return WeeklyReportingModel(week, ReverseTimeModel(rdesign, np.zeros(rdesign.n_columns)))
