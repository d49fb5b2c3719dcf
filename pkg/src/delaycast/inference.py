"""Post-fit inference: information matrices, AICcd, Cook's distances, nowcasts
and Poisson prediction intervals."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .calendar import CalendarConfig, calendar_table
from .em import CompleteCounts, JointModel, e_step, q_function
from .io import atomic_open
from .reporting import WeeklyReportingModel, tail_mass
from .triangle import RunoffTriangle

GROUPINGS = ("cell", "occurrence", "reporting_date", "week", "month")


class InferenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# numerical derivatives


def fd_steps(x: np.ndarray) -> np.ndarray:
    return np.maximum(1e-5, 1e-5 * np.abs(x))


def numerical_hessian(f, x, grad=None, steps=None) -> np.ndarray:
    """Central-difference Hessian, symmetrised as ``(H + H') / 2``.

    With ``grad`` the columns are differences of the gradient; otherwise
    second differences of ``f`` are used (exact for quadratics).
    """
    x = np.asarray(x, float)
    n = len(x)
    h = fd_steps(x) if steps is None else np.asarray(steps, float)
    H = np.empty((n, n))
    if grad is not None:
        for i in range(n):
            up, dn = x.copy(), x.copy()
            up[i] += h[i]
            dn[i] -= h[i]
            col = (np.asarray(grad(up)) - np.asarray(grad(dn))) / (2 * h[i])
            if not np.all(np.isfinite(col)):
                raise InferenceError(f"non-finite Hessian entries when perturbing coordinate {i}")
            H[:, i] = col
    else:
        f0 = f(x)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h[i]
            H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
            for j in range(i):
                ej = np.zeros(n)
                ej[j] = h[j]
                H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            if not np.all(np.isfinite(H[i, : i + 1])):
                raise InferenceError(f"non-finite Hessian entries at coordinate {i}")
    return 0.5 * (H + H.T)


# --------------------------------------------------------------------------
# gradients of the observed log-likelihood and of Q


def _occurrence_grad(model: JointModel, tri: RunoffTriangle, resid: np.ndarray) -> np.ndarray:
    if model.occurrence.saturated:
        return resid
    return model.occurrence.x(tri).T @ resid


def loglik_gradient(model: JointModel, tri: RunoffTriangle) -> np.ndarray:
    lam = model.intensity(tri)
    grid = model.probs(tri)
    mask = tri.observed_mask
    reported = np.sum(grid * mask, axis=1)
    g_occ = _occurrence_grad(model, tri, tri.reported_totals - lam * reported)
    W = np.where(mask, tri.counts - lam[:, None] * grid, 0.0)
    g_rep = model.reporting.grad_log_prob(tri.calendar, tri.tau, W)
    return np.concatenate([g_occ, g_rep])


def q_gradient(model: JointModel, counts: CompleteCounts, tri: RunoffTriangle,
               include_censoring: bool = False) -> np.ndarray:
    lam = model.intensity(tri)
    g_occ = _occurrence_grad(model, tri, counts.row_totals - lam)
    W = counts.expected.astype(float)
    if include_censoring:
        grid = model.probs(tri)
        tail = tail_mass(grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(tail > 0, counts.remainder / tail, 0.0)
        W = W - scale[:, None] * grid
    g_rep = model.reporting.grad_log_prob(tri.calendar, tri.tau, W)
    return np.concatenate([g_occ, g_rep])


@dataclass
class InformationPair:
    I_c: np.ndarray
    I_o: np.ndarray
    names: list = field(default_factory=list)

    def covariance(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.I_o)
        except np.linalg.LinAlgError as exc:
            raise InferenceError("observed information is singular; simplify the model") from exc

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance()), 0, None))


def observed_information(model: JointModel, tri: RunoffTriangle, include_censoring: bool = False,
                         counts: CompleteCounts | None = None) -> InformationPair:
    """Negative Hessians of Q (expected counts frozen at the fit) and of the log-likelihood."""
    theta = model.params()
    if not np.all(np.isfinite(theta)):
        raise InferenceError("model has non-finite parameters (boundary fit)")
    counts = e_step(model, tri) if counts is None else counts
    Ic = -numerical_hessian(None, theta, grad=lambda v: q_gradient(model.with_params(v), counts, tri,
                                                                      include_censoring))
    Io = -numerical_hessian(None, theta, grad=lambda v: loglik_gradient(model.with_params(v), tri))
    return InformationPair(Ic, Io, model.param_names)


@dataclass
class AICcd:
    value: float
    q: float
    penalty: float
    dim: int


def aiccd(model: JointModel, tri: RunoffTriangle, include_censoring: bool = False,
          info: InformationPair | None = None) -> AICcd:
    """``-2 Q(theta_hat; theta_hat) + 2 trace(I_c I_o^{-1})``."""
    counts = e_step(model, tri)
    info = info or observed_information(model, tri, include_censoring, counts)
    try:
        M = np.linalg.solve(info.I_o.T, info.I_c.T).T  # I_c I_o^{-1}
    except np.linalg.LinAlgError as exc:
        raise InferenceError("observed information is singular; simplify the model") from exc
    penalty = 2.0 * float(np.trace(M))
    q = q_function(model, counts, tri, include_censoring)
    return AICcd(-2.0 * q + penalty, q, penalty, len(model.params()))


# --------------------------------------------------------------------------
# Cook's distances


def cell_scores(model: JointModel, tri: RunoffTriangle, t: np.ndarray, d: np.ndarray,
                lam=None, grid=None) -> np.ndarray:
    """Per-cell Q-score ``(N_td - lam_t p_td) d log(lam_t p_td) / d theta``."""
    lam = model.intensity(tri) if lam is None else lam
    grid = model.probs(tri) if grid is None else grid
    t = np.asarray(t, np.int64)
    d = np.asarray(d, np.int64)
    resid = tri.counts[t - 1, d] - lam[t - 1] * grid[t - 1, d]
    if model.occurrence.saturated:
        J_occ = np.zeros((len(t), len(model.occurrence.alpha)))
        J_occ[np.arange(len(t)), t - 1] = 1.0
    else:
        J_occ = model.occurrence.x(tri)[t - 1]
    J_rep = model.reporting.jac_log_prob(tri.calendar, tri.tau, t, d)
    return resid[:, None] * np.hstack([J_occ, J_rep])


def cooks_distances(model: JointModel, tri: RunoffTriangle, info: InformationPair | None = None,
                    include_censoring: bool = False, chunk: int = 20000) -> np.ndarray:
    """Generalised Cook's distance for every observed cell; NaN elsewhere."""
    info = info or observed_information(model, tri, include_censoring)
    try:
        C = np.linalg.inv(info.I_c)
    except np.linalg.LinAlgError as exc:
        raise InferenceError("complete-data information is singular") from exc
    lam, grid = model.intensity(tri), model.probs(tri)
    ti, di = np.nonzero(tri.observed_mask)
    out = np.full((tri.tau, tri.tau), np.nan)
    for s in range(0, len(ti), chunk):
        t, d = ti[s:s + chunk] + 1, di[s:s + chunk]
        g = cell_scores(model, tri, t, d, lam, grid)
        out[t - 1, d] = np.einsum("ij,jk,ik->i", g, C, g)
    return np.clip(out, 0, None)


def cooks_distance(model: JointModel, tri: RunoffTriangle, t: int, d: int,
                   info: InformationPair | None = None) -> float:
    if t + d > tri.tau or t < 1 or d < 0:
        raise ValueError("Cook's distance is defined for observed cells only")
    info = info or observed_information(model, tri)
    g = cell_scores(model, tri, np.array([t]), np.array([d]))[0]
    try:
        return max(float(g @ np.linalg.solve(info.I_c, g)), 0.0)
    except np.linalg.LinAlgError as exc:
        raise InferenceError("complete-data information is singular") from exc


def top_cooks(distances: np.ndarray, k: int = 10) -> list:
    """``[(t, d, GD), ...]`` for the ``k`` largest distances."""
    flat = np.where(np.isfinite(distances), distances, -np.inf).ravel()
    idx = np.argsort(flat)[::-1][:k]
    n = distances.shape[1]
    return [(int(i // n) + 1, int(i % n), float(flat[i])) for i in idx if np.isfinite(flat[i])]


# --------------------------------------------------------------------------
# Poisson quantiles and intervals


def poisson_quantile(mean: float, q: float) -> int:
    """Smallest ``k`` with ``P(X <= k) >= q`` for ``X ~ Poisson(mean)``.

    The cdf is accumulated from pmf terms in log space over a window that
    holds all but a negligible part of the mass.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if mean < 0 or not np.isfinite(mean):
        raise ValueError("mean must be finite and nonnegative")
    if mean == 0:
        return 0
    if mean >= 1e6:
        return int(stats.poisson.ppf(q, mean))
    sd = np.sqrt(mean)
    lo = int(max(0, np.floor(mean - 40 * sd - 40)))
    hi = int(np.ceil(mean + 40 * sd + 40))
    k = np.arange(lo, hi + 1)
    logpmf = -mean + special.xlogy(k, mean) - special.gammaln(k + 1)
    logcdf = np.logaddexp.accumulate(logpmf)
    if lo > 0:
        # mass below the window, bounded by the pmf ratio argument
        logcdf = np.logaddexp(logcdf, float(stats.poisson.logcdf(lo - 1, mean)))
    idx = np.searchsorted(logcdf, np.log(q) - 1e-15)
    return int(k[min(idx, len(k) - 1)])


def poisson_interval(mean: float, level: float = 0.95) -> tuple[int, int]:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if mean == 0:
        return 0, 0
    a = 1.0 - level
    return poisson_quantile(mean, a / 2), poisson_quantile(mean, 1 - a / 2)


def prediction_intervals(means, level: float = 0.95, simultaneous: bool = False):
    """Equal-tailed Poisson intervals at the plug-in means.

    With ``simultaneous`` each of the ``m`` intervals uses level
    ``1 - (1 - level) / m`` (Bonferroni).
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    means = np.atleast_1d(np.asarray(means, float))
    m = len(means)
    per = 1.0 - (1.0 - level) / m if (simultaneous and m > 0) else level
    bounds = [poisson_interval(float(mu), per) for mu in means]
    lower = np.array([b[0] for b in bounds], dtype=np.int64)
    upper = np.array([b[1] for b in bounds], dtype=np.int64)
    return lower, upper


# --------------------------------------------------------------------------
# nowcasts


@dataclass
class NowcastResult:
    """Expected unreported counts under a fitted model.

    ``cell_means[t - 1, d]`` is zero on observed cells.  ``by_reporting[k]``
    refers to reporting day ``tau + 1 + k``; mass reported beyond the grid
    is kept in ``beyond_grid``.
    """

    tau: int
    calendar: CalendarConfig
    cell_means: np.ndarray
    by_occurrence: np.ndarray
    by_reporting: np.ndarray
    beyond_grid: float
    bounded_horizon: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.by_occurrence.sum())

    def total_within(self, horizon: int) -> float:
        """Expected unreported events that will be reported by day ``horizon``."""
        k = max(min(horizon - self.tau, len(self.by_reporting)), 0)
        return float(self.by_reporting[:k].sum())

    def _date(self, t) -> str:
        return self.calendar.date_of(int(t)).isoformat()

    def groups(self, grouping: str = "occurrence"):
        """``(keys, means)`` for a grouping in :data:`GROUPINGS`."""
        if grouping == "occurrence":
            return [self._date(t) for t in range(1, self.tau + 1)], self.by_occurrence.copy()
        if grouping == "cell":
            ti, di = np.nonzero(self.cell_means > 0)
            keys = [f"{self._date(t + 1)}+{d}" for t, d in zip(ti, di)]
            return keys, self.cell_means[ti, di]
        days = np.arange(self.tau + 1, self.tau + 1 + len(self.by_reporting))
        if grouping == "reporting_date":
            return [self._date(r) for r in days], self.by_reporting.copy()
        if grouping == "week":
            block = (days - self.tau - 1) // 7
            sums = np.bincount(block, weights=self.by_reporting)
            return [self._date(self.tau + 1 + 7 * b) for b in range(len(sums))], sums
        if grouping == "month":
            tab = calendar_table(self.calendar, int(days[-1]) if len(days) else self.tau)
            month_key = tab.dates[days - 1].astype("datetime64[M]")
            uniq, inv = np.unique(month_key, return_inverse=True)
            return [str(u) for u in uniq], np.bincount(inv, weights=self.by_reporting)
        raise ValueError(f"unknown grouping {grouping!r}; choose from {GROUPINGS}")

    def intervals(self, grouping: str = "occurrence", level: float = 0.95, simultaneous: bool = False):
        keys, means = self.groups(grouping)
        lower, upper = prediction_intervals(means, level, simultaneous)
        return keys, means, lower, upper

    def total_interval(self, level: float = 0.95) -> tuple[int, int]:
        return poisson_interval(self.total, level)

    def write_csv(self, path, grouping="occurrence", level=0.95, simultaneous=True) -> None:
        keys, means, lower, upper = self.intervals(grouping, level, simultaneous)
        with atomic_open(path) as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["group_key", "mean", "lower", "upper"])
            for k, m, lo, hi in zip(keys, means, lower, upper):
                out.writerow([k, f"{m:.6f}", int(lo), int(hi)])

    def write_json(self, path, grouping="occurrence", level=0.95, simultaneous=True) -> None:
        keys, means, lower, upper = self.intervals(grouping, level, simultaneous)
        lo_t, hi_t = self.total_interval(level)
        doc = {
            "meta": {**self.meta, "tau": self.tau, "level": level, "grouping": grouping,
                     "simultaneous": simultaneous, "bounded_horizon": self.bounded_horizon},
            "total": {"mean": self.total, "lower": lo_t, "upper": hi_t, "beyond_grid": self.beyond_grid},
            "groups": [{"group_key": k, "mean": float(m), "lower": int(lo), "upper": int(hi)}
                       for k, m, lo, hi in zip(keys, means, lower, upper)],
        }
        with atomic_open(path, newline=None) as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


def nowcast_from_means(lam: np.ndarray, grid: np.ndarray, tri: RunoffTriangle, unreported_mass=None,
                       bounded_horizon: bool = False) -> NowcastResult:
    """Assemble a nowcast from intensities and a (tau, n) probability grid."""
    tau = tri.tau
    n = grid.shape[1]
    i = np.arange(tau)[:, None]
    d = np.arange(n)[None, :]
    lower = i + d > tau - 1
    cells = np.where(lower, lam[:, None] * grid, 0.0)
    if unreported_mass is None:
        by_occ = cells.sum(axis=1)
    else:
        by_occ = lam * unreported_mass
    # reporting day tau + 1 + k for cell (i, d): k = i + d - tau
    k = (i + d - tau)
    by_rep = np.bincount(k[lower], weights=cells[lower], minlength=n)[:n]
    beyond = float(by_occ.sum() - by_rep.sum())
    return NowcastResult(tau, tri.calendar, cells, by_occ, by_rep, max(beyond, 0.0), bounded_horizon)


def nowcast(model: JointModel, tri: RunoffTriangle, max_delay: int | None = None) -> NowcastResult:
    """Expected IBNR counts ``lam_t p_td`` for unreported cells.

    ``by_occurrence`` uses the full unreported mass ``1 - p_t^r``; cells and
    reporting-date sums are materialised up to ``max_delay`` days (default
    ``max(tau, 7 * w_max)`` for weekly models, ``tau`` for stationary ones).
    """
    tau = tri.tau
    weekly = isinstance(model.reporting, WeeklyReportingModel)
    if max_delay is None:
        max_delay = max(tau, 7 * model.reporting.week.w_max) if weekly else tau
    lam = model.intensity(tri)
    grid = model.probs(tri, max_delay)
    reported = np.sum(grid[:, :tau] * tri.observed_mask, axis=1)
    unrep = np.clip(1.0 - reported, 0.0, None) if weekly else None
    res = nowcast_from_means(lam, grid, tri, unrep, bounded_horizon=not weekly)
    res.meta["max_delay"] = max_delay
    return res
