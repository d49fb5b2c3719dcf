"""Chain ladder on daily and yearly grids."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .triangle import RunoffTriangle, cumulative_counts

log = logging.getLogger(__name__)


def development_factors(tri: RunoffTriangle) -> np.ndarray:
    """Factors ``f_1 .. f_{tau-1}``; position 0 of the returned array holds ``f_1``.

    ``f_d = sum_{t <= tau-d} C_td / sum_{t <= tau-d} C_{t,d-1}``.  Columns with
    a zero denominator carry no information and get factor 1.
    """
    tau = tri.tau
    if tau == 1:
        return np.zeros(0)
    C = cumulative_counts(tri).astype(float)
    mask = tri.observed_mask
    num = (C * mask).sum(axis=0)[1:]
    den = (np.roll(C, 1, axis=1) * mask).sum(axis=0)[1:]
    zero = den <= 0
    if zero.all():
        warnings.warn("all development-factor denominators are zero; using factors of 1",
                      RuntimeWarning, stacklevel=2)
    elif zero.any():
        warnings.warn(f"zero denominators at delays {(np.nonzero(zero)[0] + 1).tolist()[:10]}; "
                      "factor set to 1", RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, 1.0, num / np.where(zero, 1.0, den))


def cl_forecast(tri: RunoffTriangle, f=None) -> np.ndarray:
    """Incremental chain-ladder forecasts on the lower triangle (d <= tau - 1).

    ``C_hat_{t,d} = C_{t,tau-t} f_{tau-t+1} ... f_d``, differenced over d.
    Observed cells are zero in the returned grid.
    """
    tau = tri.tau
    f = development_factors(tri) if f is None else np.asarray(f, float)
    logf = np.concatenate([[0.0], np.cumsum(np.log(f))])  # log prod_{k<=d} f_k
    C = cumulative_counts(tri).astype(float)
    last = tau - 1 - np.arange(tau)  # latest observed delay per row
    anchor = C[np.arange(tau), last]
    cum_hat = anchor[:, None] * np.exp(logf[None, :] - logf[last][:, None])
    lower = ~tri.observed_mask
    cum_full = np.where(lower, cum_hat, C)
    inc = np.diff(np.concatenate([np.zeros((tau, 1)), cum_full], axis=1), axis=1)
    out = np.where(lower, inc, 0.0)
    out[anchor == 0] = 0.0
    return out


def marginal_residuals(tri: RunoffTriangle, lam, p) -> tuple[np.ndarray, np.ndarray]:
    """Relative residuals of the Poisson chain-ladder score equations.

    Row equations ``sum_{d<=tau-t} lam_t p_d = N_t^r`` and column equations
    ``sum_{t<=tau-d} lam_t p_d = sum_t N_td``.
    """
    mask = tri.observed_mask
    fitted = np.asarray(lam)[:, None] * np.asarray(p)[None, : tri.tau] * mask
    rows = tri.counts.sum(axis=1)
    cols = tri.counts.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(fitted.sum(axis=1) - rows) / np.maximum(rows, 1e-300)
        c = np.abs(fitted.sum(axis=0) - cols) / np.maximum(cols, 1e-300)
    return np.where(rows > 0, r, np.abs(fitted.sum(axis=1))), np.where(cols > 0, c, np.abs(fitted.sum(axis=0)))


def fit_cl_em(tri: RunoffTriangle, max_iter: int = 500):
    """Chain ladder as an EM fit: saturated occurrence, stationary delays.

    Returns ``(lam, p, result)``.  From the development-factor start the EM
    is at its fixed point after one M-step.
    """
    from .em import EMOptions, OccurrenceSpec, fit_em
    from .reporting import StationaryReportingSpec

    res = fit_em(tri, OccurrenceSpec(saturated=True), StationaryReportingSpec(), EMOptions(max_iter=max_iter))
    return res.model.intensity(tri), res.model.reporting.p, res


@dataclass
class YearlyChainLadder:
    """Chain ladder fitted on a grid of occurrence periods x reporting-period lags.

    Attributes
    ----------
    starts : array
        First day of each period (1-based, possibly < 1 for a short first period).
    lam, p : arrays
        Period intensities and lag probabilities.
    short_period : bool
        True when a period is shorter than the others (oldest period cut off by
        the start of the data, or an incomplete last period with explicit starts).
    """

    tau: int
    starts: np.ndarray
    lengths: np.ndarray
    lam: np.ndarray
    p: np.ndarray
    counts: np.ndarray
    short_period: bool
    period_len: int = 365

    @property
    def n_periods(self) -> int:
        return len(self.starts)

    def period_of(self, days) -> np.ndarray:
        """Period index of day(s) ``days`` (future days continue the grid)."""
        days = np.asarray(days)
        L = self.period_len
        last_start = self.starts[-1]
        idx = np.searchsorted(self.starts, days, side="right") - 1
        beyond = days >= last_start
        idx = np.where(beyond, self.n_periods - 1 + (days - last_start) // L, idx)
        return np.maximum(idx, 0)

    def cell_nowcast(self) -> np.ndarray:
        """Expected unreported counts per (period, lag); observed cells are 0."""
        P = self.n_periods
        i = np.arange(P)[:, None]
        k = np.arange(P)[None, :]
        return np.where(i + k > P - 1, self.lam[:, None] * self.p[None, :], 0.0)

    def daily_by_occurrence(self) -> np.ndarray:
        """Unreported counts per occurrence day 1..tau, spread evenly over each period."""
        per_period = self.cell_nowcast().sum(axis=1)
        t = np.arange(1, self.tau + 1)
        idx = self.period_of(t)
        n_in = np.bincount(idx, minlength=self.n_periods)
        return per_period[idx] / n_in[idx]

    def daily_by_reporting(self, horizon: int) -> np.ndarray:
        """Unreported counts per reporting day tau+1..horizon, uniform within periods."""
        cells = self.cell_nowcast()
        P = self.n_periods
        L = int(self.period_len)
        out = np.zeros(max(horizon - self.tau, 0))
        for i in range(P):
            for k in range(P - i, P):
                r_period = i + k  # future period index >= P
                first = self.tau + 1 + (r_period - P) * L
                lo, hi = first - self.tau - 1, first - self.tau - 1 + L
                if lo >= len(out):
                    continue
                out[lo: min(hi, len(out))] += cells[i, k] / L
        return out


def fit_yearly_cl(tri: RunoffTriangle, period_days: int = 365, starts=None) -> YearlyChainLadder:
    """Chain ladder on periods of ``period_days`` days anchored at ``tau``.

    The most recent period ends on ``tau`` so every diagonal of the yearly
    triangle is complete; the oldest period may be short and is flagged.
    Explicit period ``starts`` (1-based first days, increasing, first == 1)
    override the anchoring; an incomplete last period is then flagged
    instead, and days after ``tau`` continue in steps of ``period_days``.
    """
    tau = tri.tau
    if starts is None:
        if tau < period_days:
            raise ValueError("the triangle must span at least one full period")
        n = -(-tau // period_days)
        starts = tau + 1 - period_days * np.arange(n, 0, -1)
        short_period = starts[0] < 1
        lengths = np.full(n, period_days)
        lengths[0] = period_days + min(starts[0] - 1, 0)
        starts = np.maximum(starts, 1)
    else:
        starts = np.asarray(starts, np.int64)
        if starts[0] != 1 or np.any(np.diff(starts) <= 0):
            raise ValueError("period starts must begin at 1 and increase")
        bounds = np.append(starts, tau + 1)
        lengths = np.diff(bounds)
        short_period = False
        if lengths[-1] < lengths[:-1].max(initial=lengths[-1]):
            short_period = True  # flags an incomplete trailing period here
    P = len(starts)
    model = YearlyChainLadder(tau, starts, lengths, np.zeros(P), np.zeros(P), np.zeros((P, P), np.int64),
                              bool(short_period), int(period_days))
    t_idx = np.arange(tau)
    d_idx = np.arange(tau)
    occ_p = model.period_of(t_idx + 1)
    rep_p = model.period_of(t_idx[:, None] + d_idx[None, :] + 1)
    lag = rep_p - occ_p[:, None]
    obs = tri.observed_mask
    Y = np.zeros((P, P), np.int64)
    np.add.at(Y, (np.broadcast_to(occ_p[:, None], lag.shape)[obs], lag[obs]), tri.counts[obs])
    model.counts = Y
    ytri = RunoffTriangle(Y)
    lam, p, _ = fit_cl_em(ytri)
    model.lam, model.p = lam, p
    if model.short_period:
        log.info("a period is shorter than a full period (short exposure)")
    return model
