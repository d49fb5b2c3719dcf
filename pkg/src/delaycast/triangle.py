"""Daily run-off triangles built from individual event records."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .calendar import CalendarConfig, CalendarTable, calendar_table


@dataclass(frozen=True)
class EventRecord:
    t: int  # occurrence day, 1-based
    d: int  # reporting delay in days

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"occurrence day must be >= 1, got {self.t}")
        if self.d < 0:
            raise ValueError(f"delay must be >= 0, got {self.d}")

    @property
    def report_day(self) -> int:
        return self.t + self.d


def events_to_array(events) -> np.ndarray:
    """(n, 2) integer array of (t, d) from records, tuples or an array."""
    if isinstance(events, np.ndarray):
        arr = np.asarray(events, dtype=np.int64).reshape(-1, 2)
    else:
        arr = np.array([(e.t, e.d) if isinstance(e, EventRecord) else tuple(e) for e in events],
                       dtype=np.int64).reshape(-1, 2)
    if len(arr) and (arr[:, 0].min() < 1 or arr[:, 1].min() < 0):
        raise ValueError("events need t >= 1 and d >= 0")
    return arr


class RunoffTriangle:
    """Counts ``N_td`` observed up to evaluation day ``tau``.

    Counts are held in a dense ``tau x tau`` array indexed ``[t - 1, d]``;
    cells with ``t + d > tau`` are unobserved and always zero.

    Parameters
    ----------
    counts : array (tau, tau)
    exposure : array (tau,)
        Strictly positive exposure per occurrence day.
    calendar : CalendarConfig
    """

    def __init__(self, counts, exposure=None, calendar: CalendarConfig | None = None):
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("counts must be a square tau x tau array")
        tau = counts.shape[0]
        if tau < 1:
            raise ValueError("tau must be >= 1")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        mask = self.observed_mask_for(tau)
        if np.any(counts[~mask] != 0):
            raise ValueError("counts present in unobserved cells (t + d > tau)")
        exposure = np.ones(tau) if exposure is None else np.array(exposure, dtype=float)
        if exposure.shape != (tau,):
            raise ValueError(f"exposure must have length tau={tau}")
        if not np.all(np.isfinite(exposure)) or np.any(exposure <= 0):
            bad = np.nonzero(~(exposure > 0))[0][:5] + 1
            raise ValueError(f"exposure must be strictly positive; offending days {bad.tolist()}")
        counts.setflags(write=False)
        exposure.setflags(write=False)
        self.counts = counts
        self.exposure = exposure
        self.calendar = calendar or CalendarConfig()
        self.tau = tau

    @staticmethod
    def observed_mask_for(tau: int) -> np.ndarray:
        i = np.arange(tau)
        return (i[:, None] + i[None, :]) <= tau - 1

    @property
    def observed_mask(self) -> np.ndarray:
        return self.observed_mask_for(self.tau)

    @property
    def reported_totals(self) -> np.ndarray:
        """``N_t^r`` for t = 1..tau."""
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def log_exposure(self) -> np.ndarray:
        return np.log(self.exposure)

    def table(self, n_days: int | None = None) -> CalendarTable:
        """Calendar features covering at least ``n_days`` days (default ``2 * tau``)."""
        return calendar_table(self.calendar, n_days or 2 * self.tau + 8)

    def cell(self, t: int, d: int) -> int:
        if t < 1 or d < 0 or t + d > self.tau:
            raise KeyError(f"cell ({t}, {d}) is not observed at tau={self.tau}")
        return int(self.counts[t - 1, d])

    def items(self):
        """Nonzero observed cells as ``((t, d), count)`` pairs."""
        rows, cols = np.nonzero(self.counts)
        for i, d in zip(rows, cols):
            yield (int(i) + 1, int(d)), int(self.counts[i, d])

    def restrict(self, tau_star: int) -> "RunoffTriangle":
        """The triangle as it would have been observed at ``tau_star <= tau``."""
        if not 1 <= tau_star <= self.tau:
            raise ValueError("tau_star must lie in 1..tau")
        sub = self.counts[:tau_star, :tau_star] * self.observed_mask_for(tau_star)
        return RunoffTriangle(sub, self.exposure[:tau_star], self.calendar)

    def __repr__(self):
        return f"RunoffTriangle(tau={self.tau}, reported={self.total})"


def aggregate_events(events, tau: int, exposure=None, calendar: CalendarConfig | None = None,
                     allow_future: bool = False) -> RunoffTriangle:
    """Tally events into the triangle observed at ``tau``.

    Events reported after ``tau`` are dropped (they are the IBNR set).
    Events occurring after ``tau`` raise unless ``allow_future`` is set, in
    which case they are dropped as well.
    """
    arr = events_to_array(events)
    if len(arr) and arr[:, 0].max() > tau and not allow_future:
        raise ValueError(f"event with occurrence day {arr[:, 0].max()} > tau={tau}")
    t, d = arr[:, 0], arr[:, 1]
    keep = t + d <= tau
    counts = np.zeros((tau, tau), dtype=np.int64)
    np.add.at(counts, (t[keep] - 1, d[keep]), 1)
    return RunoffTriangle(counts, exposure, calendar)


def cumulative_counts(tri: RunoffTriangle) -> np.ndarray:
    """``C_td = sum_{j <= d} N_tj`` on observed cells; unobserved cells are 0."""
    return np.cumsum(tri.counts, axis=1) * tri.observed_mask


def observed_ibnr_split(tau: int, horizon: int) -> tuple[list, list]:
    """Observed and unreported cell sets ``(t, d)`` with delays up to ``horizon``."""
    if horizon < tau - 1:
        raise ValueError("delay horizon must be >= tau - 1")
    observed = [(t, d) for t in range(1, tau + 1) for d in range(0, tau - t + 1)]
    unreported = [(t, d) for t in range(1, tau + 1) for d in range(tau - t + 1, horizon + 1)]
    return observed, unreported


def monthly_to_daily_exposure(months: Sequence[str], values: Sequence[float],
                              calendar: CalendarConfig, tau: int) -> np.ndarray:
    """Spread monthly earned exposure evenly over the days of each month."""
    per_month = {}
    for m, v in zip(months, values):
        y, mm = (int(x) for x in m.split("-"))
        per_month[(y, mm)] = float(v)
    tab = calendar_table(calendar, tau)
    dates = tab.dates[:tau]
    ym = dates.astype("datetime64[M]")
    years = ym.astype(np.int64) // 12 + 1970
    out = np.empty(tau)
    for i in range(tau):
        key = (int(years[i]), int(tab.month[i]))
        if key not in per_month:
            raise ValueError(f"no exposure for month {key[0]}-{key[1]:02d}")
        start = ym[i]
        n_days = int(((start + 1).astype("datetime64[D]") - start.astype("datetime64[D]")).astype(int))
        out[i] = per_month[key] / n_days
    return out


def ibnr_counts(events, tau: int, horizon: int | None = None) -> np.ndarray:
    """Unreported events per occurrence day at ``tau`` (optionally reported by ``horizon``)."""
    arr = events_to_array(events)
    t, d = arr[:, 0], arr[:, 1]
    late = (t <= tau) & (t + d > tau)
    if horizon is not None:
        late &= t + d <= horizon
    return np.bincount(t[late] - 1, minlength=tau)[:tau]


def iter_events(counts_by_cell: Iterable[tuple[tuple[int, int], int]]):
    """Expand ``((t, d), n)`` pairs back into event records."""
    for (t, d), n in counts_by_cell:
        for _ in range(n):
            yield EventRecord(t, d)
