"""Calendar arithmetic on the daily grid.

Day index ``t = 1`` maps to ``CalendarConfig.epoch_date``.  Everything here is
pure and works on immutable inputs, so tables can be cached and shared.
"""
from __future__ import annotations

import csv
import os
import datetime as dt
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

HOLIDAY_CLASSES = ("none", "national", "unofficial")
WDAY_LEVELS = ("wday1", "wday2", "wday3", "wday4", "wday5", "Saturday", "Sunday")
DOW_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")

SATURDAY = 6
SUNDAY = 7


@dataclass(frozen=True)
class CalendarConfig:
    """Maps day indices to dates and flags holidays.

    Parameters
    ----------
    epoch_date : datetime.date
        Date of day ``t = 1``.
    holidays : frozenset of date
        National holidays (all companies closed).
    unofficial_holidays : frozenset of date
        Unofficial holidays such as New Year's Eve or Good Friday.
    """

    epoch_date: dt.date = dt.date(2000, 1, 1)
    holidays: frozenset = field(default_factory=frozenset)
    unofficial_holidays: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.epoch_date, dt.date):
            raise TypeError("epoch_date must be a datetime.date")
        object.__setattr__(self, "holidays", frozenset(self.holidays))
        object.__setattr__(self, "unofficial_holidays", frozenset(self.unofficial_holidays))
        overlap = self.holidays & self.unofficial_holidays
        if overlap:
            raise ValueError(f"dates flagged both national and unofficial: {sorted(overlap)}")

    def date_of(self, t: int) -> dt.date:
        if t < 1:
            raise ValueError(f"day index must be >= 1, got {t}")
        try:
            return self.epoch_date + dt.timedelta(days=int(t) - 1)
        except OverflowError as exc:
            raise OverflowError(f"day index {t} overflows the representable date range") from exc

    def day_of(self, date: dt.date) -> int:
        """Inverse of :meth:`date_of`."""
        return (date - self.epoch_date).days + 1

    def holiday_class(self, date: dt.date) -> str:
        if date in self.holidays:
            return "national"
        if date in self.unofficial_holidays:
            return "unofficial"
        return "none"


@dataclass(frozen=True)
class DayFeatures:
    dow: int
    dom: int
    month: int
    is_jan1: bool
    is_dec31: bool
    holiday_class: str


def day_features(t: int, cal: CalendarConfig) -> DayFeatures:
    """Categorical encodings of day ``t`` (Monday is ``dow == 1``)."""
    date = cal.date_of(t)
    return DayFeatures(
        dow=date.isoweekday(),
        dom=date.day,
        month=date.month,
        is_jan1=(date.month == 1 and date.day == 1),
        is_dec31=(date.month == 12 and date.day == 31),
        holiday_class=cal.holiday_class(date),
    )


def _wday_table() -> np.ndarray:
    # table[dow - 1, offset] -> level index into WDAY_LEVELS
    table = np.empty((7, 7), dtype=np.int64)
    for dow in range(1, 8):
        working = 0
        for offset in range(7):
            day = (dow - 1 + offset) % 7 + 1
            if day == SATURDAY:
                table[dow - 1, offset] = 5
            elif day == SUNDAY:
                table[dow - 1, offset] = 6
            else:
                table[dow - 1, offset] = working
                working += 1
    return table


WDAY_TABLE = _wday_table()
WDAY_TABLE.setflags(write=False)


def wday_level(t: int, r: int, cal: CalendarConfig) -> str:
    """Within-week reporting level of reporting day ``r`` for occurrence day ``t``.

    Weekend days get their own level; the remaining days of ``[t, t + 6]`` are
    numbered ``wday1`` .. ``wday5`` chronologically, starting at ``t`` itself.
    """
    offset = r - t
    if offset < 0:
        raise ValueError("reporting day precedes occurrence day")
    if offset >= 7:
        raise ValueError("wday_level is only defined within the first week (r - t < 7)")
    dow = cal.date_of(t).isoweekday()
    return WDAY_LEVELS[WDAY_TABLE[dow - 1, offset]]


def is_working_day(date: dt.date, cal: CalendarConfig) -> bool:
    return date.isoweekday() < SATURDAY and cal.holiday_class(date) == "none"


def workdays_between(t: int, r: int, cal: CalendarConfig) -> int:
    """Working days elapsed in the current reporting week of ``r``.

    The reporting week starts at ``s = t + 7 * floor((r - t) / 7)``; days in
    ``(s, r]`` that are neither weekend days nor holidays are counted.
    """
    if r < t:
        raise ValueError("reporting day precedes occurrence day")
    start = t + 7 * ((r - t) // 7)
    return sum(is_working_day(cal.date_of(u), cal) for u in range(start + 1, r + 1))


class CalendarTable:
    """Vectorised day features for days ``1 .. n_days``.

    Arrays are indexed by ``t - 1``.
    """

    def __init__(self, cal: CalendarConfig, n_days: int):
        if n_days < 1:
            raise ValueError("n_days must be positive")
        self.cal = cal
        self.n_days = int(n_days)
        epoch = np.datetime64(cal.epoch_date, "D")
        dates = epoch + np.arange(self.n_days)
        days = dates.astype(np.int64)
        months = dates.astype("datetime64[M]")
        self.dates = dates
        self.dow = (days + 3) % 7 + 1
        self.month = months.astype(np.int64) % 12 + 1
        self.dom = (dates - months.astype("datetime64[D]")).astype(np.int64) + 1
        self.jan1 = ((self.month == 1) & (self.dom == 1)).astype(np.int64)
        self.dec31 = ((self.month == 12) & (self.dom == 31)).astype(np.int64)
        hol = np.zeros(self.n_days, dtype=np.int64)
        if cal.holidays:
            hol[np.isin(dates, np.array(sorted(cal.holidays), dtype="datetime64[D]"))] = 1
        if cal.unofficial_holidays:
            hol[np.isin(dates, np.array(sorted(cal.unofficial_holidays), dtype="datetime64[D]"))] = 2
        self.holiday = hol
        self.working = ((self.dow < SATURDAY) & (hol == 0)).astype(np.int64)
        # cumulative working-day count, cum_working[k] = working days among days 1..k
        self.cum_working = np.concatenate([[0], np.cumsum(self.working)])
        for arr in (self.dow, self.month, self.dom, self.jan1, self.dec31, self.holiday,
                    self.working, self.cum_working):
            arr.setflags(write=False)

    def columns(self, days: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Feature columns for the given 1-based day indices (default: all)."""
        idx = slice(None) if days is None else np.asarray(days) - 1
        return {
            "dow": self.dow[idx],
            "dom": self.dom[idx],
            "month": self.month[idx],
            "jan1": self.jan1[idx],
            "dec31": self.dec31[idx],
            "holiday": self.holiday[idx],
        }

    def workdays(self, t: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Vectorised :func:`workdays_between` for reporting day ``t + d``."""
        t = np.asarray(t)
        d = np.asarray(d)
        start = t + 7 * (d // 7)
        return self.cum_working[t + d] - self.cum_working[start]


@lru_cache(maxsize=32)
def _cached_table(cal: CalendarConfig, n_days: int) -> CalendarTable:
    return CalendarTable(cal, n_days)


def calendar_table(cal: CalendarConfig, n_days: int) -> CalendarTable:
    """Cached :class:`CalendarTable` covering at least ``n_days`` days."""
    # round up so that nearby requests share one table
    size = max(64, int(2 ** np.ceil(np.log2(max(n_days, 1)))))
    return _cached_table(cal, size)


def read_holidays(path, epoch_date: dt.date = dt.date(2000, 1, 1)) -> CalendarConfig:
    """Build a calendar from a CSV with columns ``date`` and ``class``."""
    national, unofficial = set(), set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            date = dt.date.fromisoformat(row["date"].strip())
            kind = row["class"].strip().lower()
            if kind == "national":
                national.add(date)
            elif kind == "unofficial":
                unofficial.add(date)
            else:
                raise ValueError(f"unknown holiday class {kind!r} for {date}")
    return CalendarConfig(epoch_date, frozenset(national), frozenset(unofficial))


def write_holidays(cal: CalendarConfig, path_or_file) -> None:
    """Write the holiday CSV to a path or an open text file."""
    rows = [(d, "national") for d in cal.holidays] + [(d, "unofficial") for d in cal.unofficial_holidays]
    fh = open(path_or_file, "w", newline="") if isinstance(path_or_file, (str, os.PathLike)) else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "class"])
        for date, kind in sorted(rows):
            writer.writerow([date.isoformat(), kind])
    finally:
        if fh is not path_or_file:
            fh.close()


def easter_sunday(year: int) -> dt.date:
    """Gregorian Easter (anonymous algorithm)."""
    a = year % 19
    b, c = divmod(year, 100)
    d, e = divmod(b, 4)
    f = (b + 8) // 25
    g = (b - f + 1) // 3
    h = (19 * a + b - d - g + 15) % 30
    i, k = divmod(c, 4)
    l = (32 + 2 * e + 2 * i - h - k) % 7
    m = (a + 11 * h + 22 * l) // 451
    month, day = divmod(h + l - 7 * m + 114, 31)
    return dt.date(year, month, day + 1)


def example_holidays(years: Iterable[int]) -> tuple[frozenset, frozenset]:
    """A generic western-European holiday set for synthetic scenarios.

    National: New Year, Easter Monday, Labour Day, Ascension, Whit Monday,
    Assumption, All Saints, Armistice, Christmas.  Unofficial: New Year's
    Eve and Good Friday.
    """
    national, unofficial = set(), set()
    for y in years:
        easter = easter_sunday(y)
        national.update({
            dt.date(y, 1, 1), easter + dt.timedelta(days=1), dt.date(y, 5, 1),
            easter + dt.timedelta(days=39), easter + dt.timedelta(days=50),
            dt.date(y, 8, 15), dt.date(y, 11, 1), dt.date(y, 11, 11), dt.date(y, 12, 25),
        })
        unofficial.update({dt.date(y, 12, 31), easter - dt.timedelta(days=2)})
    return frozenset(national), frozenset(unofficial - national)
