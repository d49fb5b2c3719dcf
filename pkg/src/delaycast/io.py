"""CSV/JSON file formats and atomic output writes."""
from __future__ import annotations

import contextlib
import csv
import datetime as dt
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .calendar import CalendarConfig, calendar_table
from .triangle import events_to_array, monthly_to_daily_exposure


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", newline: str | None = ""):
    """Write to a temporary file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, doc) -> None:
    with atomic_open(path, newline=None) as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def stable_hash(doc) -> str:
    """Short sha256 of the canonical JSON encoding of ``doc``."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# events


def read_event_dates(path) -> list[tuple[dt.date, dt.date]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"occurrence_date", "report_date"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            try:
                occ = dt.date.fromisoformat(row["occurrence_date"].strip())
                rep = dt.date.fromisoformat(row["report_date"].strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{i}: bad date ({exc})") from None
            if rep < occ:
                raise ValueError(f"{path}:{i}: report date {rep} precedes occurrence date {occ}")
            rows.append((occ, rep))
    return rows


def read_events(path, calendar: CalendarConfig) -> np.ndarray:
    """Events as an ``(n, 2)`` array of ``(t, d)`` relative to the calendar epoch."""
    rows = read_event_dates(path)
    epoch = calendar.epoch_date
    arr = np.array([((o - epoch).days + 1, (r - o).days) for o, r in rows], dtype=np.int64).reshape(-1, 2)
    if len(arr) and arr[:, 0].min() < 1:
        raise ValueError(f"{path}: events occur before the calendar epoch {epoch}")
    return arr


def write_events(path, events, calendar: CalendarConfig) -> None:
    arr = events_to_array(events)
    arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    n = int((arr[:, 0] + arr[:, 1]).max(initial=1))
    dates = calendar_table(calendar, n + 1).dates
    with atomic_open(path) as fh:
        out = csv.writer(fh)
        out.writerow(["occurrence_date", "report_date"])
        for t, d in arr:
            out.writerow([str(dates[t - 1]), str(dates[t + d - 1])])


# --------------------------------------------------------------------------
# exposure


def read_exposure(path, calendar: CalendarConfig, tau: int) -> np.ndarray:
    """Daily exposure for days ``1 .. tau`` from monthly earned exposure."""
    months, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"month", "earned_exposure"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            v = float(row["earned_exposure"])
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{path}:{i}: exposure must be a nonnegative number")
            months.append(row["month"].strip())
            values.append(v)
    daily = monthly_to_daily_exposure(months, values, calendar, tau)
    if np.any(daily <= 0):
        raise ValueError(f"{path}: exposure must be positive on every day up to the evaluation date")
    return daily


def write_exposure(path, daily, calendar: CalendarConfig) -> None:
    """Monthly totals of a daily exposure series (partial months are scaled to full months)."""
    daily = np.asarray(daily, float)
    tab = calendar_table(calendar, len(daily))
    ym = tab.dates[: len(daily)].astype("datetime64[M]")
    keys, inv = np.unique(ym, return_inverse=True)
    sums = np.bincount(inv, weights=daily)
    counts = np.bincount(inv)
    with atomic_open(path) as fh:
        out = csv.writer(fh)
        out.writerow(["month", "earned_exposure"])
        for k, s, c in zip(keys, sums, counts):
            n_days = int(((k + 1).astype("datetime64[D]") - k.astype("datetime64[D]")).astype(int))
            out.writerow([str(k), repr(float(s / c * n_days))])
