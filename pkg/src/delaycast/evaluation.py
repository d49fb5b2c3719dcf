"""Out-of-time evaluation: true IBNR from full data and moving-window backtests."""
from __future__ import annotations

import csv
import io as _io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .calendar import CalendarConfig
from .inference import poisson_interval
from .specs import FitOptions, fit_spec, resolve_specs
from .triangle import aggregate_events, events_to_array

log = logging.getLogger(__name__)

CSV_COLUMNS = ("eval_date", "spec_name", "actual", "predicted", "lower", "upper", "covered",
               "fit_seconds", "horizon", "error")
TIMING_COLUMNS = ("fit_seconds",)


def actual_ibnr(events, tau_star: int, horizon: int | None = None) -> int:
    """Events with ``t <= tau_star < t + d`` (and ``t + d <= horizon`` if given)."""
    arr = events_to_array(events)
    t, r = arr[:, 0], arr[:, 0] + arr[:, 1]
    late = (t <= tau_star) & (r > tau_star)
    if horizon is not None:
        late &= r <= horizon
    return int(late.sum())


def observed_count(events, tau_star: int) -> int:
    arr = events_to_array(events)
    return int(np.sum(arr[:, 0] + arr[:, 1] <= tau_star))


@dataclass
class BacktestRow:
    eval_date: str
    tau_star: int
    spec_name: str
    actual: int
    predicted: float
    lower: int
    upper: int
    covered: bool
    fit_seconds: float
    horizon: int
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _evaluate_date(args) -> list:
    events, exposure, calendar, tau_star, specs, horizon, level, options = args
    arr = events_to_array(events)
    arr = arr[arr[:, 0] <= tau_star]
    actual = actual_ibnr(arr, tau_star, horizon)
    date = calendar.date_of(tau_star).isoformat()
    rows = []
    try:
        tri = aggregate_events(arr, tau_star, None if exposure is None else exposure[:tau_star], calendar)
    except ValueError as exc:
        return [BacktestRow(date, tau_star, s, actual, math.nan, 0, 0, False, 0.0, horizon, str(exc))
                for s in specs]
    for name in specs:
        try:
            if tri.total == 0:
                raise ValueError("no observed events at this evaluation date")
            fitted = fit_spec(name, tri, options)
            pred = fitted.nowcast.total_within(horizon)
            lo, hi = poisson_interval(pred, level)
            rows.append(BacktestRow(date, tau_star, name, actual, pred, lo, hi, bool(lo <= actual <= hi),
                                    fitted.seconds, horizon))
        except Exception as exc:  # recorded per date, evaluation continues
            log.warning("backtest %s at %s failed: %s", name, date, exc)
            rows.append(BacktestRow(date, tau_star, name, actual, math.nan, 0, 0, False, 0.0, horizon,
                                    f"{type(exc).__name__}: {exc}"))
    return rows


def moving_window(events, exposure, calendar: CalendarConfig, specs, start: int, end: int, step: int = 1,
                  horizon: int | None = None, level: float = 0.95, options: FitOptions = FitOptions(),
                  workers: int = 1) -> list:
    """Refit every spec at each evaluation day ``start, start + step, .., <= end``.

    The triangle at ``tau*`` is rebuilt from events with ``t + d <= tau*``.
    Ground truth counts events reported after ``tau*`` and by ``horizon``
    (default: the last reporting day in ``events``).  Rows come back in date
    order, then spec order, whatever the number of workers.
    """
    if step < 1 or end < start or start < 1:
        raise ValueError("need 1 <= start <= end and step >= 1")
    arr = events_to_array(events)
    horizon = int((arr[:, 0] + arr[:, 1]).max()) if horizon is None else int(horizon)
    if horizon < end:
        raise ValueError("horizon must not precede the last evaluation date")
    specs = resolve_specs(specs)
    exposure = None if exposure is None else np.asarray(exposure, float)
    tasks = [(arr, exposure, calendar, int(tau), specs, horizon, level, options)
             for tau in range(start, end + 1, step)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_evaluate_date, tasks))
    else:
        chunks = [_evaluate_date(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize(rows) -> dict:
    """MAPE of the total IBNR and interval coverage rate per spec."""
    out = {}
    for name in dict.fromkeys(r.spec_name for r in rows):
        ok = [r for r in rows if r.spec_name == name and not r.failed]
        pos = [r for r in ok if r.actual > 0]
        mape = float(np.mean([abs(r.predicted - r.actual) / r.actual for r in pos])) if pos else None
        out[name] = {
            "n_dates": sum(r.spec_name == name for r in rows),
            "n_failed": sum(r.spec_name == name and r.failed for r in rows),
            "mape": mape,
            "coverage": float(np.mean([r.covered for r in ok])) if ok else None,
        }
    return out


def _format(row: BacktestRow) -> list:
    pred = "nan" if math.isnan(row.predicted) else f"{row.predicted:.6f}"
    return [row.eval_date, row.spec_name, row.actual, pred, row.lower, row.upper, int(row.covered),
            f"{row.fit_seconds:.3f}", row.horizon, row.error]


def rows_to_csv(rows) -> str:
    buf = _io.StringIO(newline="")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_COLUMNS)
    for r in rows:
        out.writerow(_format(r))
    return buf.getvalue()


def strip_timing(text: str) -> str:
    """Drop the timing columns from backtest CSV text (for golden comparisons)."""
    reader = csv.reader(_io.StringIO(text))
    header = next(reader)
    keep = [i for i, c in enumerate(header) if c not in TIMING_COLUMNS]
    buf = _io.StringIO(newline="")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow([header[i] for i in keep])
    for row in reader:
        out.writerow([row[i] for i in keep])
    return buf.getvalue()


def rows_as_dicts(rows) -> list:
    return [asdict(r) for r in rows]
