"""Nowcast the unreported events on one evaluation date.

A synthetic portfolio is simulated for two years.  We then pretend it is
the evening of day 500: only events reported by then are visible.  The
joint EM model (NB week delay + intra-week matrix) is fitted to that
triangle, and its nowcast is compared with what the full simulation says
was still outstanding.

Run:  python3 demos/01_nowcast_one_date.py
"""
import numpy as np

from delaycast import actual_ibnr, default_scenario, fit_spec, prediction_intervals, simulate_portfolio
from delaycast.inference import poisson_interval

TAU_STAR = 500

port = simulate_portfolio(default_scenario(730, seed=11, kind="matrix"))
tri = port.triangle(TAU_STAR)
cal = tri.calendar
print(f"{len(port.events)} events simulated; {tri.total} reported by {cal.date_of(TAU_STAR)}")

fit = fit_spec("em_matrix", tri)
print(f"EM converged={fit.em.converged} after {fit.em.iterations} iterations "
      f"({fit.seconds:.1f}s, log-lik {fit.em.loglik:.1f})")

res = fit.nowcast
lo, hi = poisson_interval(res.total, 0.95)
truth = actual_ibnr(port.events, TAU_STAR)
print(f"\nIBNR total: predicted {res.total:.1f}, 95% interval [{lo}, {hi}], actual {truth}")

# When will the outstanding events show up?  The first fortnight of reports,
# with simultaneous (Bonferroni) bounds over the 14 days.
keys, means = res.groups("reporting_date")
lo, hi = prediction_intervals(means[:14], 0.95, simultaneous=True)
future = port.events[(port.events[:, 0] <= TAU_STAR) & (port.events.sum(axis=1) > TAU_STAR)]
seen = np.bincount(future.sum(axis=1) - TAU_STAR - 1, minlength=14)[:14]
print("\nreport date   weekday  expected  band        actual")
for i, (k, m, a, b, s) in enumerate(zip(keys[:14], means[:14], lo, hi, seen)):
    day = cal.date_of(TAU_STAR + 1 + i)
    print(f"{k}  {day.strftime('%a'):>7}  {m:8.1f}  [{a:3d}, {b:3d}]  {s:6d}")
