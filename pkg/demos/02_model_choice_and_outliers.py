"""Choose between reporting structures and hunt for a bad cell.

Data generated with the reverse-time intra-week model are fitted with both
weekly structures; AICcd (which charges for the information lost to
censoring, not just the parameter count) should prefer the true one.
Afterwards one observed cell is inflated tenfold, as a data-entry slip
would do, and generalised Cook's distances point straight at it.

Run:  python3 demos/02_model_choice_and_outliers.py   (a few seconds)
"""
import numpy as np

from delaycast import MatrixReportingSpec, OccurrenceSpec, ReverseTimeReportingSpec, RunoffTriangle
from delaycast import aiccd, default_scenario, fit_em, observed_information, simulate_portfolio
from delaycast.inference import cooks_distances, top_cooks

TAU = 200

tri = simulate_portfolio(default_scenario(TAU, seed=3, kind="reverse_time")).triangle()
print(f"triangle: tau={TAU}, {tri.total} reported events\n")

print("spec            params   -2Q        penalty   AICcd")
for label, rep in [("matrix", MatrixReportingSpec()), ("reverse_time", ReverseTimeReportingSpec())]:
    em = fit_em(tri, OccurrenceSpec(), rep)
    a = aiccd(em.model, tri)
    print(f"{label:14s}  {a.dim:6d}  {-2 * a.q:9.1f}  {a.penalty:8.1f}  {a.value:9.1f}")

# corrupt one busy cell on lag 2
counts = tri.counts.copy()
t = 120 + int(np.argmax(counts[119:, 2] >= 5))
counts[t - 1, 2] *= 10
bad = RunoffTriangle(counts, tri.exposure, tri.calendar)
print(f"\ncell (t={t}, d=2) inflated from {tri.counts[t - 1, 2]} to {counts[t - 1, 2]}")

em = fit_em(bad, OccurrenceSpec(), ReverseTimeReportingSpec())
gd = cooks_distances(em.model, bad, observed_information(em.model, bad))
print("largest generalised Cook's distances:")
for tt, d, g in top_cooks(gd, k=5):
    print(f"  t={tt:4d} d={d:3d}  GD={g:10.3f}")
