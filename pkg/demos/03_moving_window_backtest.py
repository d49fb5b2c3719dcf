"""Replay history: refit every model on each evaluation date and score it.

For each evaluation day in the window, the triangle is rebuilt from the
events reported by then, every spec is refitted, and the predicted total
IBNR is compared with the count the full simulation reveals later.  The
summary reports MAPE and how often the 95% interval caught the truth.

The yearly chain ladder works on 365-day periods ending at the evaluation
date.  With under two years of history its oldest period is short, which
badly distorts its lag-one share; watch its MAPE.

Run:  python3 demos/03_moving_window_backtest.py   (about ten seconds)
"""
from delaycast import default_scenario, moving_window, simulate_portfolio
from delaycast.evaluation import summarize

port = simulate_portfolio(default_scenario(730, seed=2024, kind="matrix"))
specs = ["em_matrix", "em_reverse_time", "chain_ladder", "yearly_cl", "direct_structured"]
rows = moving_window(port.events, port.config.exposure, port.config.calendar, specs, 420, 690, step=30)

print("eval date   " + "".join(f"{s:>19s}" for s in specs))
for k in range(0, len(rows), len(specs)):
    block = rows[k:k + len(specs)]
    cells = "".join(f"{r.predicted:9.0f} ({r.actual:5d})" + ("*" if not r.covered else " ") for r in block)
    print(f"{block[0].eval_date}  {cells}")
print("(predicted (actual); * marks a miss of the 95% interval)\n")

for name, s in summarize(rows).items():
    mape = "n/a" if s["mape"] is None else f"{s['mape']:.3f}"
    print(f"{name:18s} MAPE {mape:>6s}  coverage {s['coverage']:.2f}  failed {s['n_failed']}")
