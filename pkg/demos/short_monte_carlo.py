"""Five-run version of the heavy-tailed closed-loop experiment.

Loads the Laplace configuration, shortens it to five runs and prints the
pooled disturbance, state and tracking RMSE of every observer. The full
version is ``python3 -m gmkmckf simulate --config configs/laplace.json``.
"""
from gmkmckf.config import load_config
from gmkmckf.experiment import run_monte_carlo

cfg = load_config("configs/laplace.json").replace(runs=5)
report = run_monte_carlo(cfg)
print(f"{'observer':<10} {'d':>8} {'rate':>8} {'angle':>8} {'tracking':>9}")
for name, res in sorted(report.observers.items(), key=lambda kv: kv[1].rmse["x1"]):
    r = res.rmse
    print(f"{name:<10} {r['x1']:8.3f} {r['x2']:8.3f} {r['x3']:8.4f} {r['tracking']:9.4f}")
