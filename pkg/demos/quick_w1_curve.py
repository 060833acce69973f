"""A small W1 curve for the 1-d model, finished in a few seconds.

Writes ``demo_out/w1_curve.csv`` and ``demo_out/w1_curve.svg``.
"""

from stablepou.config import parse_config
from stablepou.experiments import run_experiment

cfg = parse_config({
    "experiment": "W1Curve",
    "model": {"preset": "example_1d", "alpha": 1.5},
    "n_steps": 200,
    "n_trajectories": 200,
    "n_repeats": 2,
    "tau": 20,
    "master_seed": 11,
    "output_dir": "demo_out",
})
outcome = run_experiment(cfg)
for check in outcome.checks:
    print(f"{check.name}: {check.value:.4g}  {check.detail}")
print("files:", ", ".join(outcome.files))
