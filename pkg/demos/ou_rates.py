"""Deterministic view of the step-size rate through the scalar OU chain.

For ``eta_n = 1/(alpha^2 n)`` the distance ``D_n`` between the EM and the
stationary characteristic functions should scale like ``eta_n^(1/alpha)``.
"""

import numpy as np

from stablepou.analysis import optimality_sweep, series_bound_ratios
from stablepou.scheme import HarmonicOffset

ns = np.array([100, 300, 1000, 3000, 5000])
for alpha in (1.25, 1.5, 1.75, 2.0):
    sw = optimality_sweep(alpha, ns)
    print(f"alpha={alpha}: " + " ".join(f"{r:.4f}" for r in sw["ratio"]))

# weighted sums of past steps against the current step size
for alpha in (1.25, 1.5, 2.0):
    r = series_bound_ratios(HarmonicOffset(10), 1.0, alpha, [10, 100, 1000, 10_000])
    print(f"series ratio alpha={alpha}: " + " ".join(f"{x:.3f}" for x in r))
