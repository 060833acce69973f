"""Stability certificate and mollified drift for the two built-in models.

Run with ``python demos/certificate_and_mollifier.py``.
"""

import numpy as np

from stablepou.model import (check_assumption1, drift, example_1d, example_2d,
                             find_stability_certificate, mollified_drift)

for spec in (example_1d(), example_2d()):
    cert = find_stability_certificate(spec)
    print(f"d={spec.d}: lambda1={cert.lambda1:.4g} lambda2={cert.lambda2:.4g} "
          f"theta={cert.theta:.4g} via {cert.method}; "
          f"structure branch {check_assumption1(spec).branch.value}")

# the smoothed drift differs from the kinked one only in a band around e'x = 0
spec = example_2d()
xs = np.column_stack([np.linspace(-0.2, 0.2, 9), np.zeros(9)])
gap = np.linalg.norm(mollified_drift(spec, 0.1, xs) - drift(spec, xs), axis=1)
for x, g in zip(xs[:, 0], gap):
    print(f"x1={x:+.2f}  |g_eps - g| = {g:.4f}")
