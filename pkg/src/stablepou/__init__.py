"""Decreasing-step Euler-Maruyama approximation of stable-driven piecewise OU processes.

Modules
-------
model       drift, mollifier, structural checks and stability certificates
noise       reproducible stable and Gaussian increments
scheme      step schedules and the EM chain (single chains and ensembles)
transport   empirical measures, Sinkhorn and exact W1 oracles
analysis    closed-form OU diagnostics, rate fits, CLT summaries
experiments / cli   configured experiment runs and the command line
"""

__version__ = "0.1.0"

from .errors import (CertificateNotFound, ConfigError, DivergedError, NumericalFailure,
                     StablePOUError, StageError)
from .model import (Assumption1Branch, ModelSpec, StabilityCertificate, check_assumption1,
                    check_m_matrix, dissipation_gap, drift, example_1d, example_2d,
                    find_stability_certificate, mollified_drift, mollified_drift_jacobian,
                    mollifier_rho, mollifier_rho_dot)
from .noise import NoiseKind, RngStream, c_alpha, sample_standard_stable, sigma_tilde
from .scheme import (AlphaHarmonic, Explicit, HarmonicOffset, check_assumption2,
                     estimate_omega, jacobian_flow, simulate_chain, simulate_ensemble)
from .transport import (EmpiricalMeasure, cost_matrix, sinkhorn, w1_exact_1d,
                        w1_exact_assignment, w1_sinkhorn)
