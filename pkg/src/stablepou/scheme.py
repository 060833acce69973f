"""Decreasing-step Euler-Maruyama scheme.

The chain is

    Y_{n+1} = Y_n + eta_{n+1} g(Y_n) + sigma dZ_{n+1},

with ``dZ_{n+1}`` an increment of the driving noise over a step of length
``eta_{n+1}`` (see :mod:`stablepou.noise` for the scale convention).

Ensembles are simulated as batches.  Each trajectory owns the stream
``RngStream(master_seed, stream_start + i)`` and draws its noise in blocks of
``BLOCK`` steps, so trajectory ``i`` sees the same numbers whatever the batch
size or worker count.  The update itself uses only elementwise arithmetic,
which keeps the results bit-identical across any partition of the ensemble.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DivergedError
from .model import _matvec, drift, mollified_drift, mollified_drift_jacobian
from .noise import RngStream, standard_block, step_scale

__all__ = [
    "StepSchedule",
    "HarmonicOffset",
    "AlphaHarmonic",
    "Explicit",
    "Verdict",
    "Assumption2Report",
    "estimate_omega",
    "check_assumption2",
    "em_step",
    "simulate_chain",
    "simulate_ensemble",
    "EnsembleResult",
    "jacobian_flow",
    "jacobian_flow_batch",
    "default_eps",
    "BLOCK",
    "DIVERGENCE_SENTINEL",
]

BLOCK = 256
DIVERGENCE_SENTINEL = 1e12


class StepSchedule:
    """Positive, strictly decreasing step sizes ``eta_1, eta_2, ...`` with ``eta_1 < 1``."""

    family = "abstract"
    #: whether the sum/sum-of-squares verdicts are known in closed form
    analytic = False

    def __init__(self, beta=1.0):
        if not 0.0 < beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {beta}")
        self.beta = float(beta)

    def etas(self, n):
        """Array ``[eta_1, ..., eta_n]``."""
        raise NotImplementedError

    def eta(self, n):
        if n < 1:
            raise ValueError(f"step index must be >= 1, got {n}")
        return float(self.etas(n)[-1])

    def t(self, n):
        """``t_n = eta_1 + ... + eta_n`` (``t_0 = 0``), correctly rounded."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        return math.fsum(self.etas(n)) if n else 0.0

    def times(self, n):
        """Array ``[t_0, t_1, ..., t_n]``."""
        return np.concatenate([[0.0], np.cumsum(self.etas(n))])

    def describe(self):
        raise NotImplementedError


class HarmonicOffset(StepSchedule):
    """``eta_n = 1 / (c0 + n)``."""

    family = "HarmonicOffset"
    analytic = True

    def __init__(self, c0=10.0, beta=1.0):
        super().__init__(beta)
        if not c0 > 0:
            raise ValueError(f"c0 must be positive, got {c0}")
        self.c0 = float(c0)

    def etas(self, n):
        return 1.0 / (self.c0 + np.arange(1, n + 1, dtype=float))

    def describe(self):
        return {"family": self.family, "c0": self.c0, "beta": self.beta}

    def __repr__(self):
        return f"HarmonicOffset(c0={self.c0:g}, beta={self.beta:g})"


class AlphaHarmonic(StepSchedule):
    """``eta_n = 1 / (alpha^2 n)``; the boundary case ``omega = alpha`` for ``beta = 1/alpha``."""

    family = "AlphaHarmonic"
    analytic = True

    def __init__(self, alpha, beta=None):
        if not alpha > 1:
            raise ValueError(f"AlphaHarmonic needs alpha > 1 so that eta_1 < 1, got {alpha}")
        self.alpha = float(alpha)
        super().__init__(1.0 / self.alpha if beta is None else beta)

    def etas(self, n):
        return 1.0 / (self.alpha**2 * np.arange(1, n + 1, dtype=float))

    def describe(self):
        return {"family": self.family, "alpha": self.alpha, "beta": self.beta}

    def __repr__(self):
        return f"AlphaHarmonic(alpha={self.alpha:g}, beta={self.beta:g})"


class Explicit(StepSchedule):
    """User-supplied finite step sequence; queries past its end raise."""

    family = "Explicit"

    def __init__(self, values, beta=1.0):
        super().__init__(beta)
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("Explicit schedule needs a nonempty 1-d sequence")
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ValueError("step sizes must be positive and finite")
        if np.any(np.diff(values) >= 0):
            raise ValueError("step sizes must be strictly decreasing")
        if values[0] >= 1:
            raise ValueError("eta_1 must be < 1")
        values.setflags(write=False)
        self.values = values

    def etas(self, n):
        if n > self.values.size:
            raise ValueError(f"schedule horizon is {self.values.size}, asked for {n} steps")
        return self.values[:n].copy()

    def describe(self):
        return {"family": self.family, "values": self.values.tolist(), "beta": self.beta}

    def __repr__(self):
        return f"Explicit(<{self.values.size} steps>, beta={self.beta:g})"


class OmegaConvergenceWarning(UserWarning):
    pass


def _omega_ratio(sched, beta, k):
    e = sched.etas(k + 1)
    ek, ek1 = e[k - 1], e[k]
    if ek == ek1:
        raise ValueError("degenerate schedule: consecutive steps are equal")
    return (ek**beta - ek1**beta) / ek1 ** (1 + beta)


def estimate_omega(sched, beta=None, n_probe=1000, return_converged=False):
    """Extrapolated limit of ``(eta_k^b - eta_{k+1}^b) / eta_{k+1}^(1+b)``.

    Uses ``2 r(2n) - r(n)`` (first-order Richardson).  Warns when
    ``|r(2n) - r(n)| > 0.05 |r(2n)|``.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be >= 100")
    beta = sched.beta if beta is None else float(beta)
    r1 = _omega_ratio(sched, beta, n_probe)
    r2 = _omega_ratio(sched, beta, 2 * n_probe)
    converged = abs(r2 - r1) <= 0.05 * abs(r2)
    if not converged:
        warnings.warn(f"omega estimate not converged: r({n_probe})={r1:g}, "
                      f"r({2 * n_probe})={r2:g}", OmegaConvergenceWarning, stacklevel=2)
    omega = 2 * r2 - r1
    return (omega, converged) if return_converged else omega


class Verdict(str, Enum):
    PROVEN = "proven"
    HEURISTIC_TRUE = "heuristic-true"
    HEURISTIC_FALSE = "heuristic-false"


@dataclass(frozen=True)
class Assumption2Report:
    eta1_ok: bool
    sum_diverges: Verdict
    sumsq_converges: Verdict
    omega: float
    omega_ok: bool
    beta: float

    @property
    def holds(self):
        return (self.eta1_ok and self.omega_ok
                and self.sum_diverges in (Verdict.PROVEN, Verdict.HEURISTIC_TRUE)
                and self.sumsq_converges in (Verdict.PROVEN, Verdict.HEURISTIC_TRUE))


def _tail_exponent(values):
    """Fitted p in eta_n ~ C n^(-p) over the second half of a finite sequence."""
    n = values.size
    idx = np.arange(n // 2, n) + 1
    slope = np.polyfit(np.log(idx), np.log(values[n // 2:]), 1)[0]
    return -slope


def check_assumption2(sched, theta, alpha):
    """Step-size conditions: ``eta_1 < 1``, ``sum eta = inf``, ``sum eta^2 < inf``, ``omega < alpha beta theta``.

    Closed-form families get proven verdicts.  Explicit sequences are judged
    from a power-law fit to their tail and carry heuristic verdicts.
    """
    eta1_ok = sched.eta(1) < 1
    if sched.analytic:
        sum_v = sumsq_v = Verdict.PROVEN
        omega = estimate_omega(sched, sched.beta, n_probe=1000)
    else:
        vals = sched.values
        if vals.size < 8:
            sum_v = sumsq_v = Verdict.HEURISTIC_FALSE
        else:
            p = _tail_exponent(vals)
            sum_v = Verdict.HEURISTIC_TRUE if p <= 1 + 1e-6 else Verdict.HEURISTIC_FALSE
            sumsq_v = Verdict.HEURISTIC_TRUE if p > 0.5 else Verdict.HEURISTIC_FALSE
        n_probe = (vals.size - 1) // 2
        if n_probe >= 100:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OmegaConvergenceWarning)
                omega = estimate_omega(sched, sched.beta, n_probe=n_probe)
        else:
            omega = float("nan")
    omega_ok = bool(omega < alpha * sched.beta * theta)
    return Assumption2Report(eta1_ok=bool(eta1_ok), sum_diverges=sum_v,
                             sumsq_converges=sumsq_v, omega=float(omega),
                             omega_ok=omega_ok, beta=sched.beta)


def em_step(spec, eps, x, eta, dz):
    """``x + eta g(x) + sigma dz``; ``g`` is the mollified drift when ``eps`` is given."""
    x = np.asarray(x, dtype=float)
    dz = np.asarray(dz, dtype=float)
    if dz.shape != x.shape:
        raise ValueError(f"dz shape {dz.shape} does not match state shape {x.shape}")
    g = drift(spec, x) if eps is None else mollified_drift(spec, eps, x)
    return x + eta * g + _matvec(spec.sigma, dz)


def default_eps(sched, n_steps, alpha):
    """``eta_n^(2/alpha)`` at the terminal step, capped below 1."""
    return min(sched.eta(n_steps) ** (2.0 / alpha), 0.5)


def _simulate_batch(spec, sched, x0, streams, n_steps, eps=None, record=None,
                    zero_noise=False, first_index=0):
    """Core loop. ``x0`` is (n, d); ``record`` is a sorted array of step indices to keep.

    Returns the states at ``record`` as an array (len(record), n, d), or the
    terminal states (n, d) when ``record`` is None.
    """
    x = np.array(x0, dtype=float, copy=True)
    n, d = x.shape
    etas = sched.etas(n_steps)
    scales = step_scale(spec.noise_kind, spec.alpha, etas)
    g = drift if eps is None else (lambda s, y: mollified_drift(s, eps, y))
    if record is not None:
        record = np.asarray(record, dtype=int)
        out = np.empty((record.size, n, d))
        ri = 0
        while ri < record.size and record[ri] == 0:
            out[ri] = x
            ri += 1
    step = 0
    while step < n_steps:
        m = min(BLOCK, n_steps - step)
        if zero_noise:
            noise = np.zeros((m, n, d))
        else:
            noise = np.stack([standard_block(spec.noise_kind, spec.alpha, d, m, s)
                              for s in streams], axis=1)
        for j in range(m):
            k = step + j
            dz = scales[k] * noise[j]
            x = x + etas[k] * g(spec, x) + _matvec(spec.sigma, dz)
            if record is not None:
                while ri < record.size and record[ri] == k + 1:
                    out[ri] = x
                    ri += 1
        bad = ~np.all(np.isfinite(x) & (np.abs(x) <= DIVERGENCE_SENTINEL), axis=1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DivergedError(f"trajectory {first_index + i} diverged by step {step + m}",
                                trajectory=first_index + i, step=step + m)
        step += m
    return out if record is not None else x


def simulate_chain(spec, sched, n_steps, x0, stream, eps=None, full_path=False,
                   zero_noise=False):
    """Run one chain; returns the endpoint (d,) or the full path (n_steps+1, d)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(1, spec.d)
    record = np.arange(n_steps + 1) if full_path else None
    out = _simulate_batch(spec, sched, x0, [stream], n_steps, eps=eps, record=record,
                          zero_noise=zero_noise)
    return out[:, 0, :] if full_path else out[0]


@dataclass(eq=False)
class EnsembleResult:
    """Terminal (or checkpoint) states of an ensemble.

    ``endpoints`` is (n_trajectories, d).  When checkpoints were requested,
    ``checkpoint_states`` is (len(checkpoints), n_trajectories, d).
    """

    endpoints: np.ndarray
    n_steps: int
    t_final: float
    seeds: tuple
    checkpoints: np.ndarray = None
    checkpoint_states: np.ndarray = None

    def __eq__(self, other):
        if not isinstance(other, EnsembleResult):
            return NotImplemented
        same_cp = ((self.checkpoints is None and other.checkpoints is None)
                   or (self.checkpoints is not None and other.checkpoints is not None
                       and np.array_equal(self.checkpoints, other.checkpoints)
                       and np.array_equal(self.checkpoint_states, other.checkpoint_states)))
        return (np.array_equal(self.endpoints, other.endpoints) and self.n_steps == other.n_steps
                and self.t_final == other.t_final and self.seeds == other.seeds and same_cp)


def _ensemble_chunk(args):
    spec, sched, x0, master_seed, start, n_steps, eps, record = args
    streams = [RngStream(master_seed, start + i) for i in range(len(x0))]
    return _simulate_batch(spec, sched, x0, streams, n_steps, eps=eps, record=record,
                           first_index=start)


def _chunks(n, workers):
    bounds = np.linspace(0, n, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate_ensemble(spec, sched, n_steps, x0_list, master_seed, workers=1,
                      stream_start=0, checkpoints=None, eps=None):
    """Simulate ``len(x0_list)`` independent chains; trajectory ``i`` uses stream ``stream_start + i``.

    Results are independent of ``workers``.  ``checkpoints`` (step indices in
    ``[0, n_steps]``) additionally keeps the states at those steps.
    """
    x0 = np.asarray(x0_list, dtype=float)
    if x0.ndim == 1:
        x0 = x0.reshape(-1, spec.d) if spec.d > 1 else x0[:, None]
    if x0.shape[0] == 0:
        raise ValueError("x0_list must be nonempty")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    record = None
    if checkpoints is not None:
        cps = np.unique(np.asarray(checkpoints, dtype=int))
        if cps[0] < 0 or cps[-1] > n_steps:
            raise ValueError("checkpoints must lie in [0, n_steps]")
        record = np.union1d(cps, [n_steps])
    n = x0.shape[0]
    parts = _chunks(n, max(1, int(workers)))
    jobs = [(spec, sched, x0[a:b], master_seed, stream_start + a, n_steps, eps, record)
            for a, b in parts]
    if len(jobs) == 1:
        pieces = [_ensemble_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            pieces = list(pool.map(_ensemble_chunk, jobs))
    axis = 0 if record is None else 1
    states = np.concatenate(pieces, axis=axis)
    seeds = (int(master_seed), (int(stream_start), int(stream_start + n)))
    t_final = sched.t(n_steps)
    if record is None:
        return EnsembleResult(endpoints=states, n_steps=n_steps, t_final=t_final, seeds=seeds)
    keep = np.isin(record, cps)
    return EnsembleResult(endpoints=states[-1], n_steps=n_steps, t_final=t_final, seeds=seeds,
                          checkpoints=record[keep], checkpoint_states=states[keep])


def jacobian_flow_batch(spec, eps, x0, times, dt, streams):
    """Co-integrate states and Jacobians for a batch; returns (len(times), n, d, d).

    Forward Euler ``J <- J + dt grad g_eps(X) J`` from ``J_0 = I`` along an EM
    path with uniform step ``dt``.  ``times`` must be multiples of ``dt`` up
    to rounding.
    """
    _ = mollified_drift_jacobian(spec, eps, np.zeros(spec.d))  # validates eps
    x = np.array(x0, dtype=float).reshape(-1, spec.d)
    n, d = x.shape
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / dt).astype(int)
    total = int(steps.max()) if steps.size else 0
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    out = np.empty((times.size, n, d, d))
    for i in np.flatnonzero(steps == 0):
        out[i] = J
    scale = float(step_scale(spec.noise_kind, spec.alpha, dt))
    done = 0
    while done < total:
        m = min(BLOCK, total - done)
        noise = np.stack([standard_block(spec.noise_kind, spec.alpha, d, m, s)
                          for s in streams], axis=1)
        for j in range(m):
            rd = np.asarray(mollified_drift_jacobian(spec, eps, x))  # (n, d, d)
            # J <- J + dt * rd @ J, unrolled over the inner index
            step = rd[:, :, 0:1] * J[:, 0:1, :]
            for k in range(1, d):
                step = step + rd[:, :, k:k + 1] * J[:, k:k + 1, :]
            J = J + dt * step
            r = np.asarray(mollified_drift(spec, eps, x))
            x = x + dt * r + _matvec(spec.sigma, scale * noise[j])
            k_done = done + j + 1
            for i in np.flatnonzero(steps == k_done):
                out[i] = J
        if not np.all(np.isfinite(J)) or not np.all(np.abs(x) <= DIVERGENCE_SENTINEL):
            raise DivergedError(f"Jacobi flow diverged by step {done + m}", step=done + m)
        done += m
    return out


def jacobian_flow(spec, eps, x0, t_final, dt=1e-4, stream=None):
    """Jacobian ``J_t = d X_t / d x0`` of the mollified flow at ``t_final``."""
    if t_final == 0:
        return np.eye(spec.d)
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    if dt > 1e-3 * t_final:
        raise ValueError("dt must be <= 1e-3 * t_final")
    if stream is None:
        stream = RngStream(0, 0)
    return jacobian_flow_batch(spec, eps, x0, [t_final], dt, [stream])[0, 0]
