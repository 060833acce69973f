"""Empirical measures and Wasserstein-1 estimation.

:func:`sinkhorn` runs the Sinkhorn-Knopp fixed point

    c <- b ./ (A' r),    r <- a ./ (A c),    A = exp(-tau M),

from ``r = c = 1`` and reports ``<diag(r) A diag(c), M>``.  Large ``tau``
times large costs underflows the kernel, so by default the iteration runs on
``log r`` and ``log c`` with log-sum-exp reductions whenever ``tau * max(M)``
exceeds ``RAW_KERNEL_LIMIT``.  Both paths produce the same iterates.

The exact oracles (:func:`w1_exact_assignment`, :func:`w1_exact_1d`) only
cover uniform weights with equal atom counts.
"""

import csv
import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

__all__ = [
    "EmpiricalMeasure",
    "SinkhornPlan",
    "cost_matrix",
    "sinkhorn",
    "w1_exact_assignment",
    "w1_exact_1d",
    "w1_sinkhorn",
    "RAW_KERNEL_LIMIT",
]

RAW_KERNEL_LIMIT = 100.0
# iterations between marginal checks
_CHECK_EVERY = 10


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud: ``points`` is (n, d), ``weights`` sums to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float)
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ValueError("points must be (n, d) and weights (n,)")
        if pts.shape[0] == 0:
            raise ValueError("measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def to_csv(self, path):
        """One row per atom: weight, then the coordinates."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["weight"] + [f"x{k + 1}" for k in range(self.d)])
            for wt, p in zip(self.weights, self.points):
                w.writerow([repr(float(wt))] + [repr(float(c)) for c in p])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if rows and rows[0] and rows[0][0].strip().lower() == "weight":
            rows = rows[1:]
        rows = [r for r in rows if r]
        if not rows:
            raise ValueError(f"{path}: no atoms")
        data = np.array([[float(c) for c in r] for r in rows])
        return cls(data[:, 1:], data[:, 0])


@dataclass(frozen=True, eq=False)
class SinkhornPlan:
    """Dual scalings and the Sinkhorn value; ``plan`` rebuilds ``diag(r) A diag(c)``."""

    log_r: np.ndarray
    log_c: np.ndarray
    cost: np.ndarray
    tau: float
    value: float
    iterations: int
    converged: bool
    marginal_error: float

    @property
    def r(self):
        return np.exp(self.log_r)

    @property
    def c(self):
        return np.exp(self.log_c)

    @property
    def plan(self):
        return np.exp(self.log_r[:, None] - self.tau * self.cost + self.log_c[None, :])


def cost_matrix(nu1, nu2):
    """Euclidean distances ``|x_i - y_j|`` as an (n, m) matrix."""
    x, y = nu1.points, nu2.points
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    sq = (x[:, None, 0] - y[None, :, 0]) ** 2
    for k in range(1, x.shape[1]):
        sq = sq + (x[:, None, k] - y[None, :, k]) ** 2
    return np.sqrt(sq)


def _lse_rows(K):
    m = K.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(K - m[:, None]).sum(axis=1))


def _check_weights(w, name):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be a nonnegative weight vector summing to 1")
    return w


def sinkhorn(a, b, M, tau, max_iter=10_000, tol=1e-9, log_domain=None):
    """Entropic transport between weights ``a`` and ``b`` for cost ``M``.

    Stops when the column-marginal violation (rows are exact after each
    ``r`` update) drops to ``tol`` or after ``max_iter`` iterations; in the
    latter case ``converged`` is False and the last iterate is returned.
    ``log_domain=None`` picks the raw kernel only when it cannot underflow.
    Zero-weight atoms are dropped before iterating and get ``r = c = 0``.
    """
    a = _check_weights(a, "a")
    b = _check_weights(b, "b")
    M = np.asarray(M, dtype=float)
    if M.shape != (a.size, b.size):
        raise ValueError(f"cost shape {M.shape} does not match weights ({a.size}, {b.size})")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    ia, ib = a > 0, b > 0
    if not (ia.all() and ib.all()):
        # zero-weight atoms carry no mass; solve on the supports
        sub = sinkhorn(a[ia] / a[ia].sum(), b[ib] / b[ib].sum(), M[np.ix_(ia, ib)], tau,
                       max_iter=max_iter, tol=tol, log_domain=log_domain)
        log_r = np.full(a.size, -np.inf)
        log_c = np.full(b.size, -np.inf)
        log_r[ia] = sub.log_r
        log_c[ib] = sub.log_c
        return SinkhornPlan(log_r=log_r, log_c=log_c, cost=M, tau=sub.tau, value=sub.value,
                            iterations=sub.iterations, converged=sub.converged,
                            marginal_error=sub.marginal_error)
    if log_domain is None:
        log_domain = tau * float(M.max(initial=0.0)) > RAW_KERNEL_LIMIT
    if log_domain:
        return _sinkhorn_log(a, b, M, tau, max_iter, tol)
    return _sinkhorn_raw(a, b, M, tau, max_iter, tol)


def _finish(log_r, log_c, M, tau, it, converged, err):
    T = np.exp(log_r[:, None] - tau * M + log_c[None, :])
    value = float(np.sum(T * M))
    if not np.isfinite(value):
        raise NumericalFailure("Sinkhorn plan is not finite")
    return SinkhornPlan(log_r=log_r, log_c=log_c, cost=M, tau=float(tau), value=value,
                        iterations=it, converged=converged, marginal_error=float(err))


def _scaling_ok(u, v):
    return bool(np.all(np.isfinite(u)) and np.all(np.isfinite(v))
                and np.all(u > 0) and np.all(v > 0))


def _scaling_run(Kt, a, b, u, v, n):
    # n plain Sinkhorn updates on kernel Kt; errors are inspected by the caller
    for _ in range(n):
        v = b / (Kt.T @ u)
        u = a / (Kt @ v)
    return u, v


def _sinkhorn_log(a, b, M, tau, max_iter, tol, inner=200, absorb_at=50.0):
    """Log-domain Sinkhorn with kernel absorption.

    A full log-sum-exp update fixes the potentials ``(f, g)``; the following
    updates run on the absorbed kernel ``exp(f_i + g_j - tau M_ij)`` with
    scalings ``(u, v)`` near one, and are folded back into ``(f, g)`` once
    they grow past ``exp(absorb_at)`` or a reduction underflows.  In exact
    arithmetic the iterates equal those of the plain fixed point.
    """
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    K = -tau * M
    KT = np.ascontiguousarray(K.T)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    err = np.inf
    it = 0
    while True:
        col = _lse_rows(KT + f[None, :])
        if it > 0:
            err = float(np.max(np.abs(np.exp(g + col) - b)))
            if err <= tol or it >= max_iter:
                break
        g = lb - col
        f = la - _lse_rows(K + g[None, :])
        it += 1
        if not (np.all(np.isfinite(f[a > 0])) and np.all(np.isfinite(g[b > 0]))):
            raise NumericalFailure("non-finite dual potentials")
        Kt = np.exp(K + f[:, None] + g[None, :])
        u = np.ones(a.size)
        v = np.ones(b.size)
        done = 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            while done < inner and it < max_iter:
                n = min(_CHECK_EVERY, inner - done, max_iter - it)
                u1, v1 = _scaling_run(Kt, a, b, u, v, n)
                if not _scaling_ok(u1[a > 0], v1[b > 0]):
                    break
                u, v = u1, v1
                it += n
                done += n
                err = float(np.max(np.abs(v * (Kt.T @ u) - b)))
                if err <= tol:
                    break
                with np.errstate(divide="ignore"):
                    big = max(np.max(np.abs(np.log(u[a > 0]))), np.max(np.abs(np.log(v[b > 0]))))
                if big > absorb_at:
                    break
        with np.errstate(divide="ignore"):
            f = f + np.log(u)
            g = g + np.log(v)
    return _finish(f, g, M, tau, it, err <= tol, err)


def _sinkhorn_raw(a, b, M, tau, max_iter, tol):
    A = np.exp(-tau * M)
    if np.any(A.sum(axis=0) == 0) or np.any(A.sum(axis=1) == 0):
        raise NumericalFailure("kernel underflow; use the log-domain iteration")
    r = np.ones(a.size)
    c = np.ones(b.size)
    err = np.inf
    it = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while it < max_iter:
            n = min(_CHECK_EVERY, max_iter - it)
            r, c = _scaling_run(A, a, b, r, c, n)
            it += n
            if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
                raise NumericalFailure("non-finite scalings")
            err = float(np.max(np.abs(c * (A.T @ r) - b)))
            if err <= tol:
                break
    converged = err <= tol
    with np.errstate(divide="ignore"):
        return _finish(np.log(r), np.log(c), M, tau, it, converged, err)


def _require_uniform_equal(nu1, nu2, max_n=None):
    if nu1.n != nu2.n or not (nu1.is_uniform and nu2.is_uniform):
        raise ValueError("exact oracle needs equal atom counts and uniform weights")
    if nu1.d != nu2.d:
        raise ValueError("dimension mismatch")
    if max_n is not None and nu1.n > max_n:
        raise ValueError(f"assignment enumeration limited to n <= {max_n}")


@functools.lru_cache(maxsize=None)
def _permutations(n):
    return np.array(list(itertools.permutations(range(n))))


def w1_exact_assignment(nu1, nu2):
    """Brute-force W1 over all permutations (uniform weights, n = m <= 8)."""
    _require_uniform_equal(nu1, nu2, max_n=8)
    C = cost_matrix(nu1, nu2)
    n = C.shape[0]
    perms = _permutations(n)
    totals = C[np.arange(n), perms].sum(axis=1)
    return float(totals.min() / n)


def w1_exact_1d(nu1, nu2):
    """W1 between equal-size uniform samples on the line via the sorted coupling."""
    _require_uniform_equal(nu1, nu2)
    if nu1.d != 1:
        raise ValueError("w1_exact_1d needs d = 1")
    x = np.sort(nu1.points[:, 0])
    y = np.sort(nu2.points[:, 0])
    return float(np.mean(np.abs(x - y)))


def w1_sinkhorn(nu1, nu2, tau, max_iter=10_000, tol=1e-9):
    """Sinkhorn value between two empirical measures."""
    return sinkhorn(nu1.weights, nu2.weights, cost_matrix(nu1, nu2), tau,
                    max_iter=max_iter, tol=tol).value
