"""Closed-form OU diagnostics, rate fits and CLT summaries.

The scalar chain ``Y_{n+1} = (1 - eta_{n+1}) Y_n + dZ`` started at 0 has
characteristic function ``exp(-|u|^alpha S_n)`` with

    S_n = sum_j eta_j prod_{k>j} (1 - eta_k)^alpha,

while the stationary OU law has ``exp(-|u|^alpha / alpha)``.  Everything in
the first half of this module is deterministic.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special, stats

from .scheme import AlphaHarmonic

__all__ = [
    "em_char_exponent",
    "em_char_exponents",
    "ou_em_charfn",
    "ou_stationary_charfn",
    "ou_char_distance",
    "ou_char_distances",
    "optimality_ratio",
    "optimality_sweep",
    "series_bound_ratio",
    "series_bound_ratios",
    "sinc_derivative_sup",
    "RateFit",
    "fit_rate",
    "TEST_FUNCTIONS",
    "test_function",
    "time_average",
    "time_averages",
    "CltDiagnostics",
    "clt_diagnostics",
]


def _etas_below_one(sched, n):
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    etas = np.asarray(sched.etas(n), dtype=float)
    if np.any(etas >= 1.0):
        k = int(np.argmax(etas >= 1.0)) + 1
        raise ValueError(f"eta_{k} = {etas[k - 1]} >= 1; closed form needs eta_k < 1")
    return etas


def em_char_exponent(sched, n, alpha):
    """``S_n`` from the product form, with the products taken in log space."""
    etas = _etas_below_one(sched, n)
    if n == 0:
        return 0.0
    logs = np.log1p(-etas)
    # tail[j] = sum_{k > j} log(1 - eta_k)
    tail = np.concatenate([np.cumsum(logs[::-1])[::-1][1:], [0.0]])
    return math.fsum(etas * np.exp(alpha * tail))


def em_char_exponents(sched, n_max, alpha):
    """``S_1, ..., S_{n_max}`` via ``S_n = (1 - eta_n)^alpha S_{n-1} + eta_n``."""
    etas = _etas_below_one(sched, n_max)
    decay = np.exp(alpha * np.log1p(-etas))
    out = np.empty(n_max)
    s = 0.0
    for i in range(n_max):
        s = decay[i] * s + etas[i]
        out[i] = s
    return out


def ou_em_charfn(sched, n, alpha, u):
    """Characteristic function of the scalar EM chain at step ``n`` (real-valued)."""
    s = em_char_exponent(sched, n, alpha)
    return np.exp(-np.abs(u) ** alpha * s)


def ou_stationary_charfn(alpha, u):
    """``exp(-|u|^alpha / alpha)``, the stationary OU characteristic function."""
    alpha = float(alpha)
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    return np.exp(-np.abs(u) ** alpha / alpha)


def _jacobi_rule(alpha, quad_points):
    # nodes/weights for int_0^1 w^(1/alpha - 1) f(w) dw
    b = 1.0 / alpha - 1.0
    x, wts = special.roots_jacobi(quad_points, 0.0, b)
    return 0.5 * (1.0 + x), wts * 2.0 ** (-b - 1.0)


def _distance_from_exponent(s, alpha, quad_points, rule):
    s = np.asarray(s, dtype=float)
    if rule == "jacobi":
        # u = w^(1/alpha) removes the |u|^alpha kink; the integrand is entire in w
        w, wts = _jacobi_rule(alpha, quad_points)
        base = np.exp(-w / alpha)
        vals = base * np.expm1(-np.multiply.outer(s - 1.0 / alpha, w))
        return (2.0 / alpha) * (vals @ wts)
    if rule == "legendre":
        x, wts = special.roots_legendre(quad_points)
        u = 0.5 * (1.0 + x)
        ua = u ** alpha
        vals = np.exp(-ua / alpha) * np.expm1(-np.multiply.outer(s - 1.0 / alpha, ua))
        return vals @ wts
    raise ValueError(f"unknown quadrature rule {rule!r}")


def ou_char_distance(sched, n, alpha, quad_points=64, rule="jacobi"):
    """``D_n = int_{-1}^{1} (phi_n(u) - phi_inf(u)) du`` by Gaussian quadrature.

    ``rule="jacobi"`` integrates in ``w = |u|^alpha`` with a Gauss-Jacobi
    rule, which is exact to rounding at 64 nodes for every alpha.
    ``rule="legendre"`` applies Gauss-Legendre directly in ``u``; it converges
    only algebraically when ``alpha < 2``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    s = em_char_exponent(sched, n, alpha)
    return float(_distance_from_exponent(s, alpha, quad_points, rule))


def ou_char_distances(sched, ns, alpha, quad_points=64, rule="jacobi"):
    """Vectorised :func:`ou_char_distance` over an increasing grid ``ns``."""
    ns = np.asarray(ns, dtype=int)
    if ns.size == 0 or ns.min() < 1:
        raise ValueError("ns must be a nonempty grid of positive integers")
    s_all = em_char_exponents(sched, int(ns.max()), alpha)
    return _distance_from_exponent(s_all[ns - 1], alpha, quad_points, rule)


def optimality_ratio(alpha, n, quad_points=64):
    """``D_n / eta_n^(1/alpha)`` on the schedule ``eta_n = 1/(alpha^2 n)``."""
    if n < 10:
        raise ValueError(f"n must be >= 10, got {n}")
    sched = AlphaHarmonic(alpha)
    return ou_char_distance(sched, n, alpha, quad_points) / sched.eta(n) ** (1.0 / alpha)


def optimality_sweep(alpha, ns, quad_points=64):
    """Rows ``(n, eta_n, t_n, D_n, ratio)`` as a dict of arrays."""
    sched = AlphaHarmonic(alpha)
    ns = np.asarray(ns, dtype=int)
    if ns.min() < 10:
        raise ValueError("optimality sweep needs n >= 10")
    d = ou_char_distances(sched, ns, alpha, quad_points)
    times = sched.times(int(ns.max()))
    eta = sched.etas(int(ns.max()))[ns - 1]
    return {"n": ns, "eta_n": eta, "t_n": times[ns], "D_n": d,
            "ratio": d / eta ** (1.0 / alpha)}


def series_bound_ratios(sched, theta, alpha, ns):
    """``sum_i exp(-theta (t_n - t_i)) eta_i^(1+1/alpha) / eta_n^(1/alpha)`` for each n."""
    ns = np.asarray(ns, dtype=int)
    if ns.size == 0 or ns.min() < 1:
        raise ValueError("n must be >= 1")
    etas = np.asarray(sched.etas(int(ns.max())), dtype=float)
    terms_base = etas ** (1.0 + 1.0 / alpha)
    out = np.empty(ns.size)
    for j, n in enumerate(ns):
        e = etas[:n]
        # t_n - t_i as suffix sums, so no large-time cancellation
        gaps = np.concatenate([np.cumsum(e[::-1])[::-1][1:], [0.0]])
        total = math.fsum(np.exp(-theta * gaps) * terms_base[:n])
        out[j] = total / e[-1] ** (1.0 / alpha)
    return out


def series_bound_ratio(sched, theta, alpha, n):
    """Scalar version of :func:`series_bound_ratios`."""
    return float(series_bound_ratios(sched, theta, alpha, [n])[0])


def sinc_derivative_sup():
    """``sup_z |(z cos z - sin z) / z^2|``, the derivative bound of ``sin z / z``.

    Returns ``(z_star, value)``.  The maximum sits in the first lobe; beyond
    it the envelope decays like ``1/z``.
    """
    f = lambda z: -abs((z * math.cos(z) - math.sin(z)) / (z * z))
    res = optimize.minimize_scalar(f, bounds=(0.5, 4.0), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x), float(-res.fun)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(points):
    """Least squares of ``log w1`` on ``log eta`` over ``(eta, w1)`` pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("fit_rate needs at least 4 (eta, w1) pairs")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise ValueError("fit_rate needs positive finite values")
    # sort so the result does not depend on input order
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    res = stats.linregress(x, y)
    xc = x - x.mean()
    if not np.any(xc != 0):
        raise ValueError("fit_rate needs at least two distinct eta values")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    resid = y - (res.intercept + res.slope * x)
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return RateFit(float(res.slope), float(res.intercept), r2)


TEST_FUNCTIONS = {
    "one": lambda x: np.ones(x.shape[:-1]),
    "indicator": lambda x: (x[..., 0] > 0).astype(float),
    "clip": lambda x: np.clip(x[..., 0], -1.0, 1.0),
    "sin": lambda x: np.sin(x[..., 0]),
}


def test_function(tag):
    """Bounded test function from the registry (``one``, ``indicator``, ``clip``, ``sin``)."""
    if callable(tag):
        return tag
    try:
        return TEST_FUNCTIONS[tag]
    except KeyError:
        raise ValueError(f"unknown test function {tag!r}; "
                         f"choose from {sorted(TEST_FUNCTIONS)}") from None


def time_averages(times, states, h):
    """Left-endpoint time averages for a batch of paths.

    ``times`` has shape (n+1,) starting at ``t_0``; ``states`` has shape
    (n+1, R, d) or (n+1, d).  Returns shape (R,) or a float.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("path needs at least two time points")
    if states.shape[0] != times.size:
        raise ValueError("states and times disagree in length")
    single = states.ndim == 2
    if single:
        states = states[:, None, :]
    dt = np.diff(times)
    span = times[-1] - times[0]
    if not span > 0:
        raise ValueError("path has zero length in time")
    vals = test_function(h)(states[:-1])
    out = (dt @ vals) / span
    return float(out[0]) if single else out


def time_average(path, h):
    """``(1/T) sum eta_i h(Y_{t_{i-1}})`` over a path of ``(t, state)`` pairs."""
    if len(path) == 0:
        raise ValueError("path must be nonempty")
    times = np.array([float(t) for t, _ in path])
    states = np.array([np.atleast_1d(np.asarray(s, dtype=float)) for _, s in path])
    return time_averages(times, states, h)


@dataclass(frozen=True)
class CltDiagnostics:
    n: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    ks_distance_vs_fitted_normal: float
    degenerate: bool

    def as_dict(self):
        return asdict(self)


def clt_diagnostics(samples, min_samples=200):
    """Moments and KS distance against the normal with matched mean and variance."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    scale = math.sqrt(var)
    if not scale > 1e-14 * max(1.0, abs(mean)):
        return CltDiagnostics(x.size, mean, var, math.nan, math.nan, math.nan, True)
    skew = float(stats.skew(x, bias=False))
    kurt = float(stats.kurtosis(x, fisher=True, bias=False))
    ks = float(stats.kstest(x, "norm", args=(mean, scale)).statistic)
    return CltDiagnostics(x.size, mean, var, skew, kurt, ks, False)
