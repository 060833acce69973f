import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablepou.analysis import (CltDiagnostics, RateFit, clt_diagnostics, em_char_exponent,
                                em_char_exponents, fit_rate, optimality_ratio, optimality_sweep,
                                ou_char_distance, ou_char_distances, ou_em_charfn,
                                ou_stationary_charfn, series_bound_ratio, series_bound_ratios,
                                sinc_derivative_sup, time_average, time_averages)
from stablepou.analysis import test_function as pick_h
from stablepou.model import example_1d
from stablepou.scheme import AlphaHarmonic, Explicit, HarmonicOffset, simulate_ensemble

GRID = np.arange(100, 5001, 100)

# D_50 for AlphaHarmonic(1.5): exponent by exact rational products, integral by
# mpmath tanh-sinh quadrature, both at 30 digits
S50_ALPHA15 = 0.654108358950469039031609173402
D50_ALPHA15 = 0.00674456569838366411771188634968

# min / max of D_n / eta_n^(1/alpha) over GRID, computed once and frozen
BANDS = {
    1.5: (0.12828472078028125, 0.14965886808517553),
    1.75: (0.2102503500913564, 0.221095915933432),
    2.0: (0.24381434947071925, 0.2502149733640972),
}


# --- characteristic functions ----------------------------------------------

def _direct_exponent(etas, alpha):
    # plain double loop over the product form
    total = 0.0
    n = len(etas)
    for j in range(n):
        p = 1.0
        for k in range(j + 1, n):
            p *= (1.0 - etas[k]) ** alpha
        total += etas[j] * p
    return total


@pytest.mark.parametrize("sched,alpha", [(HarmonicOffset(10), 1.5), (AlphaHarmonic(1.25), 1.25),
                                         (AlphaHarmonic(2.0), 2.0)])
def test_exponent_matches_direct_product(sched, alpha):
    n = 120
    direct = _direct_exponent(sched.etas(n), alpha)
    assert em_char_exponent(sched, n, alpha) == pytest.approx(direct, rel=1e-13)
    rec = em_char_exponents(sched, n, alpha)
    assert rec[-1] == pytest.approx(direct, rel=1e-13)
    assert rec[0] == sched.eta(1)


def test_exponent_high_precision_oracle():
    assert em_char_exponent(AlphaHarmonic(1.5), 50, 1.5) == pytest.approx(S50_ALPHA15, rel=1e-13)


def test_charfn_n1_and_u0():
    s = HarmonicOffset(10)
    assert ou_em_charfn(s, 1, 1.5, 0.7) == pytest.approx(math.exp(-0.7 ** 1.5 / 11), rel=1e-15)
    assert ou_em_charfn(s, 30, 1.5, 0.0) == 1.0
    assert ou_stationary_charfn(1.5, 0.0) == 1.0


class _BigStep:
    # duck-typed schedule with eta_1 = 1
    def etas(self, n):
        return np.array([1.0, 0.5][:n])


def test_charfn_rejects_big_steps():
    with pytest.raises(ValueError, match="eta_1"):
        ou_em_charfn(_BigStep(), 2, 1.5, 1.0)


def test_stationary_charfn_values():
    assert ou_stationary_charfn(2.0, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-15)
    mp.mp.dps = 30
    oracle = float(mp.exp(-mp.mpf(2) ** mp.mpf(1.5) / mp.mpf(1.5)))
    assert ou_stationary_charfn(1.5, 2.0) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ValueError):
        ou_stationary_charfn(1.0, 1.0)


@given(n=st.integers(1, 400), u=st.floats(-1, 1), alpha=st.sampled_from([1.25, 1.5, 2.0]))
def test_charfn_in_unit_interval(n, u, alpha):
    v = ou_em_charfn(AlphaHarmonic(alpha), n, alpha, u)
    assert 0.0 < v <= 1.0


# --- D_n and the optimality ratio ------------------------------------------

def test_distance_high_precision_oracle():
    d = ou_char_distance(AlphaHarmonic(1.5), 50, 1.5)
    assert d == pytest.approx(D50_ALPHA15, rel=1e-12)


@pytest.mark.parametrize("alpha", [1.25, 1.5, 1.75, 2.0])
def test_quadrature_node_convergence(alpha):
    s = AlphaHarmonic(alpha)
    for n in (10, 500, 5000):
        assert ou_char_distance(s, n, alpha, 64) == pytest.approx(ou_char_distance(s, n, alpha, 128),
                                                                  abs=1e-12)


def test_legendre_rule_agrees_loosely():
    s = AlphaHarmonic(1.5)
    assert ou_char_distance(s, 50, 1.5, 256, rule="legendre") == pytest.approx(D50_ALPHA15, rel=1e-6)
    with pytest.raises(ValueError):
        ou_char_distance(s, 50, 1.5, rule="simpson")


@pytest.mark.parametrize("alpha", [1.5, 1.75, 2.0])
def test_distance_positive_and_decreasing(alpha):
    d = ou_char_distances(AlphaHarmonic(alpha), GRID, alpha)
    assert np.all(d > 0)
    assert np.all(np.diff(d) < 0)


def test_vectorised_matches_scalar():
    s = AlphaHarmonic(1.75)
    ns = [10, 77, 300]
    np.testing.assert_allclose(ou_char_distances(s, ns, 1.75),
                               [ou_char_distance(s, n, 1.75) for n in ns], rtol=1e-12)


@pytest.mark.parametrize("alpha", sorted(BANDS))
def test_optimality_band_regression(alpha):
    r = optimality_sweep(alpha, GRID)["ratio"]
    lo, hi = BANDS[alpha]
    assert r.min() == pytest.approx(lo, rel=1e-9)
    assert r.max() == pytest.approx(hi, rel=1e-9)
    assert hi / lo <= 3


def test_optimality_ratio_scalar_and_sweep_columns():
    sw = optimality_sweep(2.0, [10, 100])
    assert optimality_ratio(2.0, 100) == pytest.approx(sw["ratio"][1], rel=1e-12)
    s = AlphaHarmonic(2.0)
    assert sw["t_n"][1] == s.t(100)
    assert sw["eta_n"][0] == s.eta(10)
    with pytest.raises(ValueError):
        optimality_ratio(2.0, 5)


# --- series bound ----------------------------------------------------------

def test_series_n1_is_eta1():
    s = HarmonicOffset(10)
    assert series_bound_ratio(s, 1.0, 1.5, 1) == pytest.approx(1 / 11, rel=1e-15)


def test_series_direct_summation_oracle():
    s, theta, alpha, n = HarmonicOffset(10), 1.0, 1.5, 300
    etas = s.etas(n)
    t = np.concatenate([[0.0], np.cumsum(etas)])
    direct = sum(math.exp(-theta * (t[n] - t[i])) * etas[i - 1] ** (1 + 1 / alpha)
                 for i in range(1, n + 1)) / etas[-1] ** (1 / alpha)
    assert series_bound_ratio(s, theta, alpha, n) == pytest.approx(direct, rel=1e-12)


def test_series_bounded_on_decade_grid():
    r = series_bound_ratios(HarmonicOffset(10), 1.0, 1.5, [10, 100, 1000, 10_000])
    assert r.max() / r.min() <= 5


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(0.2, 3.0), alpha=st.sampled_from([1.25, 1.5, 2.0]))
def test_series_monotone_in_theta(theta, alpha):
    ns = [1, 5, 50, 500]
    s = HarmonicOffset(10)
    a = series_bound_ratios(s, theta, alpha, ns)
    b = series_bound_ratios(s, 2 * theta, alpha, ns)
    assert np.all(b <= a * (1 + 1e-14))


# --- supporting constant ---------------------------------------------------

def test_sinc_derivative_sup_against_dense_grid():
    z_star, value = sinc_derivative_sup()
    z = np.linspace(1e-3, 200, 2_000_001)
    dense = np.abs((z * np.cos(z) - np.sin(z)) / z ** 2)
    assert value == pytest.approx(dense.max(), abs=1e-10)
    assert z_star == pytest.approx(z[np.argmax(dense)], abs=1e-4)


# --- rate fits -------------------------------------------------------------

def test_fit_rate_exact_power_law():
    eta = np.geomspace(1e-4, 1e-1, 12)
    fit = fit_rate(np.column_stack([eta, 2 * eta ** 0.5]))
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(2), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_noisy():
    rng = np.random.default_rng(17)
    eta = np.geomspace(1e-4, 1e-1, 40)
    w = 3 * eta ** (1 / 1.5) * (1 + 0.05 * rng.standard_normal(40))
    assert abs(fit_rate(np.column_stack([eta, w])).slope - 1 / 1.5) <= 0.1


def test_fit_rate_constant():
    fit = fit_rate([(e, 0.3) for e in (0.1, 0.01, 0.001, 0.0001)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert isinstance(fit, RateFit)


@pytest.mark.parametrize("pts", [[(0.1, 1.0)] * 3, [(0.1, 1.0), (0.2, 0.0), (0.3, 1.0), (0.4, 1.0)],
                                 [(0.1, 1.0)] * 5, [(-0.1, 1.0), (0.2, 1.0), (0.3, 1.0), (0.4, 1.0)]])
def test_fit_rate_rejects(pts):
    with pytest.raises(ValueError):
        fit_rate(pts)


@settings(max_examples=30)
@given(perm_seed=st.integers(0, 1000))
def test_fit_rate_order_invariant(perm_seed):
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0.01, 1, 10), rng.uniform(0.1, 2, 10)])
    shuffled = pts[np.random.default_rng(perm_seed).permutation(10)]
    assert fit_rate(pts) == fit_rate(shuffled)


# --- time averages ---------------------------------------------------------

def test_time_average_constant_one():
    path = [(0.0, [3.0]), (0.1, [1.0]), (0.35, [-2.0])]
    assert time_average(path, "one") == 1.0


def test_time_average_single_step():
    assert time_average([(0.0, [0.4]), (0.2, [9.0])], "clip") == pytest.approx(0.4, rel=1e-15)
    assert time_average([(0.0, [4.0]), (0.2, [9.0])], "clip") == 1.0


def test_time_average_left_endpoint_rule():
    times = np.array([0.0, 0.5, 1.5, 2.0])
    states = np.array([[1.0], [-1.0], [2.0], [-5.0]])
    # weights 0.5, 1.0, 0.5 on the first three states
    assert time_averages(times, states, "indicator") == pytest.approx((0.5 + 0.5) / 2.0)


def test_time_average_errors():
    with pytest.raises(ValueError):
        time_average([], "one")
    with pytest.raises(ValueError):
        time_average([(0.0, [1.0])], "one")
    with pytest.raises(ValueError):
        pick_h("cubic")


def test_registry_is_bounded():
    x = np.linspace(-1e6, 1e6, 1001)[:, None]
    for tag in ("one", "indicator", "clip", "sin"):
        assert np.max(np.abs(pick_h(tag)(x))) <= 1.0


def test_time_average_stabilises_on_long_horizon():
    n = np.arange(1, 8001)
    sched = Explicit(0.05 / (1 + n / 2000))
    t = sched.times(8000)
    n2 = int(np.searchsorted(t, 2 * t[2000]))
    res = simulate_ensemble(example_1d(), sched, n2, np.zeros(20), 3, checkpoints=np.arange(n2 + 1))
    paths = res.checkpoint_states
    a_T = time_averages(t[:2001], paths[:2001], "indicator").mean()
    a_2T = time_averages(t[:n2 + 1], paths, "indicator").mean()
    assert abs(a_T - a_2T) < 0.05


# --- CLT diagnostics -------------------------------------------------------

def test_clt_diagnostics_normal():
    x = np.random.default_rng(21).standard_normal(100_000)
    d = clt_diagnostics(x)
    assert abs(d.skewness) <= 0.03
    assert abs(d.excess_kurtosis) <= 0.06
    assert d.ks_distance_vs_fitted_normal <= 0.005
    assert not d.degenerate


def test_clt_diagnostics_exponential():
    d = clt_diagnostics(np.random.default_rng(22).exponential(size=100_000))
    assert d.skewness == pytest.approx(2.0, abs=0.1)
    assert d.mean == pytest.approx(1.0, abs=0.02)


def test_clt_diagnostics_degenerate_and_small():
    d = clt_diagnostics(np.full(300, 0.25))
    assert d.degenerate and d.variance == 0.0 and math.isnan(d.ks_distance_vs_fitted_normal)
    assert isinstance(d, CltDiagnostics) and d.as_dict()["n"] == 300
    with pytest.raises(ValueError):
        clt_diagnostics(np.zeros(199))
