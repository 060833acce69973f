"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The long pipeline runs (W1 curve and CLT, at one and two workers) are
module-scoped fixtures shared by the last three criteria.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from stablepou.analysis import (clt_diagnostics, em_char_exponents, fit_rate,
                                optimality_sweep, ou_em_charfn, series_bound_ratios)
from stablepou.config import load_config
from stablepou.experiments import run_experiment, sinkhorn_selftest
from stablepou.model import (dissipation_gap, example_1d, example_2d, find_stability_certificate,
                             mollifier_rho, mollifier_rho_dot)
from stablepou.noise import RngStream, sample_standard_stable
from stablepou.scheme import HarmonicOffset, jacobian_flow_batch

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


# --- 1 ---------------------------------------------------------------------

def test_c01_mollifier_exactness(acceptance):
    def run():
        worst = 0.0
        for eps in (0.01, 0.1, 0.5):
            errs = [abs(mollifier_rho(eps, eps) - eps), abs(mollifier_rho(eps, -eps)),
                    abs(mollifier_rho_dot(eps, -eps)), abs(mollifier_rho_dot(eps, eps) - 1),
                    abs(mollifier_rho_dot(eps, 0.0) - 0.5)]
            grid = np.linspace(-2 * eps, 2 * eps, 10_000)
            excess = max(0.0, float(np.max(np.abs(mollifier_rho_dot(eps, grid)))) - 1.0)
            worst = max(worst, max(errs), excess)
        return worst
    worst, secs = _timed(run)
    ok = worst <= 1e-12 and secs < 1
    acceptance(1, "mollifier exactness", ok, f"max deviation {worst:.2e}, {secs:.2f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------

def test_c02_certificate_reproduction(acceptance):
    cert, secs = _timed(lambda: find_stability_certificate(example_2d()))
    ok = (abs(cert.lambda1 - 2) <= 1e-9 and abs(cert.lambda2 - 3) <= 1e-9
          and abs(cert.theta - 1) <= 1e-9 and np.array_equal(cert.Q, np.eye(2)) and secs < 1)
    acceptance(2, "certificate reproduction", ok,
               f"lambda1={cert.lambda1:.12g} lambda2={cert.lambda2:.12g} theta={cert.theta:.12g} "
               f"Q={cert.method}, {secs:.2f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------

def test_c03_dissipation_inequality(acceptance):
    def run():
        worst = -np.inf
        for make in (example_1d, example_2d):
            spec = make()
            cert = find_stability_certificate(spec)
            rng = np.random.default_rng(3)
            x = rng.uniform(-10, 10, size=(10_000, spec.d))
            y = rng.uniform(-10, 10, size=(10_000, spec.d))
            for eps in (0.01, 0.1, 0.5):
                worst = max(worst, float(np.max(dissipation_gap(spec, eps, cert, x, y))))
        return worst
    worst, secs = _timed(run)
    ok = worst <= 1e-9 and secs < 5
    acceptance(3, "dissipation inequality", ok, f"max gap {worst:.3e}, {secs:.2f}s")
    assert ok


# --- 4 ---------------------------------------------------------------------

def test_c04_stable_sampler_calibration(acceptance):
    def run():
        x = sample_standard_stable(2.0, RngStream(40), 1_000_000)
        p = stats.kstest(x, "norm", args=(0.0, math.sqrt(2.0))).pvalue
        zmax = 0.0
        for i, alpha in enumerate((1.25, 1.5, 1.75)):
            s = sample_standard_stable(alpha, RngStream(41, i), 1_000_000)
            for u in (0.5, 1.0):
                c = np.cos(u * s)
                zmax = max(zmax, abs(c.mean() - math.exp(-u ** alpha)) / (c.std() / math.sqrt(c.size)))
        return p, zmax
    (p, zmax), secs = _timed(run)
    ok = p > 1e-3 and zmax <= 3 and secs < 30
    acceptance(4, "stable sampler calibration", ok,
               f"KS p-value {p:.3g} at alpha=2, worst charfn error {zmax:.2f} SE, {secs:.1f}s")
    assert ok


# --- 5 ---------------------------------------------------------------------

def test_c05_em_characteristic_function(acceptance):
    alpha, n, paths = 1.5, 200, 100_000
    sched = HarmonicOffset(10)

    def run():
        etas = sched.etas(n)
        stream = RngStream(50)
        y = np.zeros(paths)
        for eta in etas:
            y = (1 - eta) * y + eta ** (1 / alpha) * sample_standard_stable(alpha, stream, paths)
        z = []
        for u in (0.5, 1.0):
            c = np.cos(u * y)
            z.append(abs(c.mean() - ou_em_charfn(sched, n, alpha, u)) / (c.std() / math.sqrt(paths)))
        return max(z)
    zmax, secs = _timed(run)
    ok = zmax <= 3 and secs < 20
    acceptance(5, "closed-form EM characteristic function", ok, f"worst error {zmax:.2f} SE, {secs:.1f}s")
    assert ok


# --- 6 ---------------------------------------------------------------------

def test_c06_deterministic_optimality(acceptance):
    ns = np.arange(100, 5001, 100)

    def run():
        rows = {}
        for alpha in (1.25, 1.5, 1.75, 2.0):
            sw = optimality_sweep(alpha, ns)
            r, d = sw["ratio"], sw["D_n"]
            positive = bool(np.all(r > 0))
            band = float(r.max() / r.min()) if positive else math.nan
            if np.all(d > 0):
                shape = np.log(np.exp(-alpha * sw["t_n"]) + sw["eta_n"])
                slope = float(stats.linregress(shape, np.log(d)).slope)
            else:
                slope = math.nan
            rows[alpha] = (positive, float(r.min()), band, slope)
        return rows
    rows, secs = _timed(run)
    ok = secs < 60
    parts = []
    for alpha, (positive, rmin, band, slope) in rows.items():
        ok &= positive and band <= 3 and abs(slope - 1) <= 0.05
        parts.append(f"a={alpha:g}: min={rmin:.4g} band={band:.4g} slope={slope:.4g}")
    acceptance(6, "deterministic optimality", ok, "; ".join(parts) + f", {secs:.2f}s")
    assert ok


# --- 7 ---------------------------------------------------------------------

def test_c07_series_bound(acceptance):
    ns = np.arange(100, 10_001, 20)

    def run():
        rows = {}
        for alpha in (1.25, 1.5, 2.0):
            r = series_bound_ratios(HarmonicOffset(10), 1.0, alpha, ns)
            rise = float(np.max(np.diff(r)))
            rows[alpha] = (rise <= 0, rise, float(r.max() / r.min()))
        return rows
    rows, secs = _timed(run)
    ok = secs < 5
    parts = []
    for alpha, (monotone, rise, plateau) in rows.items():
        ok &= monotone and plateau <= 2
        parts.append(f"a={alpha:g}: largest step increase {rise:.3g}, max/min {plateau:.4g}")
    acceptance(7, "series bound", ok, "; ".join(parts) + f", {secs:.2f}s")
    assert ok


# --- 8 ---------------------------------------------------------------------

def test_c08_jacobi_flow_decay(acceptance):
    spec = example_2d()
    times = [1.0, 2.0, 4.0]

    def run():
        rng = np.random.default_rng(80)
        x0 = rng.uniform(-5, 5, size=(100, 2))
        u = rng.normal(size=(100, 2))
        streams = [RngStream(81, i) for i in range(100)]
        J = jacobian_flow_batch(spec, 0.1, x0, times, 1e-3, streams)
        ju = np.einsum("tnij,nj->tni", J, u)
        ratio = np.sum(ju ** 2, axis=2) / np.sum(u ** 2, axis=1)
        return max(float(np.max(ratio[k] / math.exp(-2 * t))) for k, t in enumerate(times))
    worst, secs = _timed(run)
    ok = worst <= 1.2 and secs < 60
    acceptance(8, "Jacobi-flow decay", ok, f"max |J u|^2 / (|u|^2 e^(-2t)) = {worst:.4f}, {secs:.1f}s")
    assert ok


# --- 9 ---------------------------------------------------------------------

def test_c09_sinkhorn_oracle_agreement(acceptance):
    cfg = load_config(os.path.join(CONFIGS, "sinkhorn_selftest.json"))
    checks, secs = _timed(lambda: {c.name: c for c in sinkhorn_selftest(cfg)})
    names = ("oracle_agreement", "single_atom_exact", "tau_monotone")
    ok = all(checks[n].passed for n in names) and secs < 10
    acceptance(9, "Sinkhorn oracle agreement", ok,
               ", ".join(f"{n}={checks[n].value:.3g}" for n in names) + f", {secs:.1f}s")
    assert ok


# --- 10 to 12: pipeline runs -------------------------------------------------

def _pipeline(name, workers, out_dir):
    cfg = load_config(os.path.join(CONFIGS, name)).with_overrides(workers=workers,
                                                                  output_dir=str(out_dir))
    outcome, secs = _timed(lambda: run_experiment(cfg))
    return outcome, secs, out_dir


@pytest.fixture(scope="module")
def w1_run(tmp_path_factory):
    return _pipeline("w1_desk.json", 1, tmp_path_factory.mktemp("w1_w1"))


@pytest.fixture(scope="module")
def clt_run(tmp_path_factory):
    return _pipeline("clt.json", 1, tmp_path_factory.mktemp("clt_w1"))


def _read_curve(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data["k"].astype(int), data["eta_k"], data["w1_mean"]


@pytest.mark.slow
def test_c10_w1_curve_shape(acceptance, w1_run):
    _, secs, out = w1_run
    k, eta, w1 = _read_curve(out / "w1_curve.csv")
    at = dict(zip(k, w1))
    lower = at[500] < at[50]
    tail = fit_rate(np.column_stack([k[-10:], w1[-10:]]))
    eta_fit = fit_rate(np.column_stack([eta[-10:], w1[-10:]]))
    ok = lower and tail.slope < 0 and secs < 600
    acceptance(10, "W1-curve shape", ok,
               f"w1(500)={at[500]:.4f} vs w1(50)={at[50]:.4f}; tail slope in k {tail.slope:.3f} "
               f"(in eta {eta_fit.slope:.3f}), {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_c11_clt_shape(acceptance, clt_run):
    _, secs, out = clt_run
    data = np.genfromtxt(out / "clt.csv", delimiter=",", names=True)
    d = clt_diagnostics(data["statistic"])
    ok = (not d.degenerate and abs(d.skewness) <= 0.35 and abs(d.excess_kurtosis) <= 0.7
          and secs < 600)
    acceptance(11, "CLT shape", ok,
               f"skewness {d.skewness:.3f}, excess kurtosis {d.excess_kurtosis:.3f}, "
               f"KS {d.ks_distance_vs_fitted_normal:.3f}, {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_c12_determinism_across_workers(acceptance, w1_run, clt_run, tmp_path):
    same = []
    for name, (_, _, out), files in (("w1_desk.json", w1_run, ["w1_curve.csv"]),
                                     ("clt.json", clt_run, ["clt.csv", "clt_summary.csv"])):
        _, _, other = _pipeline(name, 2, tmp_path / name.split(".")[0])
        for f in files:
            same.append((f, (out / f).read_bytes() == (other / f).read_bytes()))
    ok = all(s for _, s in same)
    acceptance(12, "determinism across workers", ok,
               ", ".join(f"{f} {'identical' if s else 'DIFFERS'}" for f, s in same))
    assert ok
