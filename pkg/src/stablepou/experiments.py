"""Experiment drivers behind the command-line subcommands.

Each ``run_*`` function takes a validated :class:`ExperimentConfig` and an
output directory, writes its CSV (and SVG) files there and returns a
:class:`RunOutcome` whose ``checks`` decide the exit status.

Random streams are reserved per repeat and role: trajectory ``i`` of role
``role`` in repeat ``r`` uses stream index ``(r << 33) | (role << 32) | i``
under ``cfg.master_seed``.  Nothing depends on the worker count.
"""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .config import Experiment
from .errors import CertificateNotFound, StablePOUError, StageError
from .model import check_assumption1, check_m_matrix, find_stability_certificate
from .noise import RngStream
from .scheme import check_assumption2, simulate_ensemble
from .svg import loglog_plot
from .transport import (EmpiricalMeasure, cost_matrix, sinkhorn, w1_exact_1d,
                        w1_exact_assignment, w1_sinkhorn)

__all__ = [
    "RunOutcome",
    "Check",
    "ROLE_TARGET",
    "ROLE_REFERENCE",
    "ROLE_SELFTEST",
    "stream_base",
    "run_experiment",
    "run_w1_curve",
    "run_ou_optimality",
    "run_clt_check",
    "run_check_model",
    "run_sinkhorn_selftest",
    "write_csv",
]

ROLE_TARGET = 0
ROLE_REFERENCE = 1
ROLE_SELFTEST = 0

# trajectories per simulation slice when whole paths are kept
_PATH_SLICE = 256


def stream_base(repeat, role):
    if not 0 <= repeat < 2 ** 31 or role not in (0, 1):
        raise ValueError("repeat must fit in 31 bits and role must be 0 or 1")
    return (int(repeat) << 33) | (int(role) << 32)


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    detail: str = ""
    required: bool = True


@dataclass
class RunOutcome:
    experiment: str
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.required)

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    """UTF-8 CSV with a header row; floats are written with ``repr`` (round-trip exact)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _stage(name, repeat, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StablePOUError, ValueError, FloatingPointError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, repeat, exc) from exc


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# ----------------------------------------------------------------------------
# W1 curve


def _checkpoint_grid(n_steps, every):
    cps = list(range(every, n_steps + 1, every))
    if not cps or cps[-1] != n_steps:
        cps.append(n_steps)
    return np.array(cps)


def _sinkhorn_job(args):
    x, ref, tau, max_iter, tol = args
    a = EmpiricalMeasure.uniform(x)
    plan = sinkhorn(a.weights, ref.weights, cost_matrix(a, ref), tau,
                    max_iter=max_iter, tol=tol)
    return plan.value, plan.converged


def reference_initial_states(cfg):
    """``linspace(lo, hi, N2)`` repeated along every coordinate."""
    lo, hi = cfg.reference_grid
    grid = np.linspace(lo, hi, cfg.n_trajectories)
    return np.repeat(grid[:, None], cfg.model.d, axis=1)


def run_w1_curve(cfg, out_dir):
    spec, sched = cfg.model, cfg.schedule
    n1, n2 = cfg.n_steps, cfg.n_trajectories
    n4 = cfg.reference_multiplier * n1
    cps = _checkpoint_grid(n1, cfg.checkpoint_every)
    x0 = np.tile(cfg.initial_state, (n2, 1))
    y0 = reference_initial_states(cfg)
    values = np.empty((cfg.n_repeats, cps.size))
    unconverged = 0
    ref = None
    for r in range(cfg.n_repeats):
        tgt = _stage("target-ensemble", r, simulate_ensemble, spec, sched, n1, x0,
                     cfg.master_seed, workers=cfg.workers,
                     stream_start=stream_base(r, ROLE_TARGET), checkpoints=cps)
        if ref is None or cfg.rerandomize_reference:
            rr = r if cfg.rerandomize_reference else 0
            res = _stage("reference-ensemble", r, simulate_ensemble, spec, sched, n4, y0,
                         cfg.master_seed, workers=cfg.workers,
                         stream_start=stream_base(rr, ROLE_REFERENCE))
            ref = EmpiricalMeasure.uniform(res.endpoints)
        jobs = [(st, ref, cfg.tau, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol)
                for st in tgt.checkpoint_states]
        out = _stage("sinkhorn", r, _map, _sinkhorn_job, jobs, cfg.workers)
        values[r] = [v for v, _ in out]
        unconverged += sum(not ok for _, ok in out)

    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1) if cfg.n_repeats > 1 else np.zeros(cps.size)
    times = sched.times(n1)
    etas = sched.etas(n1)
    rows = [(int(k), times[k], etas[k - 1], mean[i], std[i]) for i, k in enumerate(cps)]
    write_csv(os.path.join(out_dir, "w1_curve.csv"),
              ["k", "t_k", "eta_k", "w1_mean", "w1_stddev"], rows)
    loglog_plot(os.path.join(out_dir, "w1_curve.svg"),
                [("mean W1", cps.tolist(), mean.tolist())],
                title=f"W1 to the reference measure (alpha = {spec.alpha:g}, tau = {cfg.tau:g})",
                xlabel="iteration k", ylabel="W1 (Sinkhorn)")

    outcome = RunOutcome(Experiment.W1_CURVE.value, files=["w1_curve.csv", "w1_curve.svg"])
    early = int(np.argmin(np.abs(cps - n1 / 10.0)))
    outcome.checks.append(Check(
        "decay", bool(mean[-1] < mean[early]), float(mean[-1] - mean[early]),
        f"w1_mean at k={cps[-1]} minus w1_mean at k={cps[early]}"))
    tail = min(10, cps.size)
    if tail >= 4:
        # the same log-log least squares against k and against eta_k; decay is a
        # negative slope in k (and a positive one in eta, which falls with k)
        fit_k = analysis.fit_rate(list(zip(cps[-tail:].astype(float), mean[-tail:])))
        fit_eta = analysis.fit_rate(list(zip(etas[cps[-tail:] - 1], mean[-tail:])))
        outcome.checks.append(Check(
            "tail_slope", fit_k.slope < 0, fit_k.slope,
            f"log-log slope in k over the last {tail} checkpoints; "
            f"slope in eta is {fit_eta.slope:.4g}, r2={fit_k.r2:.3g}"))
    else:
        outcome.checks.append(Check("tail_slope", False, None, "fewer than 4 checkpoints"))
    outcome.checks.append(Check("sinkhorn_converged", unconverged == 0, unconverged,
                                "solves that hit sinkhorn_max_iter", required=False))
    return outcome


# ----------------------------------------------------------------------------
# OU optimality


def run_ou_optimality(cfg, out_dir):
    ns = np.arange(cfg.ou_n_min, cfg.ou_n_max + 1, cfg.ou_n_step)
    rows, series = [], []
    outcome = RunOutcome(Experiment.OU_OPTIMALITY.value,
                         files=["ou_optimality.csv", "ou_optimality.svg"])
    for alpha in cfg.alphas:
        sw = analysis.optimality_sweep(alpha, ns, cfg.quad_points)
        for i in range(ns.size):
            rows.append((alpha, int(ns[i]), sw["eta_n"][i], sw["D_n"][i], sw["ratio"][i]))
        ratio = sw["ratio"]
        positive = bool(np.all(ratio > 0))
        band = float(ratio.max() / ratio.min()) if positive else math.inf
        outcome.checks.append(Check(f"positive[alpha={alpha:g}]", positive,
                                    float(ratio.min()), "minimum ratio"))
        outcome.checks.append(Check(f"band[alpha={alpha:g}]", band <= 3.0, band,
                                    "r_max / r_min over the n grid, must be <= 3"))
        if positive:
            x = np.log(np.exp(-alpha * sw["t_n"]) + sw["eta_n"])
            slope = float(np.polyfit(x, np.log(sw["D_n"]), 1)[0])
        else:
            slope = math.nan
        outcome.checks.append(Check(f"shape_slope[alpha={alpha:g}]",
                                    bool(abs(slope - 1.0) <= 0.05), slope,
                                    "slope of log D_n on log(exp(-alpha t_n) + eta_n)"))
        series.append((f"alpha={alpha:g}", ns.tolist(), np.abs(sw["D_n"]).tolist()))
    write_csv(os.path.join(out_dir, "ou_optimality.csv"),
              ["alpha", "n", "eta_n", "D_n", "ratio"], rows)
    loglog_plot(os.path.join(out_dir, "ou_optimality.svg"), series,
                title="characteristic-function distance |D_n|", xlabel="n", ylabel="|D_n|")
    return outcome


# ----------------------------------------------------------------------------
# CLT


def clt_statistics(cfg):
    """Per-chain time averages and the normalised statistics ``sqrt(t_N) (avg - grand mean)``."""
    spec, sched = cfg.model, cfg.schedule
    n, R = cfg.n_steps, cfg.n_trajectories
    times = sched.times(n)
    base = stream_base(0, ROLE_TARGET)
    avgs = np.empty(R)
    x0 = cfg.initial_state
    record = np.arange(n + 1)
    for a in range(0, R, _PATH_SLICE):
        b = min(R, a + _PATH_SLICE)
        res = _stage("clt-ensemble", 0, simulate_ensemble, spec, sched, n,
                     np.tile(x0, (b - a, 1)), cfg.master_seed,
                     workers=cfg.workers, stream_start=base + a, checkpoints=record)
        avgs[a:b] = analysis.time_averages(times, res.checkpoint_states, cfg.test_function)
    mu_hat = float(math.fsum(avgs) / R)
    stat = math.sqrt(times[-1]) * (avgs - mu_hat)
    return times[-1], avgs, stat, mu_hat


def run_clt_check(cfg, out_dir, skew_max=0.35, kurt_max=0.7):
    t_n, avgs, stat, mu_hat = clt_statistics(cfg)
    write_csv(os.path.join(out_dir, "clt.csv"), ["chain", "time_average", "statistic"],
              [(i, avgs[i], stat[i]) for i in range(stat.size)])
    diag = _stage("clt-diagnostics", 0, analysis.clt_diagnostics, stat,
                  min_samples=min(200, stat.size))
    skew_ok = (not diag.degenerate) and abs(diag.skewness) <= skew_max
    kurt_ok = (not diag.degenerate) and abs(diag.excess_kurtosis) <= kurt_max
    summary = [
        ("n_chains", stat.size), ("n_steps", cfg.n_steps), ("t_N", t_n),
        ("test_function", cfg.test_function), ("mu_hat", mu_hat),
        ("mean", diag.mean), ("variance", diag.variance), ("skewness", diag.skewness),
        ("excess_kurtosis", diag.excess_kurtosis),
        ("ks_distance_vs_fitted_normal", diag.ks_distance_vs_fitted_normal),
        ("degenerate", diag.degenerate), ("skewness_ok", skew_ok), ("kurtosis_ok", kurt_ok),
    ]
    write_csv(os.path.join(out_dir, "clt_summary.csv"), ["metric", "value"], summary)
    outcome = RunOutcome(Experiment.CLT_CHECK.value, files=["clt.csv", "clt_summary.csv"])
    outcome.checks.append(Check("nondegenerate", not diag.degenerate, diag.variance,
                                "variance of the statistic"))
    outcome.checks.append(Check("skewness", skew_ok, diag.skewness, f"|skewness| <= {skew_max}"))
    outcome.checks.append(Check("excess_kurtosis", kurt_ok, diag.excess_kurtosis,
                                f"|excess kurtosis| <= {kurt_max}"))
    return outcome


# ----------------------------------------------------------------------------
# model checks


def run_check_model(cfg, out_dir):
    spec, sched = cfg.model, cfg.schedule
    outcome = RunOutcome(Experiment.CHECK_MODEL.value, files=["model_report.csv"])
    rows = []
    m_ok = check_m_matrix(spec.M)
    rows.append(("m_matrix", m_ok, ""))
    a1 = check_assumption1(spec)
    rows.append(("assumption1", a1.holds, a1.branch.value))
    outcome.checks += [Check("m_matrix", m_ok, m_ok), Check("assumption1", a1.holds, a1.branch.value)]
    try:
        cert = find_stability_certificate(spec)
    except CertificateNotFound as exc:
        cert = None
        diag = ";".join(f"{k}={v}" for k, v in sorted(exc.diagnostics.items()))
        rows.append(("certificate", False, f"{exc} [{diag}]"))
        outcome.checks.append(Check("certificate", False, None, f"{exc} [{diag}]"))
    if cert is not None:
        rows += [("certificate", True, cert.method), ("lambda1", "", cert.lambda1),
                 ("lambda2", "", cert.lambda2), ("lambda", "", cert.lam),
                 ("theta", "", cert.theta)]
        outcome.checks.append(Check("certificate", True, cert.theta, cert.method))
        a2 = check_assumption2(sched, cert.theta, spec.alpha)
        rows += [("eta1_lt_1", a2.eta1_ok, sched.eta(1)),
                 ("sum_eta_diverges", a2.sum_diverges.value, ""),
                 ("sum_eta2_converges", a2.sumsq_converges.value, ""),
                 ("omega", a2.omega_ok, a2.omega),
                 ("omega_bound", "", spec.alpha * a2.beta * cert.theta),
                 ("beta", "", a2.beta),
                 ("assumption2", a2.holds, "")]
        outcome.checks.append(Check("assumption2", a2.holds, a2.omega,
                                    f"omega={a2.omega:.6g}, bound alpha*beta*theta="
                                    f"{spec.alpha * a2.beta * cert.theta:.6g}"))
    write_csv(os.path.join(out_dir, "model_report.csv"), ["check", "verdict", "value"], rows)
    return outcome


# ----------------------------------------------------------------------------
# Sinkhorn self-test


def _instances(cfg):
    gen = RngStream(cfg.master_seed, stream_base(0, ROLE_SELFTEST)).generator
    out = []
    for _ in range(cfg.selftest_instances):
        n = int(gen.integers(1, cfg.selftest_max_atoms + 1))
        d = int(gen.integers(1, 3))
        x = gen.random((n, d))
        y = gen.random((n, d))
        out.append((EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y)))
    return out


def sinkhorn_selftest(cfg):
    """Transport invariants on seeded instances; returns a list of :class:`Check`."""
    insts = _instances(cfg)
    exact = [w1_exact_assignment(a, b) for a, b in insts]
    checks = []

    errs = []
    for (a, b), ex in zip(insts, exact):
        errs.append(abs(w1_sinkhorn(a, b, cfg.tau) - ex) / (1.0 + ex))
    worst = max(errs)
    checks.append(Check("oracle_agreement", worst <= 1e-3, worst,
                        f"max |S^tau - W1| / (1 + W1) at tau={cfg.tau:g}, limit 1e-3",
                        required=cfg.tau >= 200))

    singles = []
    for a, b in insts:
        if a.n == 1:
            singles.append(abs(w1_sinkhorn(a, b, cfg.tau) - float(cost_matrix(a, b)[0, 0])))
    gen = RngStream(cfg.master_seed, stream_base(0, ROLE_SELFTEST) + 1).generator
    for _ in range(10):
        a = EmpiricalMeasure.uniform(gen.normal(size=(1, 2)) * 5)
        b = EmpiricalMeasure.uniform(gen.normal(size=(1, 2)) * 5)
        singles.append(abs(w1_sinkhorn(a, b, 200.0) - float(cost_matrix(a, b)[0, 0])))
    checks.append(Check("single_atom_exact", max(singles) <= 1e-12, max(singles),
                        "single-atom pairs, limit 1e-12"))

    e20, e80 = [], []
    for (a, b), ex in zip(insts, exact):
        e20.append(abs(w1_sinkhorn(a, b, 20.0) - ex))
        e80.append(abs(w1_sinkhorn(a, b, 80.0) - ex))
    m20, m80 = float(np.median(e20)), float(np.median(e80))
    checks.append(Check("tau_monotone", m80 <= m20, m80 - m20,
                        f"median error at tau=80 ({m80:.3g}) vs tau=20 ({m20:.3g})"))

    worst_marg, worst_sym, worst_scale = 0.0, 0.0, 0.0
    for a, b in insts:
        C = cost_matrix(a, b)
        p = sinkhorn(a.weights, b.weights, C, cfg.tau)
        T = p.plan
        marg = max(np.max(np.abs(T.sum(axis=1) - a.weights)),
                   np.max(np.abs(T.sum(axis=0) - b.weights)))
        if p.converged:
            worst_marg = max(worst_marg, float(marg - p.marginal_error))
            q = sinkhorn(b.weights, a.weights, C.T, cfg.tau)
            if q.converged:
                worst_sym = max(worst_sym, abs(p.value - q.value))
        s = 3.0
        a2 = EmpiricalMeasure(a.points * s, a.weights)
        b2 = EmpiricalMeasure(b.points * s, b.weights)
        worst_scale = max(worst_scale, abs(w1_exact_assignment(a2, b2)
                                           - s * w1_exact_assignment(a, b)))
    checks.append(Check("marginal_feasibility", worst_marg <= 1e-9, worst_marg,
                        "plan marginal violation beyond the reported marginal_error"))
    checks.append(Check("symmetry", worst_sym <= 1e-6, worst_sym,
                        "|S(a,b) - S(b,a)| on converged instances"))
    checks.append(Check("scale_equivariance", worst_scale <= 1e-12, worst_scale,
                        "exact oracle under x -> 3x"))

    cross = 0.0
    gen = RngStream(cfg.master_seed, stream_base(0, ROLE_SELFTEST) + 2).generator
    for _ in range(100):
        n = int(gen.integers(1, 9))
        a = EmpiricalMeasure.uniform(gen.normal(size=(n, 1)))
        b = EmpiricalMeasure.uniform(gen.normal(size=(n, 1)))
        cross = max(cross, abs(w1_exact_1d(a, b) - w1_exact_assignment(a, b)))
    checks.append(Check("oracle_cross_check", cross <= 1e-12, cross,
                        "sorted coupling vs enumeration, d = 1"))
    return checks


def run_sinkhorn_selftest(cfg, out_dir):
    checks = sinkhorn_selftest(cfg)
    rows = []
    for c in checks:
        status = "pass" if c.passed else ("fail" if c.required else "info-fail")
        rows.append((c.name, status, c.value, c.detail))
    write_csv(os.path.join(out_dir, "sinkhorn_selftest.csv"),
              ["property", "status", "value", "detail"], rows)
    return RunOutcome(Experiment.SINKHORN_SELFTEST.value, checks=checks,
                      files=["sinkhorn_selftest.csv"])


_RUNNERS = {
    Experiment.CHECK_MODEL: run_check_model,
    Experiment.W1_CURVE: run_w1_curve,
    Experiment.OU_OPTIMALITY: run_ou_optimality,
    Experiment.CLT_CHECK: run_clt_check,
    Experiment.SINKHORN_SELFTEST: run_sinkhorn_selftest,
}


def run_experiment(cfg, out_dir=None):
    """Dispatch on ``cfg.experiment``; writes into ``out_dir`` (default ``cfg.output_dir``)."""
    out_dir = cfg.output_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    return _RUNNERS[cfg.experiment](cfg, out_dir)
