"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; ``conftest.py`` prints them at the end
of the session. Run this file directly to get the same lines without pytest's
own report.
"""

import math
import subprocess
import sys
import time

import numpy as np
from scipy.signal import lfilter

from drmv import sample_data_path
from drmv.calibration import calibrate_alpha, calibrate_delta, l0_sample
from drmv.duality import (
    INFEASIBLE,
    RobustParams,
    inner_max_second_moment,
    robust_objective,
    worst_case_mean,
)
from drmv.markowitz import gmv_portfolio, solve_markowitz
from drmv.moments import (
    EmpiricalMoments,
    ReturnSeries,
    andrews_bandwidth,
    empirical_moments,
    long_run_covariance,
)
from drmv.oracle import (
    PerturbationProblem,
    numeric_sup_l0,
    oracle_dual_value,
    oracle_worst_case_mean,
    random_panel,
    random_weights,
)
from drmv.solver import robust_objective_gradient, solve_robust
from test_solver import CASES, equality_qp, panel_moments, random_feasible_points

ORDERS = (1.0, 2.0, math.inf)
RESULTS = []


def conj(p):
    return math.inf if p == 1.0 else 1.0 if math.isinf(p) else p / (p - 1.0)


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_01_worst_case_mean_vs_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(2, 11)), int(rng.integers(1, 5))
        p = ORDERS[int(rng.integers(0, 3))]
        delta = float(rng.uniform(0.0, 0.5))
        pts, phi = random_panel(rng, n, d), random_weights(rng, d)
        ref = oracle_worst_case_mean(PerturbationProblem(pts, phi, delta, conj(p)), cross_check=True)
        got = worst_case_mean(phi, empirical_moments(ReturnSeries(pts)), RobustParams(p=p, delta=delta))
        worst = max(worst, rel(got, ref))
    secs = time.perf_counter() - t0
    record(1, "worst-case mean vs perturbation oracle", worst <= 1e-4 and secs < 30,
           f"max rel err {worst:.2e} (tol 1e-4), {secs:.1f}s (limit 30s)")


def test_02_second_moment_vs_dual_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst, boundary = 0.0, 0
    for i in range(100):
        n, d = int(rng.integers(2, 11)), int(rng.integers(1, 5))
        p = ORDERS[int(rng.integers(0, 3))]
        delta = float(rng.uniform(1e-4, 0.5))
        pts, phi = random_panel(rng, n, d), random_weights(rng, d)
        m = float(np.mean(pts @ phi))
        radius = math.sqrt(delta) * float(np.linalg.norm(phi, p))
        frac = (1.0 if i % 2 else -1.0) if i < 10 else float(rng.uniform(-1.0, 1.0))
        boundary += i < 10
        alpha = m + frac * radius
        got = inner_max_second_moment(phi, alpha, empirical_moments(ReturnSeries(pts)),
                                      RobustParams(p=p, delta=delta))
        ref = oracle_dual_value(phi, alpha, pts, delta, conj(p))
        if got is INFEASIBLE or ref is INFEASIBLE:
            worst = math.inf
        else:
            worst = max(worst, rel(got, ref))
    secs = time.perf_counter() - t0
    record(2, "worst-case second moment vs dual oracle", worst <= 1e-5 and secs < 60,
           f"max rel err {worst:.2e} (tol 1e-5) incl. {boundary} boundary cases, "
           f"{secs:.1f}s (limit 60s)")


def test_03_objective_is_max_over_alpha():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst_val, worst_pos = 0.0, 0.0
    for _ in range(50):
        n, d = int(rng.integers(3, 30)), int(rng.integers(1, 6))
        p = ORDERS[int(rng.integers(0, 3))]
        delta = float(10 ** rng.uniform(-5, -0.5))
        pts, phi = random_panel(rng, n, d), random_weights(rng, d)
        mom, prm = empirical_moments(ReturnSeries(pts)), RobustParams(p=p, delta=delta)
        centre = float(phi @ mom.mean)
        radius = math.sqrt(delta) * float(np.linalg.norm(phi, p))
        grid = np.linspace(centre - radius, centre + radius, 10_000)
        vals = np.array([inner_max_second_moment(phi, a, mom, prm) - a * a for a in grid])
        k = int(np.argmax(vals))
        worst_val = max(worst_val, rel(vals[k], robust_objective(phi, mom, prm)))
        worst_pos = max(worst_pos, abs(grid[k] - centre) / (grid[1] - grid[0]))
    secs = time.perf_counter() - t0
    ok = worst_val <= 1e-6 and worst_pos <= 1.0 and secs < 30
    record(3, "robust objective equals max over alpha grid", ok,
           f"max rel err {worst_val:.2e} (tol 1e-6), argmax offset {worst_pos:.2f} steps "
           f"(limit 1), {secs:.1f}s (limit 30s)")


def test_04_zero_radius_reductions():
    t0 = time.perf_counter()
    gmv_err = qp_err = 0.0
    for seed in range(20):
        m = panel_moments(400 + seed, d=2 + seed % 5)
        sol = solve_robust(m, RobustParams(delta=0.0, alpha_bar=-10.0))
        gmv_err = max(gmv_err, float(np.abs(sol.phi - gmv_portfolio(m)).max()))
        rho = float(gmv_portfolio(m) @ m.mean) + 0.004
        sol = solve_robust(m, RobustParams(delta=0.0, alpha_bar=rho, rho=rho))
        qp_err = max(qp_err, float(np.abs(sol.phi - equality_qp(m, rho)).max()))
    secs = time.perf_counter() - t0
    record(4, "zero-radius solver reductions", max(gmv_err, qp_err) <= 1e-6 and secs < 30,
           f"GMV max err {gmv_err:.1e}, equality-QP max err {qp_err:.1e} (tol 1e-6), "
           f"{secs:.1f}s (limit 30s)")


def test_05_solver_optimality_and_gradient():
    violations = 0
    for i, (m, prm) in enumerate(CASES):
        sol = solve_robust(m, prm)
        pts = random_feasible_points(m, prm, 200, np.random.default_rng(i))
        violations += sum(sol.objective > robust_objective(phi, m, prm) * (1 + 1e-9) for phi in pts)
    rng = np.random.default_rng(505)
    worst = 0.0
    for k in range(50):
        d = int(rng.integers(2, 6))
        m = panel_moments(600 + k, d=d)
        prm = RobustParams(p=2.0, delta=float(10 ** rng.uniform(-5, -1)))
        phi = random_weights(rng, d)
        g = robust_objective_gradient(phi, m, prm)
        h = 1e-6
        fd = np.array([(robust_objective(phi + h * e, m, prm) - robust_objective(phi - h * e, m, prm))
                       / (2 * h) for e in np.eye(d)])
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    record(5, "solver beats random feasible points; gradient matches differences",
           violations == 0 and worst <= 1e-6,
           f"{violations} violations over {len(CASES)} instances x 200 points, "
           f"gradient max rel err {worst:.1e} (tol 1e-6)")


def test_06_limit_variable_sup_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(1000):
        z = rng.normal(0, 10 ** rng.uniform(-2, 1), int(rng.integers(1, 7)))
        c = float(rng.uniform(0.0, 0.9))
        ref = numeric_sup_l0(z, c)
        worst = max(worst, abs(l0_sample(z, c) - ref) / max(abs(ref), 1e-300))
    secs = time.perf_counter() - t0
    record(6, "closed-form limit variable vs numeric supremum", worst <= 1e-6 and secs < 10,
           f"max rel err {worst:.1e} (tol 1e-6), {secs:.1f}s (limit 10s)")


# population for the statistical criteria: three correlated Gaussian assets
MU = np.array([0.010, 0.006, 0.014])
SD = np.array([0.04, 0.03, 0.06])
COV = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.1], [0.2, 0.1, 1.0]]) * np.outer(SD, SD)
RHO = 0.012  # mean-constraint multiplier about 0.45 at the population optimum


def gaussian_panel(rng, n):
    return MU + rng.standard_normal((n, 3)) @ np.linalg.cholesky(COV).T


def test_07_radius_scales_inverse_n():
    t0 = time.perf_counter()
    n = 1000
    ratios = []
    for r in range(20):
        x = gaussian_panel(np.random.default_rng([707, r]), 4 * n)
        small = calibrate_delta(ReturnSeries(x[:n]), RHO, 0.05, 100_000, seed=r).delta_star
        large = calibrate_delta(ReturnSeries(x), RHO, 0.05, 100_000, seed=r).delta_star
        ratios.append(small / large)
    avg = float(np.mean(ratios))
    secs = time.perf_counter() - t0
    record(7, "radius ratio n vs 4n", 3.4 <= avg <= 4.6 and secs < 300,
           f"mean ratio {avg:.3f} over 20 reps (range [3.4, 4.6]), {secs:.1f}s (limit 300s)")


def test_08_floor_coverage():
    t0 = time.perf_counter()
    pop = EmpiricalMoments.from_mean_cov(MU, COV)
    phi_star = solve_markowitz(pop, RHO).phi
    n, hits = 5000, 0
    for k in range(500):
        x = gaussian_panel(np.random.default_rng([808, k]), n)
        s = ReturnSeries(x)
        dc = calibrate_delta(s, RHO, 0.05, 100_000, seed=k)
        ac = calibrate_alpha(s, dc.phi_plugin, RHO, dc.delta_star, 0.05)
        lhs = float(phi_star @ (x.mean(axis=0) - MU))
        rhs = float(np.linalg.norm(phi_star)) * math.sqrt(dc.delta_star) * (1.0 - ac.v0)
        hits += lhs >= rhs
    cover = hits / 500
    secs = time.perf_counter() - t0
    record(8, "population optimum stays feasible", cover >= 0.92 and secs < 300,
           f"coverage {cover:.3f} over 500 panels of n={n} (need >= 0.92), "
           f"{secs:.1f}s (limit 300s)")


def test_09_hac_ar1():
    x = lfilter([1.0], [1.0, -0.5], np.random.default_rng(0).standard_normal(50_500))[500:]
    bw = andrews_bandwidth(x)
    lr = float(long_run_covariance(x, bw).matrix[0, 0])
    record(9, "long-run variance of AR(1) with coefficient 0.5", abs(lr - 4.0) <= 0.4,
           f"estimate {lr:.4f} vs 4.0 (tol 10%), bandwidth {bw}")


def test_10_cli_determinism(tmp_path):
    outs = []
    for k, workers in enumerate(("1", "1", "4")):
        path = tmp_path / f"r{k}.json"
        proc = subprocess.run([sys.executable, "-m", "drmv.cli", "solve", "--returns",
                               sample_data_path(), "--rho", "0.01", "--seed", "42",
                               "--workers", workers, "--out", str(path)],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0, proc.stderr
        outs.append(path.read_bytes())
    same = outs[0] == outs[1] == outs[2]
    record(10, "solve report byte-identical across runs and worker counts", same,
           f"{len(outs[0])} bytes, runs identical: {outs[0] == outs[1]}, "
           f"workers 1 vs 4 identical: {outs[0] == outs[2]}")


if __name__ == "__main__":
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", __file__, "-q"]))
