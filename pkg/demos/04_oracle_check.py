"""Cross-checking the closed forms against brute force.

The worst-case mean is recomputed by moving every support point against the
portfolio and, independently, by a conic solver over all displacements. The
constrained second moment is recomputed by minimizing its two-multiplier
dual numerically.
"""

import numpy as np

from drmv import RobustParams, empirical_moments, worst_case_mean
from drmv.moments import ReturnSeries
from drmv.oracle import PerturbationProblem, agreement_suite, oracle_worst_case_mean

pts = np.array([[1.0, 0.0], [0.0, 1.0]])
phi = np.array([0.5, 0.5])
ref = oracle_worst_case_mean(PerturbationProblem(pts, phi, 0.25, 2.0))
got = worst_case_mean(phi, empirical_moments(ReturnSeries(pts)), RobustParams(delta=0.25))
print(f"two unit points, equal weights, delta=0.25: closed form {got:.12f}, oracle {ref:.12f}\n")

for name, err, tol, ok in agreement_suite(seed=1, instances=50):
    print(f"{'PASS' if ok else 'FAIL'} {name:<24} worst relative error {err:.2e} (tolerance {tol:g})")
