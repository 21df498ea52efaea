"""Brute-force reference computations for tests and the oracle-check command.

Nothing here calls the closed forms in :mod:`drmv.duality` or
:mod:`drmv.calibration`; norms and moments are recomputed locally so a bug
in the library cannot leak into its own reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .duality import INFEASIBLE

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class PerturbationProblem:
    """Transport-perturbation problem around the empirical support.

    Parameters
    ----------
    base_points : ndarray, shape (n, d)
        Support points of the empirical measure.
    phi : ndarray, shape (d,)
    delta : float
        Budget on the average squared ``q``-norm of the displacements.
    q : float
        Order of the transport-cost norm.
    mean_target : float, optional
        Unused by the worst-case-mean oracle; kept for the dual oracle.
    """

    base_points: np.ndarray
    phi: np.ndarray
    delta: float
    q: float
    mean_target: Optional[float] = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


def _conj(q: float) -> float:
    if q == 1.0:
        return math.inf
    if math.isinf(q):
        return 1.0
    return q / (q - 1.0)


def _norm(v, order: float) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float), ord=order))


def _aligned_direction(phi: np.ndarray, q: float) -> np.ndarray:
    """Unit ``q``-norm vector ``s`` maximizing ``phi^T s`` (Hoelder equality case)."""
    a = np.abs(phi)
    if math.isinf(q):
        return np.sign(phi)
    if q == 1.0:
        s = np.zeros_like(phi)
        j = int(np.argmax(a))
        s[j] = np.sign(phi[j])
        return s
    p = _conj(q)
    s = np.sign(phi) * a ** (p - 1.0)
    return s / _norm(s, q)


def golden_section(f, lo: float, hi: float, iters: int = 200):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
        if b - a <= 1e-15 * max(1.0, abs(a), abs(b)):
            break
    x = 0.5 * (a + b)
    return x, f(x)


def _structured_worst_mean(prob: PerturbationProblem) -> float:
    """Every displacement points along ``-s``; the common length comes from a scalar dual."""
    pts = np.asarray(prob.base_points, dtype=float)
    phi = np.asarray(prob.phi, dtype=float)
    base = float(np.mean(pts @ phi))
    if prob.delta == 0.0:
        return base
    s = _aligned_direction(phi, prob.q)
    gain = float(phi @ s)
    if gain == 0.0:
        return base
    # inf_{lam>0} lam * delta + gain^2 / (4 lam), searched over log(lam)
    centre = math.log(gain / math.sqrt(prob.delta))
    _, val = golden_section(lambda t: math.exp(t) * prob.delta + gain**2 / (4.0 * math.exp(t)),
                            centre - 30.0, centre + 30.0)
    return base - val


def _direct_worst_mean(prob: PerturbationProblem) -> float:
    """Solve the full displacement program with a conic solver."""
    import cvxpy as cp

    pts = np.asarray(prob.base_points, dtype=float)
    phi = np.asarray(prob.phi, dtype=float)
    n, d = pts.shape
    disp = cp.Variable((n, d))
    q = prob.q
    norms = cp.hstack([cp.norm(disp[i], q if not math.isinf(q) else "inf") for i in range(n)])
    obj = cp.Minimize(cp.sum((pts + disp) @ phi) / n)
    cons = [cp.sum(cp.square(norms)) <= n * prob.delta]
    problem = cp.Problem(obj, cons)
    problem.solve(solver="CLARABEL")
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"conic solver failed: {problem.status}")
    return float(problem.value)


def oracle_worst_case_mean(prob: PerturbationProblem, cross_check: bool = True) -> float:
    """Worst-case mean of ``phi^T R`` over displacements with mean squared cost ``<= delta``.

    The structured route is returned. With ``cross_check`` the full
    ``n x d`` displacement program is also solved and the two must agree to
    ``1e-6`` (absolute, scaled by the problem magnitude).
    """
    val = _structured_worst_mean(prob)
    if cross_check and prob.delta > 0.0:
        direct = _direct_worst_mean(prob)
        scale = 1.0 + abs(val)
        if abs(direct - val) > 1e-6 * scale:
            raise RuntimeError(f"oracle routes disagree: structured {val!r} vs direct {direct!r}")
    return val


def oracle_dual_value(phi, alpha: float, series, delta: float, q: float):
    """Minimize the two-multiplier dual of the constrained second-moment problem.

    The per-point supremum is taken in closed form (finite only when
    ``lambda1 > ||phi||_p^2``), ``lambda2`` is eliminated through its
    first-order condition, and ``lambda1`` is found by golden-section search
    on ``log(lambda1 - ||phi||_p^2)`` over ``(0, 1e6 ||phi||_p^2]``.

    Returns :data:`drmv.duality.INFEASIBLE` when the mean ``alpha`` is out of
    reach of the ball. Raises ``RuntimeError`` if an interior ``alpha`` puts
    the minimizer on the edge of the bracket.
    """
    pts = series.data if hasattr(series, "data") else np.atleast_2d(np.asarray(series, float))
    phi = np.asarray(phi, dtype=float)
    p = _conj(q)
    nsq = _norm(phi, p) ** 2
    proj = pts @ phi
    m = float(proj.mean())
    c = alpha - m
    if c * c > delta * nsq * (1.0 + 1e-12):
        return INFEASIBLE
    if delta == 0.0:
        # only alpha = m is feasible and nothing may move
        return float(np.mean(proj**2))

    def dual(log_kappa: float) -> float:
        kappa = math.exp(log_kappa)
        lam1 = kappa + nsq
        lam2 = 2.0 * alpha - 2.0 * c * lam1 / nsq
        per_point = proj**2 - lam2 * proj + (2.0 * proj - lam2) ** 2 * nsq / (4.0 * kappa)
        return float(per_point.mean()) + lam1 * delta + lam2 * alpha

    lo = math.log(nsq * 1e-14)
    hi = math.log(nsq * (1e6 - 1.0))
    x, val = golden_section(dual, lo, hi)
    # only on the boundary is the infimum approached as lambda1 -> inf
    edge = 1e-3 * (hi - lo)
    on_boundary = c * c >= delta * nsq * (1.0 - 1e-9)
    if x <= lo + edge or (x >= hi - edge and not on_boundary):
        raise RuntimeError(f"dual minimizer at the edge of the lambda1 bracket (log offset "
                           f"{x - lo:.3g} of {hi - lo:.3g}); the oracle value is unreliable")
    return val


def numeric_sup_l0(z, c_star: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """``sup_lam lam^T z - (1 - c_star) ||lam||^2`` by fixed-step gradient ascent."""
    z = np.asarray(z, dtype=float)
    curv = 1.0 - c_star
    step = 1.0 / (4.0 * curv)
    lam = np.zeros_like(z)
    for _ in range(max_iter):
        grad = z - 2.0 * curv * lam
        lam_new = lam + step * grad
        if np.max(np.abs(lam_new - lam)) <= tol * (1.0 + np.max(np.abs(lam_new))):
            lam = lam_new
            break
        lam = lam_new
    return float(lam @ z - curv * (lam @ lam))


# -- instance generators shared by the oracle-check command and the tests ----

def random_panel(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    scale = rng.uniform(0.02, 0.08)
    common = rng.normal(0.0, scale / 2, (n, 1))
    return rng.normal(rng.uniform(-0.01, 0.03, d), scale, (n, d)) + common


def random_weights(rng: np.random.Generator, d: int) -> np.ndarray:
    w = rng.normal(1.0 / d, 0.5, d)
    return w + (1.0 - w.sum()) / d


ORDERS = (1.0, 2.0, math.inf)


def agreement_suite(seed: int = 0, instances: int = 100, cross_check: bool = True):
    """Compare closed forms with the brute-force references on random instances.

    Returns a list of ``(name, worst_relative_error, tolerance, passed)``.
    """
    from .duality import RobustParams, inner_max_second_moment, worst_case_mean
    from .calibration import l0_sample
    from .moments import ReturnSeries, empirical_moments

    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for _ in range(instances):
        n, d = int(rng.integers(2, 11)), int(rng.integers(1, 5))
        p = ORDERS[int(rng.integers(0, 3))]
        delta = float(rng.uniform(0.0, 0.5))
        pts = random_panel(rng, n, d)
        phi = random_weights(rng, d)
        mom = empirical_moments(ReturnSeries(pts))
        got = worst_case_mean(phi, mom, RobustParams(p=p, delta=delta))
        ref = oracle_worst_case_mean(PerturbationProblem(pts, phi, delta, _conj(p)), cross_check)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
    out.append(("worst_case_mean", worst, 1e-4, worst <= 1e-4))

    worst = 0.0
    for i in range(instances):
        n, d = int(rng.integers(2, 11)), int(rng.integers(1, 5))
        p = ORDERS[int(rng.integers(0, 3))]
        delta = float(rng.uniform(1e-4, 0.5))
        pts = random_panel(rng, n, d)
        phi = random_weights(rng, d)
        m = float(np.mean(pts @ phi))
        radius = math.sqrt(delta) * _norm(phi, p)
        frac = (1.0 if rng.random() < 0.5 else -1.0) if i < instances // 10 else rng.uniform(-1, 1)
        alpha = m + frac * radius
        mom = empirical_moments(ReturnSeries(pts))
        got = inner_max_second_moment(phi, alpha, mom, RobustParams(p=p, delta=delta))
        ref = oracle_dual_value(phi, alpha, pts, delta, _conj(p))
        if got is INFEASIBLE or ref is INFEASIBLE:
            err = 0.0 if got is ref else math.inf
        else:
            err = abs(got - ref) / max(abs(ref), 1e-12)
        worst = max(worst, err)
    out.append(("inner_max_second_moment", worst, 1e-5, worst <= 1e-5))

    worst = 0.0
    for _ in range(10 * instances):
        d = int(rng.integers(1, 6))
        z = rng.normal(0.0, 1.0, d)
        c = float(rng.uniform(0.0, 0.9))
        ref = numeric_sup_l0(z, c)
        worst = max(worst, abs(l0_sample(z, c) - ref) / max(abs(ref), 1e-300))
    out.append(("l0_sample", worst, 1e-6, worst <= 1e-6))
    return out
