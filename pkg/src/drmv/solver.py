"""Solver for the regularized variance problem equivalent to the robust one.

Minimizes ``(sqrt(phi^T Var phi) + sqrt(delta) ||phi||_p)^2`` subject to
``1^T phi = 1`` and ``phi^T mu - sqrt(delta) ||phi||_p >= alpha_bar``.

The budget equality is removed by writing ``phi = phi0 + N z`` with ``N`` an
orthonormal basis of ``{v : 1^T v = 0}``. Inequalities go through a PHR
augmented Lagrangian whose inner subproblems are solved by damped Newton.
For ``p = 1`` and ``p = inf`` the norm is replaced by epigraph variables, so
every nonsmooth term becomes a linear inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .duality import (
    RobustParams,
    lp_norm,
    robust_objective,
    worst_case_mean,
)
from .errors import (
    DegenerateInputError,
    InfeasibleProblemError,
    InvalidInputError,
    NonConvergenceError,
)
from .markowitz import gmv_portfolio
from .moments import EmpiricalMoments

# inner Newton gives up after this many steps without a 10% gradient decrease
STALL_STEPS = 25
# outer rounds may stop on a plateau near tolerance once the penalty has reached this size
STALL_PENALTY = 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the augmented-Lagrangian solver.

    ``max_iterations`` bounds the total number of Newton steps across all
    outer rounds. ``armijo`` and ``backtrack`` set the line search.
    """

    max_iterations: int = 2000
    kkt_tolerance: float = 1e-8
    penalty_growth: float = 10.0
    initial_penalty: float = 1.0
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_outer: int = 60

    def __post_init__(self):
        if self.max_iterations <= 0 or self.max_outer <= 0:
            raise InvalidInputError("iteration limits must be positive")
        if not 0.0 < self.kkt_tolerance < 1e-2:
            raise InvalidInputError(f"kkt_tolerance must lie in (0, 1e-2), got {self.kkt_tolerance}")
        if not self.penalty_growth > 1.0:
            raise InvalidInputError("penalty_growth must exceed 1")
        if not self.initial_penalty > 0.0:
            raise InvalidInputError("initial_penalty must be positive")
        if not (0.0 < self.armijo < 0.5 and 0.0 < self.backtrack < 1.0):
            raise InvalidInputError("line-search parameters out of range")


@dataclass(frozen=True, eq=False)
class RobustSolution:
    """Output of :func:`solve_robust`.

    ``kkt_residual`` is measured after scaling the objective by its value at
    the starting point and the constraints by the matching standard
    deviation, so it is dimensionless. ``multiplier`` is the scaled
    multiplier of the robust mean floor.
    """

    phi: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    binding: bool
    multiplier: float = 0.0
    worst_case_mean: float = float("nan")


class RegionCheck(NamedTuple):
    nonempty: bool
    certificate: np.ndarray
    max_robust_mean: float


# -- geometry helpers ---------------------------------------------------------

def budget_basis(d: int) -> np.ndarray:
    """Orthonormal ``d x (d-1)`` basis of the hyperplane ``1^T v = 0``."""
    if d == 1:
        return np.zeros((1, 0))
    # Householder-free construction: QR of [1 | I] drops the ones direction
    q, _ = np.linalg.qr(np.column_stack([np.ones(d), np.eye(d)[:, : d - 1]]))
    return q[:, 1:d]


def _recession_direction(mu: np.ndarray, p: float):
    """Maximize ``mu^T v`` over ``1^T v = 0``, ``||v||_p <= 1``.

    Returns the maximizer and the value, which equals
    ``min_c ||mu - c 1||_q``.
    """
    d = mu.size
    if d == 1:
        return np.zeros(1), 0.0
    if p == 2.0:
        perp = mu - mu.mean()
        a = float(np.linalg.norm(perp))
        return (perp / a if a > 0 else np.zeros(d)), a
    if p == 1.0:
        v = np.zeros(d)
        hi, lo = int(np.argmax(mu)), int(np.argmin(mu))
        if hi == lo:
            return v, 0.0
        v[hi], v[lo] = 0.5, -0.5
        return v, float(mu @ v)
    if math.isinf(p):
        order = np.argsort(mu, kind="stable")
        v = np.zeros(d)
        half = d // 2
        v[order[:half]] = -1.0
        v[order[d - half:]] = 1.0
        return v, float(mu @ v)
    q = p / (p - 1.0)
    res = minimize_scalar(lambda c: lp_norm(mu - c, q), bounds=(mu.min(), mu.max()),
                          method="bounded", options={"xatol": 1e-14 * (1 + abs(mu).max())})
    w = mu - res.x
    v = np.sign(w) * np.abs(w) ** (q - 1.0)
    v -= v.mean()
    nv = lp_norm(v, p)
    if nv == 0.0:
        return np.zeros(d), 0.0
    v /= nv
    return v, float(mu @ v)


def region_nonempty(moments: EmpiricalMoments, params: RobustParams) -> RegionCheck:
    """Decide whether the robust feasible region is nonempty.

    Maximizes the worst-case mean ``phi^T mu - sqrt(delta) ||phi||_p`` over
    the budget hyperplane. If some budget-neutral direction raises the mean
    faster than the norm penalty grows, the supremum is ``+inf`` and every
    floor is attainable.

    Returns
    -------
    RegionCheck
        ``(nonempty, certificate, max_robust_mean)``; the certificate meets
        the floor whenever ``nonempty`` is true.
    """
    mu = moments.mean
    d = mu.size
    k = math.sqrt(params.delta)
    p = params.p
    alpha_bar = params.alpha_bar
    eq = np.full(d, 1.0 / d)

    def wcm(phi):
        return float(phi @ mu) - k * lp_norm(phi, p)

    v, gain = _recession_direction(mu, p)
    slope = gain - k * lp_norm(v, p) if gain > 0 else 0.0
    if slope > 1e-12 * max(gain, 1e-300):
        base = wcm(eq)
        if base >= alpha_bar:
            return RegionCheck(True, eq, math.inf)
        step = (alpha_bar - base) / slope
        step = step * (1.0 + 1e-9) + 1e-12
        cert = eq + step * v
        # norm triangle inequality makes this a lower bound; tighten if rounding bites
        while wcm(cert) < alpha_bar:
            step *= 2.0
            cert = eq + step * v
        return RegionCheck(True, cert, math.inf)

    cert = _bounded_maximizer(mu, k, p)
    best = wcm(cert)
    return RegionCheck(best >= alpha_bar, cert, best)


def _bounded_maximizer(mu: np.ndarray, k: float, p: float) -> np.ndarray:
    d = mu.size
    if d == 1:
        return np.ones(1)
    if k == 0.0:
        return np.full(d, 1.0 / d)
    if p == 2.0:
        perp = mu - mu.mean()
        a = float(np.linalg.norm(perp))
        if a == 0.0:
            return np.full(d, 1.0 / d)
        r = min(a / k, 1.0 - 1e-12)
        t = r / math.sqrt(d * (1.0 - r * r))
        return np.full(d, 1.0 / d) + t * perp / a
    if p == 1.0 or math.isinf(p):
        nt = d if p == 1.0 else 1
        c = np.concatenate([-mu, np.full(nt, k)])
        tcol = np.eye(d) if p == 1.0 else np.ones((d, 1))
        a_ub = np.block([[np.eye(d), -tcol], [-np.eye(d), -tcol]])
        a_eq = np.concatenate([np.ones(d), np.zeros(nt)])[None, :]
        bounds = [(None, None)] * d + [(0, None)] * nt
        res = linprog(c, A_ub=a_ub, b_ub=np.zeros(2 * d), A_eq=a_eq, b_eq=[1.0],
                      bounds=bounds, method="highs")
        if res.status == 0:
            phi = res.x[:d]
            return phi + (1.0 - phi.sum()) / d
        return np.full(d, 1.0 / d)
    basis = budget_basis(d)
    eq = np.full(d, 1.0 / d)
    res = minimize(lambda z: -(float((eq + basis @ z) @ mu) - k * lp_norm(eq + basis @ z, p)),
                   np.zeros(d - 1), method="BFGS", options={"gtol": 1e-12})
    return eq + basis @ res.x


# -- objective pieces ---------------------------------------------------------

def _norm_derivatives(phi: np.ndarray, p: float):
    nu = lp_norm(phi, p)
    if p == 2.0:
        g = phi / nu
        h = (np.eye(phi.size) - np.outer(g, g)) / nu
        return nu, g, h
    a = np.abs(phi)
    g = np.sign(phi) * (a / nu) ** (p - 1.0)
    # for p < 2 the curvature blows up at zero entries; cap it
    diag = np.minimum(np.maximum(a, 1e-300) ** (p - 2.0), 1e12)
    h = (p - 1.0) * (np.diag(diag) / nu ** (p - 1.0) - np.outer(g, g) / nu)
    return nu, g, h


def robust_objective_gradient(phi, moments: EmpiricalMoments, params: RobustParams) -> np.ndarray:
    """Gradient of the robust objective in the full weight space.

    Valid where the objective is differentiable: ``phi^T Var phi > 0`` and,
    for ``p`` not in ``(1, inf)``, away from kinks of the norm.
    """
    phi = np.asarray(phi, dtype=float)
    cov = moments.covariance
    vphi = cov @ phi
    s = math.sqrt(max(float(phi @ vphi), 0.0))
    k = math.sqrt(params.delta)
    if k == 0.0:
        return 2.0 * vphi
    p = params.p
    if p == 1.0:
        nu, gnu = lp_norm(phi, 1.0), np.sign(phi)
    elif math.isinf(p):
        i = int(np.argmax(np.abs(phi)))
        nu, gnu = abs(phi[i]), np.zeros_like(phi)
        gnu[i] = np.sign(phi[i])
    else:
        nu, gnu, _ = _norm_derivatives(phi, p)
    gs = vphi / s if s > 0 else np.zeros_like(phi)
    return 2.0 * (s + k * nu) * (gs + k * gnu)


class _Model:
    """Scaled objective and constraints in the reduced variables ``x``.

    ``x = z`` when the norm is smooth (or irrelevant), ``x = (z, t)`` for the
    epigraph forms.
    """

    def __init__(self, moments: EmpiricalMoments, params: RobustParams, phi_start: np.ndarray):
        self.cov = moments.covariance
        self.mu = moments.mean
        self.d = d = self.mu.size
        self.k = math.sqrt(params.delta)
        self.p = params.p
        self.alpha_bar = params.alpha_bar
        self.basis = budget_basis(d)
        self.phi0 = np.full(d, 1.0 / d)
        self.nz = d - 1
        if self.k == 0.0:
            self.mode = "quad"
        elif self.p == 1.0:
            self.mode = "l1"
        elif math.isinf(self.p):
            self.mode = "linf"
        else:
            self.mode = "smooth"
        self.nt = {"l1": d, "linf": 1}.get(self.mode, 0)
        self.n = self.nz + self.nt
        self.fscale = 1.0
        self.gscale = 1.0
        x0 = self.encode(phi_start)
        f0 = self._raw_objective(x0)[0]
        if f0 > 0.0:
            self.fscale = f0
            self.gscale = math.sqrt(f0)
        self._build_linear()

    # variables <-> weights
    def encode(self, phi: np.ndarray) -> np.ndarray:
        z = self.basis.T @ (phi - self.phi0)
        if self.mode == "l1":
            return np.concatenate([z, np.abs(phi)])
        if self.mode == "linf":
            return np.concatenate([z, [np.abs(phi).max()]])
        return z

    def decode(self, x: np.ndarray) -> np.ndarray:
        return self.phi0 + self.basis @ x[: self.nz]

    def norm_term(self, x: np.ndarray) -> float:
        if self.mode in ("l1", "linf"):
            return float(x[self.nz:].sum())
        return lp_norm(self.decode(x), self.p)

    def _raw_objective(self, x: np.ndarray):
        phi = self.decode(x)
        B = self.basis
        vphi = self.cov @ phi
        quad = max(float(phi @ vphi), 0.0)
        if self.mode == "quad":
            g = B.T @ (2.0 * vphi)
            h = B.T @ (2.0 * self.cov) @ B
            return quad, g, h
        s = math.sqrt(quad)
        if s > 0.0:
            gs = vphi / s
            hs = (self.cov - np.outer(vphi, vphi) / quad) / s
        else:
            gs = np.zeros(self.d)
            hs = np.zeros((self.d, self.d))
        k = self.k
        if self.mode == "smooth":
            nu, gnu, hnu = _norm_derivatives(phi, self.p)
            a = s + k * nu
            u = B.T @ (gs + k * gnu)
            h = 2.0 * np.outer(u, u) + 2.0 * a * (B.T @ (hs + k * hnu) @ B)
            return a * a, 2.0 * a * u, h
        nu = float(x[self.nz:].sum())
        a = s + k * nu
        u = np.concatenate([B.T @ gs, np.full(self.nt, k)])
        h = 2.0 * np.outer(u, u)
        h[: self.nz, : self.nz] += 2.0 * a * (B.T @ hs @ B)
        return a * a, 2.0 * a * u, h

    def objective(self, x):
        f, g, h = self._raw_objective(x)
        return f / self.fscale, g / self.fscale, h / self.fscale

    def _build_linear(self):
        """Linear inequalities ``A x <= b`` (scaled)."""
        rows, rhs = [], []
        B, nz, d = self.basis, self.nz, self.d
        if self.mode in ("l1", "linf"):
            tcol = np.eye(d) if self.mode == "l1" else np.ones((d, 1))
            for sign in (1.0, -1.0):
                # sign * phi_i - t <= 0  with phi = phi0 + B z
                rows.append(np.hstack([sign * B, -tcol]))
                rhs.append(-sign * self.phi0)
            if np.isfinite(self.alpha_bar):
                # alpha_bar + k * sum(t) - mu^T phi <= 0
                row = np.concatenate([-(B.T @ self.mu), np.full(self.nt, self.k)])
                rows.append(row[None, :])
                rhs.append(np.array([float(self.mu @ self.phi0) - self.alpha_bar]))
        if rows:
            self.A = np.vstack(rows) / self.gscale
            self.b = np.concatenate(rhs) / self.gscale
        else:
            self.A = np.zeros((0, self.n))
            self.b = np.zeros(0)
        self.has_nonlinear = self.mode in ("quad", "smooth") and np.isfinite(self.alpha_bar)
        # index of the mean-floor row among all constraints
        if self.mode in ("l1", "linf") and np.isfinite(self.alpha_bar):
            self.mean_index = self.A.shape[0] - 1
        elif self.has_nonlinear:
            self.mean_index = self.A.shape[0]
        else:
            self.mean_index = None
        self.m = self.A.shape[0] + (1 if self.has_nonlinear else 0)

    def nonlinear(self, x):
        """Mean floor ``alpha_bar + k ||phi||_p - mu^T phi <= 0`` for smooth modes."""
        phi = self.decode(x)
        B = self.basis
        val = self.alpha_bar - float(self.mu @ phi)
        grad = -(B.T @ self.mu)
        hess = np.zeros((self.n, self.n))
        if self.k > 0.0:
            nu, gnu, hnu = _norm_derivatives(phi, self.p)
            val += self.k * nu
            grad = grad + self.k * (B.T @ gnu)
            hess = self.k * (B.T @ hnu @ B)
        return val / self.gscale, grad / self.gscale, hess / self.gscale

    def constraints(self, x, need_hess=True):
        vals = self.A @ x - self.b
        jac = self.A
        hess = []
        if self.has_nonlinear:
            v, g, h = self.nonlinear(x)
            vals = np.append(vals, v)
            jac = np.vstack([jac, g[None, :]])
            hess.append(h)
        return vals, jac, hess


def _augmented(model: _Model, x, y, c, order=2):
    f, gf, hf = model.objective(x)
    vals, jac, hess = model.constraints(x)
    shifted = y + c * vals
    act = shifted > 0.0
    pos = np.where(act, shifted, 0.0)
    val = f + (pos @ pos - y @ y) / (2.0 * c)
    grad = gf + jac.T @ pos
    if order < 2:
        return val, grad, None
    h = hf + c * (jac[act].T @ jac[act])
    if model.has_nonlinear and act[-1]:
        h = h + pos[-1] * hess[0]
    return val, grad, h


def _newton_direction(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    scale = max(1.0, float(np.abs(np.diag(h)).max())) if n else 1.0
    tau = 0.0
    for _ in range(30):
        try:
            chol = np.linalg.cholesky(h + tau * np.eye(n))
            return -np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        except np.linalg.LinAlgError:
            tau = max(2.0 * tau, 1e-12 * scale)
    return -g


def _kkt_residual(model: _Model, x, y):
    _, gf, _ = model.objective(x)
    vals, jac, _ = model.constraints(x, need_hess=False)
    stat = float(np.abs(gf + jac.T @ y).max()) if gf.size else 0.0
    feas = float(max(vals.max(), 0.0)) if vals.size else 0.0
    comp = float(np.abs(y * vals).max()) if vals.size else 0.0
    return max(stat, feas, comp), vals


def solve_robust(moments: EmpiricalMoments, params: RobustParams,
                 config: Optional[SolverConfig] = None) -> RobustSolution:
    """Minimize the regularized variance over the robust feasible set.

    Raises
    ------
    InfeasibleProblemError
        If no budget-feasible portfolio reaches the floor.
    NonConvergenceError
        If the Newton budget runs out before the KKT tolerance is met.
    """
    config = config or SolverConfig()
    mu = moments.mean
    d = mu.size
    region = region_nonempty(moments, params)
    if not region.nonempty:
        raise InfeasibleProblemError(
            f"robust feasible region is empty: worst-case mean can reach at most "
            f"{region.max_robust_mean:.6g} < floor {params.alpha_bar:.6g}",
            max_robust_mean=region.max_robust_mean,
        )
    if d == 1:
        phi = np.ones(1)
        return RobustSolution(phi, robust_objective(phi, moments, params), 0.0, 0,
                              bool(np.isfinite(params.alpha_bar)
                                   and abs(worst_case_mean(phi, moments, params) - params.alpha_bar) <= 1e-9),
                              0.0, worst_case_mean(phi, moments, params))

    try:
        start = gmv_portfolio(moments)
    except DegenerateInputError:
        start = np.full(d, 1.0 / d)
    if worst_case_mean(start, moments, params) < params.alpha_bar:
        start = region.certificate

    model = _Model(moments, params, start)
    x = model.encode(start)
    y = np.zeros(model.m)
    c = config.initial_penalty
    tol = config.kkt_tolerance
    iterations = 0
    prev_infeas = math.inf
    best = (math.inf, x.copy(), y.copy())
    stale = 0

    for _outer in range(config.max_outer):
        x, used = _inner_newton(model, x, y, c, 0.1 * tol, config,
                                config.max_iterations - iterations)
        iterations += used
        vals = model.constraints(x, need_hess=False)[0]
        y_new = np.maximum(0.0, y + c * vals)
        infeas = float(np.abs(np.maximum(vals, -y / c)).max()) if vals.size else 0.0
        y = y_new
        res, vals = _kkt_residual(model, x, y)
        if res < 0.5 * best[0] or res > 1e3 * tol:
            stale = 0
        else:
            stale += 1
        if res < best[0]:
            best = (res, x.copy(), y.copy())
        # once penalties are large, a plateau means rounding now dominates; polish instead
        if res <= tol or (stale >= 5 and c >= STALL_PENALTY):
            break
        if iterations >= config.max_iterations:
            break
        if infeas > 0.25 * prev_infeas:
            c *= config.penalty_growth
        prev_infeas = infeas

    res, x, y = best
    if res > tol and iterations < config.max_iterations:
        res_p, x_p, y_p, used = _polish(model, x, y, tol, config.max_iterations - iterations)
        iterations += used
        if res_p < res:
            res, x, y = res_p, x_p, y_p
    phi = model.decode(x)
    if res > tol:
        raise NonConvergenceError(
            f"solver stopped after {iterations} Newton steps with KKT residual {res:.3g} "
            f"> tolerance {tol:g}",
            best_phi=phi, residual=res,
        )
    mult = float(y[model.mean_index]) if model.mean_index is not None else 0.0
    wcm = worst_case_mean(phi, moments, params)
    binding = bool(model.mean_index is not None
                   and (mult > 0.0 or abs(wcm - params.alpha_bar) <= 1e-6 * model.gscale))
    return RobustSolution(
        phi=phi,
        objective=robust_objective(phi, moments, params),
        kkt_residual=res,
        iterations=iterations,
        binding=binding,
        multiplier=mult,
        worst_case_mean=wcm,
    )


def _polish(model, x, y, tol, budget, max_steps=50, max_swaps=10):
    """Active-set Newton on the KKT system, started from an augmented-Lagrangian iterate.

    Used when large penalties make the inner problems too ill-conditioned
    to reach the tolerance. Constraints with a positive multiplier or a
    near-zero value are held as equalities; a negative multiplier drops a
    constraint and a violated one is added.
    """
    vals = model.constraints(x, need_hess=False)[0]
    active = (y > 0.0) | (vals > -1e-9)
    used = 0
    best = (_kkt_residual(model, x, y)[0], x, y)
    for _ in range(max_swaps):
        y = np.where(active, y, 0.0)
        for _ in range(max_steps):
            if used >= budget:
                break
            used += 1
            _, g, h = model.objective(x)
            vals, jac, hess = model.constraints(x)
            if model.has_nonlinear and active[-1]:
                h = h + y[-1] * hess[0]
            ja = jac[active]
            k = ja.shape[0]
            kkt = np.block([[h, ja.T], [ja, np.zeros((k, k))]])
            rhs = -np.concatenate([g + jac.T @ y, vals[active]])
            step = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            x = x + step[: model.n]
            y = y.copy()
            y[active] += step[model.n:]
            if float(np.abs(step).max()) <= 1e-15 * (1.0 + float(np.abs(x).max())):
                break
            res = _kkt_residual(model, x, np.maximum(y, 0.0))[0]
            if res <= 0.1 * tol:
                break
        vals = model.constraints(x, need_hess=False)[0]
        neg = active & (y < 0.0)
        viol = ~active & (vals > 0.1 * tol)
        drop = int(np.argmin(np.where(neg, y, np.inf)))
        y = np.maximum(y, 0.0)
        res = _kkt_residual(model, x, y)[0]
        if res < best[0]:
            best = (res, x.copy(), y.copy())
        if not neg.any() and not viol.any():
            break
        if neg.any():
            active[drop] = False
        active |= viol
    return best[0], best[1], best[2], used


def _inner_newton(model, x, y, c, gtol, config, budget):
    used = 0
    best_g, since_best = math.inf, 0
    for _ in range(max(budget, 0)):
        val, grad, h = _augmented(model, x, y, c)
        gnorm = float(np.abs(grad).max())
        if gnorm <= gtol:
            break
        # at large penalties rounding puts a floor under the gradient; hand back to the outer loop
        if gnorm < 0.9 * best_g:
            best_g, since_best = gnorm, 0
        else:
            since_best += 1
            if since_best >= STALL_STEPS:
                break
        step = _newton_direction(h, grad)
        slope = float(grad @ step)
        if slope >= 0.0:
            step, slope = -grad, -float(grad @ grad)
        used += 1
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            xt = x + alpha * step
            vt, gt, _ = _augmented(model, xt, y, c, order=1)
            if vt <= val + config.armijo * alpha * slope:
                accepted = True
                break
            # near a minimizer function values stop resolving; fall back on the gradient
            if alpha == 1.0 and float(np.abs(gt).max()) <= 0.5 * gnorm:
                accepted = True
                break
            alpha *= config.backtrack
        if not accepted:
            break
        if np.array_equal(xt, x):
            x = xt
            break
        x = xt
    return x, used
