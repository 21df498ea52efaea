"""Classical empirical Markowitz problem and its Lagrange multipliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .moments import EmpiricalMoments

PD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class MarkowitzSolution:
    """Minimizer of ``phi^T Sigma phi`` s.t. ``1^T phi = 1``, ``mu^T phi = rho``.

    ``Sigma`` is the second-moment matrix, so the multipliers satisfy
    ``2 Sigma phi - lambda1 mu - lambda2 1 = 0``.
    """

    phi: np.ndarray
    lambda1: float
    lambda2: float
    objective: float
    stationarity_residual: float = 0.0
    budget_residual: float = 0.0
    target_residual: float = 0.0


def _require_pd(mat: np.ndarray, name: str, hint: str = "") -> None:
    w = np.linalg.eigvalsh(mat)
    if w[-1] <= 0.0 or w[0] <= PD_RTOL * w[-1]:
        msg = (f"{name} is not positive definite (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}], "
               f"need min > {PD_RTOL:g} * max)")
        if hint:
            msg += f"; {hint}"
        raise DegenerateInputError(msg)


def solve_markowitz(moments: EmpiricalMoments, rho: float) -> MarkowitzSolution:
    """Solve the KKT system of the empirical classical problem.

    Raises
    ------
    DegenerateInputError
        If the second-moment matrix is rank deficient, if the mean vector is
        proportional to the all-ones vector, or if the KKT matrix is
        numerically singular.
    """
    if not np.isfinite(rho):
        raise InvalidInputError(f"target return must be finite, got {rho}")
    sigma, mu = moments.second_moment, moments.mean
    d = mu.size
    hint = f"sample size n={moments.n} must exceed the number of assets d={d}" if moments.n else ""
    _require_pd(sigma, "second-moment matrix", hint)
    ones = np.ones(d)
    spread = mu - mu.mean()
    if np.linalg.norm(spread) <= 1e-12 * max(np.linalg.norm(mu), 1e-300):
        raise DegenerateInputError(
            "mean vector is proportional to the ones vector; budget and target constraints coincide"
        )
    kkt = np.zeros((d + 2, d + 2))
    kkt[:d, :d] = 2.0 * sigma
    kkt[:d, d] = -mu
    kkt[:d, d + 1] = -ones
    kkt[d, :d] = mu
    kkt[d + 1, :d] = ones
    rhs = np.zeros(d + 2)
    rhs[d] = rho
    rhs[d + 1] = 1.0
    cond = np.linalg.cond(kkt)
    if not np.isfinite(cond) or cond > 1e14:
        raise DegenerateInputError(f"KKT matrix is numerically singular (condition number {cond:.3g})")
    sol = np.linalg.solve(kkt, rhs)
    phi, lam1, lam2 = sol[:d], float(sol[d]), float(sol[d + 1])
    grad = 2.0 * sigma @ phi
    stat = float(np.linalg.norm(grad - lam1 * mu - lam2 * ones))
    return MarkowitzSolution(
        phi=phi,
        lambda1=lam1,
        lambda2=lam2,
        objective=float(phi @ sigma @ phi),
        stationarity_residual=stat,
        budget_residual=abs(float(phi.sum()) - 1.0),
        target_residual=abs(float(phi @ mu) - rho),
    )


def gmv_portfolio(moments: EmpiricalMoments) -> np.ndarray:
    """Global minimum-variance weights ``Var^{-1} 1 / (1^T Var^{-1} 1)``."""
    cov = moments.covariance
    _require_pd(cov, "covariance matrix")
    x = np.linalg.solve(cov, np.ones(cov.shape[0]))
    return x / x.sum()


def zero_multiplier_target(moments: EmpiricalMoments) -> float:
    """Target return at which the mean-constraint multiplier vanishes.

    With the second-moment objective this is the mean of
    ``Sigma^{-1} 1 / (1^T Sigma^{-1} 1)``, the budget-only minimizer of
    ``phi^T Sigma phi``. It is not the GMV return unless ``mu`` is zero.
    """
    sigma = moments.second_moment
    _require_pd(sigma, "second-moment matrix")
    x = np.linalg.solve(sigma, np.ones(sigma.shape[0]))
    return float(moments.mean @ x / x.sum())
