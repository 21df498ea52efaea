"""Closed-form worst-case quantities over an order-2 Wasserstein ball.

The transport cost is ``c(u, w) = ||u - w||_q^2``. Its conjugate exponent
``p`` (``1/p + 1/q = 1``) is the norm that shows up as a regularizer on the
portfolio weights.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidInputError
from .moments import EmpiricalMoments


class _Infeasible(enum.Enum):
    INFEASIBLE = "infeasible"

    def __repr__(self):
        return "INFEASIBLE"


#: Returned by :func:`inner_max_second_moment` when no measure in the ball
#: attains the requested portfolio mean.
INFEASIBLE = _Infeasible.INFEASIBLE

BUDGET_TOL = 1e-10
# slack on (alpha - phi^T mu)^2 <= delta ||phi||_p^2 so boundary points survive rounding
_BOUNDARY_RTOL = 1e-12


def dual_order(p: float) -> float:
    """Conjugate exponent ``q`` with ``1/p + 1/q = 1``."""
    p = _check_order(p)
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _check_order(p) -> float:
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise InvalidInputError(f"norm order must be a number or 'inf', got {p!r}") from None
    if math.isnan(p) or p < 1.0:
        raise InvalidInputError(f"norm order must lie in [1, inf], got {p}")
    return p


def parse_order(text) -> float:
    """Accept ``1``, ``2``, ``"inf"``, ``"infinity"`` and friends."""
    if isinstance(text, str) and text.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    return _check_order(text)


def lp_norm(v, p: float) -> float:
    """Standard l_p norm; ``p = inf`` gives the largest absolute entry."""
    p = _check_order(p)
    v = np.abs(np.asarray(v, dtype=float).ravel())
    if v.size == 0:
        return 0.0
    if math.isinf(p):
        return float(v.max())
    if p == 1.0:
        return float(v.sum())
    scale = v.max()
    if scale == 0.0:
        return 0.0
    if p == 2.0:
        u = v / scale
        return float(scale * np.sqrt(u @ u))
    return float(scale * np.sum((v / scale) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class RobustParams:
    """Parameters of the robust problem.

    Attributes
    ----------
    p : float
        Regularizer norm order in ``[1, inf]``; the transport cost uses the
        dual order :attr:`q`.
    delta : float
        Ball radius in squared-return units.
    alpha_bar : float
        Floor on the worst-case portfolio mean.
    rho : float
        Target return of the classical problem.
    delta0, epsilon : float
        Miscoverage levels for radius and floor calibration.
    """

    p: float = 2.0
    delta: float = 0.0
    alpha_bar: float = -math.inf
    rho: float = 0.0
    delta0: float = 0.05
    epsilon: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "p", _check_order(self.p))
        if not (self.delta >= 0.0) or math.isinf(self.delta):
            raise InvalidInputError(f"delta must be finite and nonnegative, got {self.delta}")
        for name in ("delta0", "epsilon"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1), got {v}")
        if math.isnan(self.alpha_bar) or self.alpha_bar == math.inf:
            raise InvalidInputError(f"alpha_bar must be finite or -inf, got {self.alpha_bar}")
        if not math.isfinite(self.rho):
            raise InvalidInputError(f"rho must be finite, got {self.rho}")

    @property
    def q(self) -> float:
        return dual_order(self.p)

    def replace(self, **changes) -> "RobustParams":
        kw = dict(p=self.p, delta=self.delta, alpha_bar=self.alpha_bar, rho=self.rho,
                  delta0=self.delta0, epsilon=self.epsilon)
        kw.update(changes)
        return RobustParams(**kw)


def check_weights(phi, d: Optional[int] = None) -> np.ndarray:
    """Coerce ``phi`` to a finite 1-D float array, optionally of length ``d``."""
    phi = np.asarray(phi, dtype=float).ravel()
    if d is not None and phi.size != d:
        raise InvalidInputError(f"weights have length {phi.size}, moments have dimension {d}")
    if not np.all(np.isfinite(phi)):
        raise InvalidInputError("weights must be finite")
    return phi


def portfolio_variance(phi, moments: EmpiricalMoments) -> float:
    phi = check_weights(phi, moments.d)
    return max(float(phi @ moments.covariance @ phi), 0.0)


def worst_case_mean(phi, moments: EmpiricalMoments, params: RobustParams) -> float:
    """Smallest portfolio mean over the ball: ``phi^T mu - sqrt(delta) ||phi||_p``."""
    phi = check_weights(phi, moments.d)
    return float(phi @ moments.mean) - math.sqrt(params.delta) * lp_norm(phi, params.p)


def feasible_region_check(phi, moments: EmpiricalMoments, params: RobustParams,
                          tol: float = 0.0) -> bool:
    """Whether ``phi`` meets the budget and the robust mean floor.

    ``tol`` loosens the mean inequality only; the budget is always held to
    ``1e-10``.
    """
    try:
        phi = check_weights(phi, moments.d)
    except InvalidInputError:
        return False
    if abs(phi.sum() - 1.0) > BUDGET_TOL:
        return False
    return worst_case_mean(phi, moments, params) >= params.alpha_bar - tol


def inner_max_second_moment(phi, alpha: float, moments: EmpiricalMoments,
                            params: RobustParams) -> Union[float, _Infeasible]:
    """Largest ``E_P[(phi^T R)^2]`` over the ball subject to ``E_P[phi^T R] = alpha``.

    Returns :data:`INFEASIBLE` when ``(alpha - phi^T mu)^2 > delta ||phi||_p^2``.
    """
    phi = check_weights(phi, moments.d)
    m = float(phi @ moments.mean)
    shift = alpha - m
    budget = params.delta * lp_norm(phi, params.p) ** 2
    slack = budget - shift * shift
    edge = _BOUNDARY_RTOL * max(budget, shift * shift)
    if slack < -edge:
        return INFEASIBLE
    if slack <= edge:
        # on the boundary up to rounding; the square-root term is exactly zero there
        slack = 0.0
    second = float(phi @ moments.second_moment @ phi)
    var = portfolio_variance(phi, moments)
    return second + 2.0 * shift * m + budget + 2.0 * math.sqrt(slack) * math.sqrt(var)


def robust_objective(phi, moments: EmpiricalMoments, params: RobustParams) -> float:
    """``(sqrt(phi^T Var phi) + sqrt(delta) ||phi||_p)^2``."""
    phi = check_weights(phi, moments.d)
    sd = math.sqrt(portfolio_variance(phi, moments))
    return (sd + math.sqrt(params.delta) * lp_norm(phi, params.p)) ** 2
