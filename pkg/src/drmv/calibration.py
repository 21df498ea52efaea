"""Data-driven choice of the ball radius and of the robust return floor.

The radius is the ``1 - delta0`` quantile of the limiting law of the
scaled profile statistic, divided by ``n``. For ``p = 2`` that law is
``||Z||^2 / (4 (1 - c))`` with ``Z ~ N(0, Upsilon_g)`` and
``c = ||mu||^4 / (mu^T Sigma mu)``. Population quantities are replaced by
plug-in estimates throughout.

The factor 4 comes from completing the square in the supremum that
defines the limit variable; ``tests/test_calibration.py`` pins it against a
numeric supremum.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import norm

from .duality import check_weights, lp_norm
from .errors import DegenerateInputError, InvalidInputError
from .markowitz import solve_markowitz
from .moments import (
    EmpiricalMoments,
    LongRunCovariance,
    ReturnSeries,
    empirical_moments,
    long_run_covariance,
)

LAMBDA1_MIN = 1e-8
MC_BLOCK = 8192


@dataclass(frozen=True, eq=False)
class GFunctional:
    """Plug-in ingredients of the centred vector functional behind ``Z``."""

    phi_star: np.ndarray
    lambda1_star: float
    mu_star: np.ndarray
    sigma_star: np.ndarray

    def __post_init__(self):
        if not abs(self.lambda1_star) > LAMBDA1_MIN:
            raise DegenerateInputError(
                f"mean-constraint multiplier {self.lambda1_star:.3g} is zero to within "
                f"{LAMBDA1_MIN:g}; the target return makes the profile statistic undefined"
            )


class DeltaCalibration(NamedTuple):
    delta_star: float
    phi_plugin: np.ndarray
    lambda1_plugin: float
    upsilon_g: LongRunCovariance
    c_star: float
    norm_factor: float
    mc_seed: int
    mc_samples: int


class AlphaCalibration(NamedTuple):
    alpha_bar: float
    v0: float
    upsilon_phi: float
    warning: Optional[str] = None


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    delta_star: float
    v0: float
    alpha_bar: float
    phi_plugin: np.ndarray
    lambda1_plugin: float
    upsilon_g: Optional[LongRunCovariance]
    upsilon_phi: float
    c_star: float
    mc_seed: int
    mc_samples: int
    delta_overridden: bool = False
    alpha_overridden: bool = False


def g_values(series, g: GFunctional) -> np.ndarray:
    """Centred functional ``x -> (x - mu) - 2 ((xx^T - Sigma) phi - phi^T (xx^T - Sigma) phi 1) / lambda1``.

    Its sample average equals ``mean(R) - mu_n`` where ``mu_n`` is the
    mean implied by the optimality conditions at the sample second moment,
    so its long-run covariance is that of the profile statistic's limit.

    Returns
    -------
    ndarray, shape (n, d)
    """
    x = series.data if isinstance(series, ReturnSeries) else np.atleast_2d(np.asarray(series, float))
    phi = np.asarray(g.phi_star, dtype=float)
    d = phi.size
    if x.shape[1] != d:
        raise InvalidInputError(f"series has {x.shape[1]} assets, functional has {d}")
    proj = x @ phi                                   # x^T phi per row
    sphi = g.sigma_star @ phi
    # (xx^T - Sigma) phi = x (x^T phi) - Sigma phi
    dev = x * proj[:, None] - sphi
    quad = proj**2 - float(phi @ sphi)               # phi^T (xx^T - Sigma) phi
    second = (dev - quad[:, None]) * (2.0 / g.lambda1_star)
    return (x - g.mu_star) - second


def l0_sample(z, c_star: float) -> float:
    """Closed-form limit variable ``||z||^2 / (4 (1 - c_star))``."""
    if not c_star < 1.0:
        raise DegenerateInputError(
            f"c_star = {c_star:.6g} >= 1: the portfolio of mean returns has zero variance"
        )
    z = np.asarray(z, dtype=float)
    return float(z @ z) / (4.0 * (1.0 - c_star))


def c_star_of(moments: EmpiricalMoments) -> float:
    mu = moments.mean
    denom = float(mu @ moments.second_moment @ mu)
    if denom <= 0.0:
        return 0.0 if not np.any(mu) else 1.0
    return float((mu @ mu) ** 2 / denom)


def norm_equivalence_factor(p: float, d: int) -> float:
    """Inflation of the ``p = 2`` radius giving a stochastic upper bound for other ``p``.

    ``||x||_2^2 <= d^(1 - 2/p) ||x||_p^2`` for ``p > 2`` and
    ``||x||_2 <= ||x||_p`` for ``p <= 2``.
    """
    if p <= 2.0:
        return 1.0
    if math.isinf(p):
        return float(d)
    return float(d) ** (1.0 - 2.0 / p)


def _block_norms(w: np.ndarray, seed: int, block: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    xi = rng.standard_normal((size, w.size))
    return (xi * xi) @ w


def sample_squared_norms(upsilon: np.ndarray, mc_samples: int, seed: int,
                         workers: int = 1) -> np.ndarray:
    """Draws of ``||Z||^2`` for ``Z ~ N(0, upsilon)``.

    ``Z`` is generated through the eigen-factorization of ``upsilon``;
    since the eigenvectors are orthonormal only the eigenvalues survive in
    the squared norm. Samples come in fixed blocks with their own
    sub-streams, so the result does not depend on ``workers``.
    """
    if mc_samples <= 0:
        raise InvalidInputError(f"mc_samples must be positive, got {mc_samples}")
    w = np.clip(np.linalg.eigvalsh(np.atleast_2d(upsilon)), 0.0, None)
    sizes = [min(MC_BLOCK, mc_samples - start) for start in range(0, mc_samples, MC_BLOCK)]
    jobs = [(w, seed, b, size) for b, size in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block_norms(*a), jobs))
    else:
        parts = [_block_norms(*a) for a in jobs]
    return np.concatenate(parts)


def radius_from_long_run_cov(upsilon: np.ndarray, c_star: float, n: int, delta0: float,
                             mc_samples: int = 100_000, seed: int = 42, workers: int = 1) -> float:
    """``(1 - delta0)`` quantile of the simulated limit law, divided by ``n``."""
    if not 0.0 < delta0 < 1.0:
        raise InvalidInputError(f"delta0 must lie in (0, 1), got {delta0}")
    if not c_star < 1.0:
        # route through l0_sample for the uniform message
        l0_sample(np.zeros(1), c_star)
    sq = sample_squared_norms(upsilon, mc_samples, seed, workers)
    l0 = sq / (4.0 * (1.0 - c_star))
    return float(np.quantile(l0, 1.0 - delta0)) / n


def calibrate_delta(series: ReturnSeries, rho: float, delta0: float, mc_samples: int = 100_000,
                    seed: int = 42, *, p: float = 2.0, workers: int = 1,
                    bandwidth: Optional[int] = None) -> DeltaCalibration:
    """Calibrate the radius from the data at confidence ``1 - delta0``.

    Plug-ins: the empirical Markowitz solution and its multiplier stand in
    for the population optimum, and the sample moments for the population
    ones. For ``p != 2`` the ``p = 2`` radius is inflated by
    :func:`norm_equivalence_factor`.
    """
    moments = empirical_moments(series)
    mk = solve_markowitz(moments, rho)
    g = GFunctional(mk.phi, mk.lambda1, moments.mean, moments.second_moment)
    c_star = c_star_of(moments)
    if not c_star < 1.0:
        raise DegenerateInputError(
            f"c_star = {c_star:.6g} >= 1: variance of mu^T R vanishes, limit law undefined"
        )
    ups = long_run_covariance(g_values(series, g), bandwidth)
    radius = radius_from_long_run_cov(ups.matrix, c_star, series.n, delta0, mc_samples, seed, workers)
    factor = norm_equivalence_factor(p, series.d)
    return DeltaCalibration(radius * factor, mk.phi, mk.lambda1, ups, c_star, factor,
                            int(seed), int(mc_samples))


def normal_upper_quantile(epsilon: float) -> float:
    return float(norm.ppf(1.0 - epsilon))


def floor_from_long_run_var(upsilon_phi: float, n: int, rho: float, delta: float,
                            phi_norm: float, epsilon: float):
    """Return ``(alpha_bar, v0)`` for a given long-run variance."""
    if not 0.0 < epsilon < 1.0:
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if delta <= 0.0:
        return rho, 1.0
    v0 = 1.0 + normal_upper_quantile(epsilon) * math.sqrt(max(upsilon_phi, 0.0) / n) / math.sqrt(delta)
    return rho - math.sqrt(delta) * phi_norm * v0, v0


def calibrate_alpha(series: ReturnSeries, phi_n, rho: float, delta: float, epsilon: float,
                    *, p: float = 2.0, bandwidth: Optional[int] = None) -> AlphaCalibration:
    """Set the floor so the plug-in optimum stays feasible with confidence ``1 - epsilon``.

    ``sqrt(delta) (1 - v0)`` is matched to the ``epsilon`` quantile of
    ``N(0, Upsilon_phi / n)``, where ``Upsilon_phi`` is the long-run
    variance of ``phi_n^T R_k / ||phi_n||_p``.
    """
    phi = check_weights(phi_n, series.d)
    pn = lp_norm(phi, p)
    if pn <= 0.0:
        raise InvalidInputError("plug-in portfolio has zero norm")
    ups = float(long_run_covariance(series.data @ phi / pn, bandwidth).matrix[0, 0])
    if delta <= 0.0:
        msg = "radius is zero; floor set to the target return and robustness is off"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return AlphaCalibration(rho, 1.0, ups, msg)
    alpha_bar, v0 = floor_from_long_run_var(ups, series.n, rho, delta, pn, epsilon)
    return AlphaCalibration(alpha_bar, v0, ups)


def calibrate(series: ReturnSeries, rho: float, *, p: float = 2.0, delta0: float = 0.05,
              epsilon: float = 0.05, mc_samples: int = 100_000, seed: int = 42,
              workers: int = 1, delta_override: Optional[float] = None,
              alpha_override: Optional[float] = None) -> CalibrationReport:
    """Radius then floor, each replaceable by an explicit override.

    With ``delta_override`` set the Monte Carlo step is skipped and
    ``upsilon_g`` is ``None``.
    """
    if delta_override is None:
        dc = calibrate_delta(series, rho, delta0, mc_samples, seed, p=p, workers=workers)
        delta, phi_n, lam1, ups_g, c_star = (dc.delta_star, dc.phi_plugin, dc.lambda1_plugin,
                                             dc.upsilon_g, dc.c_star)
    else:
        delta = float(delta_override)
        if not delta >= 0.0:
            raise InvalidInputError(f"delta override must be nonnegative, got {delta}")
        moments = empirical_moments(series)
        mk = solve_markowitz(moments, rho)
        phi_n, lam1, ups_g, c_star = mk.phi, mk.lambda1, None, c_star_of(moments)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ac = calibrate_alpha(series, phi_n, rho, delta, epsilon, p=p)
    alpha_bar = ac.alpha_bar if alpha_override is None else float(alpha_override)
    return CalibrationReport(
        delta_star=delta,
        v0=ac.v0,
        alpha_bar=alpha_bar,
        phi_plugin=phi_n,
        lambda1_plugin=lam1,
        upsilon_g=ups_g,
        upsilon_phi=ac.upsilon_phi,
        c_star=c_star,
        mc_seed=int(seed),
        mc_samples=int(mc_samples),
        delta_overridden=delta_override is not None,
        alpha_overridden=alpha_override is not None,
    )
