"""Empirical moments and long-run (HAC) covariance of return panels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """An ``n x d`` panel of per-period asset returns.

    Rows are periods in chronological order, columns are assets. The
    ordering matters for the HAC estimator; nothing here checks it.

    Parameters
    ----------
    data : array_like, shape (n, d)
        Simple returns as decimal fractions.
    asset_labels : sequence of str, optional
        One identifier per column. Defaults to ``A0, A1, ...``.
    period : str
        Free-text unit tag, e.g. ``"monthly simple return"``.
    """

    data: np.ndarray
    asset_labels: tuple = ()
    period: str = "simple return"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise InvalidInputError(f"returns must be a 2-D array, got ndim={data.ndim}")
        n, d = data.shape
        if n < 2:
            raise InvalidInputError(f"need at least 2 periods, got {n}")
        if d < 1:
            raise InvalidInputError("need at least one asset column")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise InvalidInputError(f"non-finite return at row {bad[0]}, column {bad[1]}")
        labels = tuple(self.asset_labels) if len(self.asset_labels) else tuple(f"A{i}" for i in range(d))
        if len(labels) != d:
            raise InvalidInputError(f"{len(labels)} asset labels for {d} columns")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "asset_labels", labels)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def window(self, start: int, stop: int) -> "ReturnSeries":
        return ReturnSeries(self.data[start:stop], self.asset_labels, self.period)


@dataclass(frozen=True, eq=False)
class EmpiricalMoments:
    """First and second moments of the empirical measure.

    Attributes
    ----------
    mean : ndarray, shape (d,)
    second_moment : ndarray, shape (d, d)
        ``(1/n) sum R_k R_k^T``.
    covariance : ndarray, shape (d, d)
        ``second_moment - mean mean^T``.
    n : int
        Number of observations behind the moments.
    """

    mean: np.ndarray
    second_moment: np.ndarray
    covariance: np.ndarray
    n: int

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_mean_cov(cls, mean, covariance, n: int = 0) -> "EmpiricalMoments":
        """Build moments from a mean vector and covariance matrix directly."""
        mean = np.asarray(mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(
                f"covariance shape {cov.shape} does not match mean of length {mean.size}"
            )
        return cls(mean, cov + np.outer(mean, mean), cov, n)


@dataclass(frozen=True, eq=False)
class LongRunCovariance:
    matrix: np.ndarray
    bandwidth: int
    kernel: str = "bartlett"


def empirical_moments(series: ReturnSeries) -> EmpiricalMoments:
    """Mean, second-moment matrix and covariance of ``series``."""
    if not isinstance(series, ReturnSeries):
        series = ReturnSeries(series)
    x = series.data
    n = x.shape[0]
    mean = x.mean(axis=0)
    second = x.T @ x / n
    # centred product is the accurate route; it agrees with second - mm^T
    xc = x - mean
    cov = xc.T @ xc / n
    second = 0.5 * (second + second.T)
    cov = 0.5 * (cov + cov.T)
    return EmpiricalMoments(mean, second, cov, n)


def default_bandwidth(n: int) -> int:
    """Newey-West rule of thumb ``floor(4 (n/100)^(2/9))``."""
    return int(np.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def andrews_bandwidth(values) -> int:
    """Andrews (1991) AR(1) plug-in bandwidth for the Bartlett kernel.

    Each column is fitted with an AR(1); the lag count is
    ``1.1447 (alpha n)^(1/3)`` rounded down.
    """
    x = _as_matrix(values)
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    num = den = 0.0
    for col in xc.T:
        denom = col[:-1] @ col[:-1]
        if denom == 0.0:
            continue
        rho = float(np.clip(col[1:] @ col[:-1] / denom, -0.97, 0.97))
        sigma2 = float(np.mean((col[1:] - rho * col[:-1]) ** 2))
        num += 4 * rho**2 * sigma2**2 / ((1 - rho) ** 6 * (1 + rho) ** 2)
        den += sigma2**2 / (1 - rho) ** 4
    if den == 0.0:
        return 0
    bw = int(np.floor(1.1447 * (num / den * n) ** (1.0 / 3.0)))
    return min(bw, n - 2)


def long_run_covariance(values, bandwidth: Optional[int] = None) -> LongRunCovariance:
    """Newey-West estimate of the long-run covariance of a vector sequence.

    Parameters
    ----------
    values : array_like, shape (n,) or (n, m)
        Time-ordered observations of a (vector) functional.
    bandwidth : int, optional
        Number of lags ``B``. Defaults to :func:`default_bandwidth`.

    Returns
    -------
    LongRunCovariance
        ``Gamma_0 + sum_{j<=B} (1 - j/(B+1)) (Gamma_j + Gamma_j^T)`` with
        ``Gamma_j = (1/n) sum_k x_k x_{k-j}^T`` on demeaned data. Negative
        eigenvalues are zeroed.
    """
    x = _as_matrix(values)
    n = x.shape[0]
    if bandwidth is None:
        bandwidth = default_bandwidth(n)
    bandwidth = int(bandwidth)
    if bandwidth < 0:
        raise InvalidInputError(f"bandwidth must be nonnegative, got {bandwidth}")
    if bandwidth >= n - 1:
        raise InvalidInputError(
            f"bandwidth {bandwidth} too large for a sequence of length {n} (need bandwidth <= n - 2)"
        )
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / n
    for j in range(1, bandwidth + 1):
        gamma = xc[j:].T @ xc[:-j] / n
        s += (1.0 - j / (bandwidth + 1.0)) * (gamma + gamma.T)
    s = 0.5 * (s + s.T)
    if bandwidth > 0:
        s = _clamp_psd(s)
    return LongRunCovariance(s, bandwidth)


def _clamp_psd(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(s)
    if w[0] >= 0.0:
        return s
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def _as_matrix(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInputError(f"expected a sequence of vectors, got ndim={x.ndim}")
    if x.shape[0] < 2:
        raise InvalidInputError(f"sequence too short ({x.shape[0]})")
    return x
