"""QLR statistic, its pivotal limit law, the kernel scale factor and confidence sets.

The QLR statistic for ``H0: gamma0 = gamma`` is

    QLR_n(gamma) = n (S_n(gamma) - S_n(gamma_hat)) / S_n(gamma_hat)

and, after division by a scale factor, it is asymptotically distributed as
``max_g (2 W(g) - |g|)`` with CDF ``F(z) = (1 - exp(-z/2))^2`` under both
jump and kink designs.  The scale factor is a ratio of two Nadaraya-Watson
regressions evaluated at ``gamma_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from threshreg.errors import DegenerateFit, DomainError, InputError, SingularMoment, ZeroDenominator
from threshreg.estimation import FitConstrained, FitUnconstrained, concentrated_ssr
from threshreg.model import Dataset, build_regressors, kink_design

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BANDWIDTH_CONSTANT",
    "ConfidenceSet",
    "Interval",
    "KernelSpec",
    "QlrCurve",
    "ScaleFactor",
    "SlopeCov",
    "asymptotic_confidence_set",
    "default_bandwidth",
    "kernel_moment",
    "kink_covariance",
    "limit_cdf",
    "limit_quantile",
    "qlr_at",
    "qlr_curve",
    "region_below",
    "scale_factor",
    "slope_covariance",
]

# Rule-of-thumb constant for the Epanechnikov kernel.
BANDWIDTH_CONSTANT = 2.34
# SSR below this fraction of mean(y^2) is treated as an exact fit.
_DEGENERATE_RTOL = 1e-24


def check_nondegenerate(ssr_hat: float, y: NDArray[np.float64]) -> None:
    scale = float(np.mean(np.square(y)))
    if not ssr_hat > _DEGENERATE_RTOL * max(scale, np.finfo(float).tiny):
        raise DegenerateFit("unconstrained SSR is zero; QLR-type statistics are undefined")


# ---------------------------------------------------------------------------
# limit law
# ---------------------------------------------------------------------------


def limit_cdf(z: ArrayLike) -> NDArray[np.float64] | float:
    """CDF of ``max_g (2 W(g) - |g|)``: ``(1 - exp(-z/2))^2`` for ``z >= 0``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.where(z > 0, np.square(np.expm1(-np.maximum(z, 0.0) / 2.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def limit_quantile(s: float) -> float:
    """Inverse of :func:`limit_cdf`: ``-2 log(1 - sqrt(s))``."""
    if not 0.0 < s < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {s}")
    return -2.0 * math.log1p(-math.sqrt(s))


# ---------------------------------------------------------------------------
# kernels and bandwidth
# ---------------------------------------------------------------------------


def _epanechnikov(u: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _gaussian(u: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


_KERNELS: dict[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] = {
    "epanechnikov": _epanechnikov,
    "gaussian": _gaussian,
}


@dataclass(frozen=True)
class KernelSpec:
    """Second-order symmetric kernel and optional fixed bandwidth."""

    kind: Literal["epanechnikov", "gaussian"] = "epanechnikov"
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KERNELS:
            raise InputError(f"unknown kernel {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InputError("bandwidth must be positive")

    def __call__(self, u: ArrayLike) -> NDArray[np.float64]:
        return _KERNELS[self.kind](np.asarray(u, dtype=np.float64))

    def resolve_bandwidth(self, q: NDArray[np.float64]) -> float:
        return self.bandwidth if self.bandwidth is not None else default_bandwidth(q)


def kernel_moment(kernel: KernelSpec, order: int) -> float:
    """``int u^order K(u) du`` by adaptive quadrature."""
    from scipy.integrate import quad

    if kernel.kind == "epanechnikov":
        val, _ = quad(lambda u: u**order * float(kernel(u)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    else:
        val, _ = quad(lambda u: u**order * float(kernel(u)), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    return val


def default_bandwidth(data: Dataset | ArrayLike) -> float:
    """Rule-of-thumb bandwidth ``2.34 sd(q) n^(-1/5)``."""
    q = data.q if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n = q.shape[0]
    return BANDWIDTH_CONSTANT * float(np.std(q, ddof=1)) * n ** (-0.2)


# ---------------------------------------------------------------------------
# QLR curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QlrCurve:
    grid: NDArray[np.float64]
    values: NDArray[np.float64]
    gamma_hat: float
    ssr_hat: float

    @property
    def points(self) -> NDArray[np.float64]:
        return np.column_stack([self.grid, self.values])


def qlr_curve(dataset: Dataset, fit: FitUnconstrained) -> QlrCurve:
    """``n (S_n(gamma_j) - S_hat) / S_hat`` at every grid point of ``fit``."""
    check_nondegenerate(fit.ssr_hat, dataset.y)
    vals = dataset.n * (fit.ssr_profile - fit.ssr_hat) / fit.ssr_hat
    return QlrCurve(fit.grid.copy(), np.maximum(vals, 0.0), fit.theta.gamma, fit.ssr_hat)


def qlr_at(dataset: Dataset, fit: FitUnconstrained, gamma: float) -> float:
    """QLR at an arbitrary threshold.

    Off-grid thresholds are evaluated as if appended to the grid, so the
    statistic is floored at zero when ``S_n(gamma)`` undercuts the grid minimum.
    """
    check_nondegenerate(fit.ssr_hat, dataset.y)
    pos = np.searchsorted(fit.grid, gamma)
    if pos < fit.grid.size and fit.grid[pos] == gamma:
        s = fit.ssr_profile[pos]
    else:
        s = float(concentrated_ssr(dataset.X, gamma, dataset.y, q=dataset.q))
    return max(dataset.n * (s - fit.ssr_hat) / fit.ssr_hat, 0.0)


# ---------------------------------------------------------------------------
# scale factor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleFactor:
    xi_hat: float
    numerator: float
    denominator: float
    bandwidth_used: float


def xi_batch(
    X: NDArray[np.float64],
    delta: NDArray[np.float64],
    resid: NDArray[np.float64],
    gamma: NDArray[np.float64],
    ssr: NDArray[np.float64],
    kernel: KernelSpec,
    bandwidth: float,
    q: NDArray[np.float64] | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Scale factors for B fits at once.

    ``delta`` is (B, k), ``resid`` is (n, B), ``gamma`` and ``ssr`` are (B,).
    Returns ``(xi, numerator, denominator)``; ``xi`` is NaN where the kernel
    puts no weight on any observation with a nonzero jump index.  ``q``
    defaults to the last column of ``X``.
    """
    q = X[:, -1] if q is None else q
    w = kernel((q[:, None] - gamma[None, :]) / bandwidth)
    dx2 = (X @ delta.T) ** 2
    den = np.mean(dx2 * w, axis=0)
    num = np.mean(dx2 * w * resid**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(den > 0, num / (ssr * den), np.nan)
    return xi, num, den


def scale_factor(
    dataset: Dataset, fit: FitUnconstrained, kernel: KernelSpec | None = None
) -> ScaleFactor:
    """Kernel estimate of the QLR scale, adaptive to jump and kink designs.

    ``xi = mean((d'x)^2 e^2 K) / (S_n * mean((d'x)^2 K))`` with ``d`` the
    estimated threshold effect and ``K`` centred at the estimated threshold.
    """
    kernel = kernel or KernelSpec()
    check_nondegenerate(fit.ssr_hat, dataset.y)
    a = kernel.resolve_bandwidth(dataset.q)
    xi, num, den = xi_batch(
        dataset.X,
        fit.theta.delta[None, :],
        fit.residuals[:, None],
        np.array([fit.theta.gamma]),
        np.array([fit.ssr_hat]),
        kernel,
        a,
        dataset.q,
    )
    if not den[0] > 0:
        raise ZeroDenominator(f"no kernel weight around gamma_hat={fit.theta.gamma:.6g} (bandwidth {a:.4g})")
    return ScaleFactor(float(xi[0]), float(num[0]), float(den[0]), a)


# ---------------------------------------------------------------------------
# slope covariance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeCov:
    cov: NDArray[np.float64]
    M_hat: NDArray[np.float64]
    Omega_hat: NDArray[np.float64]

    @property
    def std_errors(self) -> NDArray[np.float64]:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _sandwich(Z: NDArray[np.float64], resid: NDArray[np.float64], what: str) -> SlopeCov:
    n = Z.shape[0]
    M = Z.T @ Z / n
    Ze = Z * resid[:, None]
    Omega = Ze.T @ Ze / n
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"second-moment matrix of {what} is singular") from exc
    if np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
        raise SingularMoment(f"second-moment matrix of {what} is singular")
    cov = Minv @ Omega @ Minv / n
    return SlopeCov(0.5 * (cov + cov.T), M, Omega)


def slope_covariance(dataset: Dataset, fit: FitUnconstrained) -> SlopeCov:
    """Heteroskedasticity-robust sandwich ``M^-1 Omega M^-1 / n`` at ``gamma_hat``."""
    Z = build_regressors(dataset, fit.theta.gamma)
    return _sandwich(Z, fit.residuals, "x_t(gamma_hat)")


def kink_covariance(dataset: Dataset, fit: FitConstrained) -> SlopeCov:
    """Robust covariance of ``(beta, delta3)`` from the kink fit, treating ``gamma_tilde`` as known."""
    Z = kink_design(dataset, fit.theta.gamma)
    return _sandwich(Z, fit.residuals, "the kink design")


# ---------------------------------------------------------------------------
# confidence sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    lower_unbounded: bool = False
    upper_unbounded: bool = False

    def contains(self, x: float) -> bool:
        lo_ok = self.lower_unbounded or x >= self.lower
        hi_ok = self.upper_unbounded or x <= self.upper
        return lo_ok and hi_ok

    def label(self) -> str:
        lo = "-inf" if self.lower_unbounded else f"{self.lower:.6g}"
        hi = "inf" if self.upper_unbounded else f"{self.upper:.6g}"
        return f"({lo}, {hi})"


@dataclass(frozen=True)
class ConfidenceSet:
    intervals: tuple[Interval, ...]
    level: float
    support: tuple[float, float] = field(default=(np.nan, np.nan))

    def contains(self, x: float) -> bool:
        return any(iv.contains(x) for iv in self.intervals)

    @property
    def empty(self) -> bool:
        return not self.intervals

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "intervals": [
                {
                    "lower": iv.lower,
                    "upper": iv.upper,
                    "lower_unbounded": iv.lower_unbounded,
                    "upper_unbounded": iv.upper_unbounded,
                }
                for iv in self.intervals
            ],
        }


def _crossing(x0: float, x1: float, d0: float, d1: float) -> float:
    # Root of the segment joining (x0, d0) and (x1, d1); infinite ends pin the root.
    if not np.isfinite(d0):
        return x1
    if not np.isfinite(d1):
        return x0
    return x0 + (0.0 - d0) * (x1 - x0) / (d1 - d0)


def region_below(x: ArrayLike, d: ArrayLike) -> list[Interval]:
    """Maximal intervals where the linear interpolant of ``(x, d)`` is <= 0.

    Intervals reaching the first or last abscissa are flagged unbounded on
    that side.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    out: list[Interval] = []
    if x.size == 0:
        return out
    inside = bool(d[0] <= 0)
    start = x[0]
    start_open = inside
    for i in range(x.size - 1):
        d0, d1 = d[i], d[i + 1]
        if inside and d1 > 0:
            cross = _crossing(x[i], x[i + 1], d0, d1) if d0 < 0 else x[i]
            out.append(Interval(float(start), float(cross), start_open, False))
            inside = False
        elif not inside and d1 <= 0:
            start = _crossing(x[i], x[i + 1], d0, d1)
            start_open = False
            inside = True
    if inside:
        out.append(Interval(float(start), float(x[-1]), start_open, True))
    return out


def asymptotic_confidence_set(curve: QlrCurve, xi: ScaleFactor | float, s: float) -> ConfidenceSet:
    """``{gamma : QLR_n(gamma) / xi <= F^-1(s)}`` with linear interpolation."""
    xi_val = xi.xi_hat if isinstance(xi, ScaleFactor) else float(xi)
    level = limit_quantile(s)
    scaled = curve.values / xi_val
    ivs = region_below(curve.grid, scaled - level)
    return ConfidenceSet(tuple(ivs), s, (float(curve.grid[0]), float(curve.grid[-1])))


def interpolated_region(
    sample_x: NDArray[np.float64],
    sample_y: NDArray[np.float64],
    crit_x: Sequence[float] | NDArray[np.float64],
    crit_y: Sequence[float] | NDArray[np.float64],
) -> list[Interval]:
    """Where the interpolated sample curve lies below the interpolated critical curve.

    Both curves are piecewise linear, so their difference is linear between
    consecutive points of the merged abscissa set and crossings are exact.
    The critical curve is held constant beyond its outermost points.
    """
    crit_x = np.asarray(crit_x, dtype=np.float64)
    crit_y = np.asarray(crit_y, dtype=np.float64)
    inner = crit_x[(crit_x > sample_x[0]) & (crit_x < sample_x[-1])]
    xs = np.union1d(sample_x, inner)
    diff = np.interp(xs, sample_x, sample_y) - np.interp(xs, crit_x, crit_y)
    return region_below(xs, diff)
