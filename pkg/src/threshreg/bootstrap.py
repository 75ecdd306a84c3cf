"""Wild bootstrap for the continuity tests and grid-bootstrap confidence sets.

Resamples are ``y* = fitted + e_hat * eta`` with iid mean-zero, unit-variance
multipliers ``eta`` and ``e_hat`` the unconstrained LSE residuals.  For the
continuity test ``fitted`` comes from the constrained (kink) fit, so the null
holds exactly in the bootstrap world; for the grid bootstrap at a candidate
``gamma_j`` it is ``alpha_hat' x_t(gamma_j)``.

Every replication ``b`` draws from its own random stream ``(seed, b)``, so
results do not depend on how replications are batched or distributed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from threshreg.continuity import ContinuityStat, continuity_statistics
from threshreg.errors import InputError
from threshreg.estimation import FitUnconstrained, GridFitter, concentrated_ssr
from threshreg.inference import (
    ConfidenceSet,
    KernelSpec,
    ScaleFactor,
    check_nondegenerate,
    interpolated_region,
    qlr_curve,
    scale_factor,
    xi_batch,
)
from threshreg.model import Dataset, GridSpec, build_regressors

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "ContinuityBootstrap",
    "GridBootstrapResult",
    "MultiplierDist",
    "QuantileCurve",
    "RngSeed",
    "continuity_test_bootstrap",
    "empirical_quantile",
    "grid_bootstrap_ci",
    "grid_bootstrap_draws",
    "grid_quantile_at",
    "multipliers",
    "wild_resample",
]

logger = logging.getLogger(__name__)

_DEGENERATE_RTOL = 1e-24


@dataclass(frozen=True)
class RngSeed:
    """Seed plus stream index; equal pairs give equal draws."""

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise InputError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,)))

    def derive(self, *tags: int) -> int:
        """A new 64-bit seed, independent of this stream and of other tags."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *tags))
        return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MultiplierDist:
    kind: Literal["rademacher", "standard_normal"] = "rademacher"

    def __post_init__(self) -> None:
        if self.kind not in ("rademacher", "standard_normal"):
            raise InputError(f"unknown multiplier distribution {self.kind!r}")

    def draw(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
        return rng.standard_normal(n)


def multipliers(n: int, B: int, dist: MultiplierDist, seed: int, offset: int = 0) -> NDArray[np.float64]:
    """(n, B) matrix whose column ``b`` comes from stream ``(seed, offset + b)``."""
    out = np.empty((n, B))
    for b in range(B):
        out[:, b] = dist.draw(RngSeed(seed, offset + b).generator(), n)
    return out


def wild_resample(
    fitted: ArrayLike,
    residuals: ArrayLike,
    dist: MultiplierDist | None = None,
    rng: RngSeed | None = None,
) -> NDArray[np.float64]:
    """``y*_t = fitted_t + residuals_t * eta_t``."""
    fitted = np.asarray(fitted, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if fitted.shape != residuals.shape:
        raise InputError("fitted and residuals must have the same shape")
    dist = dist or MultiplierDist()
    rng = rng or RngSeed(0)
    return fitted + residuals * dist.draw(rng.generator(), fitted.shape[0])


def empirical_quantile(draws: ArrayLike, s: float) -> float:
    """The ``ceil(s B)``-th order statistic of the draws."""
    x = np.sort(np.asarray(draws, dtype=np.float64))
    if x.size == 0:
        raise InputError("no draws")
    if not 0.0 < s < 1.0:
        raise InputError(f"level must lie in (0, 1), got {s}")
    r = math.ceil(s * x.size - 1e-9)
    return float(x[min(max(r, 1), x.size) - 1])


def _degenerate(ssr: NDArray[np.float64], Y: NDArray[np.float64]) -> NDArray[np.bool_]:
    scale = np.maximum(np.mean(Y * Y, axis=0), np.finfo(float).tiny)
    return ~(ssr > _DEGENERATE_RTOL * scale)


# ---------------------------------------------------------------------------
# continuity test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuityBootstrap:
    statistic: ContinuityStat
    p_qn: float
    p_qlr: float | None
    qn_draws: NDArray[np.float64]
    qlr_draws: NDArray[np.float64] | None
    B: int
    redrawn: int = 0
    counted_degenerate: int = 0


def _qn_draws(fitter: GridFitter, fitted: NDArray, resid: NDArray, eta: NDArray) -> NDArray[np.float64]:
    Y = fitted[:, None] + resid[:, None] * eta
    s_hat = fitter.fit_lse_batch(Y).ssr_hat
    s_tilde = fitter.clse_profile(Y, fast=True).min(axis=0)
    bad = _degenerate(s_hat, Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.maximum(fitter.n * (s_tilde - s_hat) / s_hat, 0.0)
    q[bad] = np.nan
    return q


def _with_redraw(
    draw_fn, n: int, B: int, dist: MultiplierDist, seed: int
) -> tuple[NDArray[np.float64], int, int]:
    """Evaluate ``draw_fn(eta)``; NaN replications are redrawn once, then set to +inf."""
    stats = draw_fn(multipliers(n, B, dist, seed))
    bad = np.flatnonzero(np.isnan(stats))
    if bad.size == 0:
        return stats, 0, 0
    eta = np.column_stack([dist.draw(np.random.default_rng(RngSeed(seed, b).derive(1)), n) for b in bad])
    again = draw_fn(eta)
    stats[bad] = np.where(np.isnan(again), np.inf, again)
    still = int(np.sum(np.isnan(again)))
    logger.debug("redrew %d degenerate replications, %d counted as exceeding", bad.size, still)
    return stats, int(bad.size), still


def continuity_test_bootstrap(
    dataset: Dataset,
    grid: GridSpec | None = None,
    B: int = 399,
    dist: MultiplierDist | None = None,
    seed: int = 0,
    kernel: KernelSpec | None = None,
    *,
    with_qlr: bool = True,
) -> ContinuityBootstrap:
    """Bootstrap p-values for ``Q_n`` and, optionally, ``QLR_n(gamma_tilde) / xi_hat``.

    The p-value is the share of bootstrap statistics at least as large as
    the sample statistic.  Both sets of resamples are built on the
    constrained fitted values, so the bootstrap world is continuous; the QLR
    draws evaluate the grid-bootstrap statistic at ``gamma_tilde``.
    """
    if B < 1:
        raise InputError("B must be positive")
    dist = dist or MultiplierDist()
    kernel = kernel or KernelSpec()
    fitter = GridFitter.for_dataset(dataset, grid)
    stat = continuity_statistics(dataset, kernel=kernel, fitter=fitter, with_qlr=with_qlr)
    lse, clse = stat.lse, stat.clse
    n = dataset.n
    qn_seed = RngSeed(seed).derive(0)
    qn_star, redrawn, counted = _with_redraw(
        lambda eta: _qn_draws(fitter, clse.fitted, lse.residuals, eta), n, B, dist, qn_seed
    )
    p_qn = float(np.mean(qn_star >= stat.q_n))
    p_qlr = qlr_star = None
    if with_qlr:
        qlr_star, r2, c2 = grid_bootstrap_draws(
            dataset, stat.gamma_tilde, B, kernel, dist, RngSeed(seed).derive(1),
            fitter=fitter, lse=lse, diagnostics=True, fitted=clse.fitted,
        )
        redrawn += r2
        counted += c2
        p_qlr = float(np.mean(qlr_star >= stat.qlr_tilde))
    return ContinuityBootstrap(stat, p_qn, p_qlr, qn_star, qlr_star, B, redrawn, counted)


# ---------------------------------------------------------------------------
# grid bootstrap
# ---------------------------------------------------------------------------


def _grid_stats(
    fitter: GridFitter,
    base: NDArray[np.float64],
    resid: NDArray[np.float64],
    gamma_j: float,
    on_grid: int | None,
    kernel: KernelSpec,
    bandwidth: float,
    eta: NDArray[np.float64],
) -> NDArray[np.float64]:
    Y = base[:, None] + resid[:, None] * eta
    batch = fitter.fit_lse_batch(Y)
    if on_grid is not None:
        s_null = batch.profile[on_grid]
    else:
        s_null = concentrated_ssr(fitter.X, gamma_j, Y, fast=True, q=fitter.q)
    bad = _degenerate(batch.ssr_hat, Y) | ~batch.rank_ok
    with np.errstate(divide="ignore", invalid="ignore"):
        qlr = np.maximum(fitter.n * (s_null - batch.ssr_hat) / batch.ssr_hat, 0.0)
        xi, _, _ = xi_batch(
            fitter.X, batch.delta, batch.residuals, batch.gamma, batch.ssr_hat, kernel, bandwidth, fitter.q
        )
        stat = qlr / xi
    bad |= ~(xi > 0)
    stat[bad] = np.nan
    return stat


def _grid_index(grid: NDArray[np.float64], gamma: float) -> int | None:
    j = int(np.searchsorted(grid, gamma))
    return j if j < grid.size and grid[j] == gamma else None


def grid_bootstrap_draws(
    dataset: Dataset,
    gamma_j: float,
    B: int,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    seed: int = 0,
    grid: GridSpec | None = None,
    *,
    fitter: GridFitter | None = None,
    lse: FitUnconstrained | None = None,
    eta: NDArray[np.float64] | None = None,
    diagnostics: bool = False,
    fitted: NDArray[np.float64] | None = None,
):
    """Bootstrap draws of ``QLR*_n(gamma_j) / xi*`` under ``H0: gamma0 = gamma_j``.

    ``eta`` may be supplied to share multipliers across candidates; otherwise
    column ``b`` comes from stream ``(seed, b)``.  The resampling mean is
    ``alpha_hat' x_t(gamma_j)`` unless ``fitted`` overrides it.
    """
    kernel = kernel or KernelSpec()
    dist = dist or MultiplierDist()
    fitter = fitter or GridFitter.for_dataset(dataset, grid)
    lse = lse or fitter.fit_lse(dataset.y)
    check_nondegenerate(lse.ssr_hat, dataset.y)
    a = kernel.resolve_bandwidth(dataset.q)
    base = build_regressors(dataset, gamma_j) @ lse.theta.alpha if fitted is None else np.asarray(fitted)
    on_grid = _grid_index(fitter.gammas, gamma_j)

    def draw(e):
        return _grid_stats(fitter, base, lse.residuals, gamma_j, on_grid, kernel, a, e)

    if eta is not None:
        stats = draw(eta)
        bad = np.isnan(stats)
        stats[bad] = np.inf
        out = (stats, 0, int(bad.sum()))
    else:
        out = _with_redraw(draw, dataset.n, B, dist, seed)
    return out if diagnostics else out[0]


def grid_quantile_at(
    dataset: Dataset,
    gamma_j: float,
    s: float,
    B: int = 399,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    seed: int = 0,
    grid: GridSpec | None = None,
) -> float:
    """Bootstrap ``s``-quantile of the scaled QLR statistic under ``gamma0 = gamma_j``."""
    draws = grid_bootstrap_draws(dataset, gamma_j, B, kernel, dist, seed, grid)
    return empirical_quantile(draws, s)


@dataclass(frozen=True)
class QuantileCurve:
    grid: NDArray[np.float64]
    quantiles: NDArray[np.float64]
    level: float
    B: int

    @property
    def points(self) -> NDArray[np.float64]:
        return np.column_stack([self.grid, self.quantiles])

    def __call__(self, gamma: ArrayLike) -> NDArray[np.float64]:
        return np.interp(gamma, self.grid, self.quantiles)


@dataclass(frozen=True)
class GridBootstrapResult:
    sets: dict[float, ConfidenceSet]
    curves: dict[float, QuantileCurve]
    sample_grid: NDArray[np.float64]
    sample_scaled: NDArray[np.float64]
    xi: ScaleFactor
    gamma_hat: float
    grid_points: NDArray[np.float64]
    draws: NDArray[np.float64] = field(repr=False)
    B: int = 0
    degenerate: int = 0


def default_quantile_points(
    fine_grid: NDArray[np.float64], n_points: int, extra: Sequence[float] = ()
) -> NDArray[np.float64]:
    """Equidistant points over the trimmed support plus any extra candidates."""
    pts = np.linspace(fine_grid[0], fine_grid[-1], n_points)
    return np.unique(np.concatenate([pts, np.asarray(extra, dtype=np.float64)]))


def grid_bootstrap_ci(
    dataset: Dataset,
    s: float | Sequence[float] = 0.95,
    grid_points: ArrayLike | None = None,
    B: int = 399,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    seed: int = 0,
    grid: GridSpec | None = None,
    *,
    n_quantile_points: int = 10,
    fitter: GridFitter | None = None,
    lse: FitUnconstrained | None = None,
    gamma_tilde: float | None = None,
) -> GridBootstrapResult:
    """Test-inversion confidence set ``{gamma : QLR_n(gamma)/xi <= q*(s | gamma)}``.

    Bootstrap quantiles are computed at ``grid_points`` (default: equidistant
    points over the trimmed support plus ``gamma_hat`` and ``gamma_tilde``)
    and linearly interpolated; the sample curve is interpolated over the
    estimation grid.  All candidates share the same multipliers.
    """
    levels = [float(s)] if np.isscalar(s) else [float(v) for v in s]
    if B < 1:
        raise InputError("B must be positive")
    kernel = kernel or KernelSpec()
    dist = dist or MultiplierDist()
    fitter = fitter or GridFitter.for_dataset(dataset, grid)
    lse = lse or fitter.fit_lse(dataset.y)
    xi = scale_factor(dataset, lse, kernel)
    curve = qlr_curve(dataset, lse)
    scaled = curve.values / xi.xi_hat
    if grid_points is None:
        if gamma_tilde is None:
            gamma_tilde = fitter.fit_clse(dataset.y).theta.gamma
        grid_points = default_quantile_points(fitter.gammas, n_quantile_points, (lse.theta.gamma, gamma_tilde))
    pts = np.unique(np.asarray(grid_points, dtype=np.float64))
    eta = multipliers(dataset.n, B, dist, seed)
    draws = np.empty((pts.size, B))
    degenerate = 0
    for i, g in enumerate(pts):
        draws[i], _, bad = grid_bootstrap_draws(
            dataset, float(g), B, kernel, dist, seed, fitter=fitter, lse=lse, eta=eta, diagnostics=True
        )
        degenerate += bad
    sets: dict[float, ConfidenceSet] = {}
    curves: dict[float, QuantileCurve] = {}
    support = (float(fitter.gammas[0]), float(fitter.gammas[-1]))
    for lev in levels:
        qs = np.array([empirical_quantile(row, lev) for row in draws])
        curves[lev] = QuantileCurve(pts, qs, lev, B)
        ivs = interpolated_region(fitter.gammas, scaled, pts, qs)
        sets[lev] = ConfidenceSet(tuple(ivs), lev, support)
    return GridBootstrapResult(
        sets, curves, fitter.gammas, scaled, xi, lse.theta.gamma, pts, draws, B, degenerate
    )
