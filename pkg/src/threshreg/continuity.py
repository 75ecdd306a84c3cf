"""Statistics for testing continuity of the regression function at the threshold.

``Q_n`` compares the constrained (kink) and unconstrained SSR minima.  The
alternative statistic evaluates the scaled QLR curve at the constrained
threshold estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from threshreg.estimation import FitConstrained, FitUnconstrained, GridFitter
from threshreg.inference import KernelSpec, ScaleFactor, check_nondegenerate, scale_factor
from threshreg.model import Dataset, GridSpec

__all__ = ["ContinuityStat", "continuity_statistics", "qlr_tilde_statistic", "qn_statistic"]


@dataclass(frozen=True)
class ContinuityStat:
    q_n: float
    qlr_tilde: float | None
    gamma_hat: float
    gamma_tilde: float
    ssr_hat: float
    ssr_tilde: float
    lse: FitUnconstrained
    clse: FitConstrained
    xi: ScaleFactor | None = None
    snap_distance: float = 0.0


def _snap(grid: np.ndarray, gamma: float) -> tuple[int, float]:
    j = int(np.argmin(np.abs(grid - gamma)))
    return j, abs(float(grid[j]) - gamma)


def continuity_statistics(
    dataset: Dataset,
    grid: GridSpec | None = None,
    kernel: KernelSpec | None = None,
    *,
    fitter: GridFitter | None = None,
    with_qlr: bool = True,
) -> ContinuityStat:
    """Both continuity statistics from one pair of fits."""
    fitter = fitter or GridFitter.for_dataset(dataset, grid)
    lse = fitter.fit_lse(dataset.y)
    clse = fitter.fit_clse(dataset.y)
    check_nondegenerate(lse.ssr_hat, dataset.y)
    n = dataset.n
    q_n = max(n * (clse.ssr_tilde - lse.ssr_hat) / lse.ssr_hat, 0.0)
    qlr = xi = None
    snap = 0.0
    if with_qlr:
        xi = scale_factor(dataset, lse, kernel)
        # Same grid for both fits, so the snap is a lookup unless a caller
        # supplied a fitter with a different grid.
        j, snap = _snap(lse.grid, clse.theta.gamma)
        raw = n * (lse.ssr_profile[j] - lse.ssr_hat) / lse.ssr_hat
        qlr = max(raw, 0.0) / xi.xi_hat
    return ContinuityStat(
        q_n, qlr, lse.theta.gamma, clse.theta.gamma, lse.ssr_hat, clse.ssr_tilde, lse, clse, xi, snap
    )


def qn_statistic(dataset: Dataset, grid: GridSpec | None = None) -> ContinuityStat:
    """``Q_n = n (S_tilde - S_hat) / S_hat``; ``qlr_tilde`` is left empty."""
    return continuity_statistics(dataset, grid, with_qlr=False)


def qlr_tilde_statistic(
    dataset: Dataset, grid: GridSpec | None = None, kernel: KernelSpec | None = None
) -> ContinuityStat:
    """``QLR_n(gamma_tilde) / xi_hat`` together with ``Q_n``."""
    return continuity_statistics(dataset, grid, kernel)
