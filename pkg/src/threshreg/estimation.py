"""Least squares core, unconstrained LSE and continuity-constrained CLSE.

Both estimators profile over a finite grid of candidate thresholds: for each
candidate the model is linear in the slopes, so the slopes are concentrated
out by OLS and the threshold is the grid minimiser of the resulting SSR.
Ties are broken toward the smallest candidate.

Projections are computed from (batched) Householder QR factorisations of
the candidate designs.  Candidates that induce the same regime split share
one factorisation, which makes their SSRs bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg as sla

from threshreg.errors import DimensionMismatch, RankDeficient
from threshreg.model import (
    Dataset,
    GridSpec,
    ThetaJump,
    ThetaKink,
    build_regressors,
    kink_design,
    threshold_grid,
)

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "FitConstrained",
    "FitUnconstrained",
    "GridFitter",
    "LseBatch",
    "OlsFit",
    "concentrated_ssr",
    "fit_clse",
    "fit_lse",
    "ols_solve",
]

_EPS = np.finfo(np.float64).eps
# Upper bound on the size of the (candidates x n x draws) residual block.
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class OlsFit:
    coefficients: NDArray[np.float64]
    residuals: NDArray[np.float64]
    ssr: float
    rank_ok: bool


def ols_solve(Y: ArrayLike, Z: ArrayLike) -> OlsFit:
    """Least squares via column-pivoted QR; minimum-norm solution if rank deficient."""
    Y = np.asarray(Y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Y.ndim != 1 or Z.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"incompatible shapes Y{Y.shape}, Z{Z.shape}")
    n, p = Z.shape
    if n < p:
        raise DimensionMismatch(f"need n >= p, got n={n}, p={p}")
    Q, R, piv = sla.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * _EPS * (diag[0] if diag.size else 0.0)
    rank_ok = bool(diag.size == 0 or diag[-1] > tol)
    if rank_ok:
        coef = np.empty(p)
        coef[piv] = sla.solve_triangular(R, Q.T @ Y)
    else:
        coef = np.linalg.lstsq(Z, Y, rcond=None)[0]
    resid = Y - Z @ coef
    return OlsFit(coef, resid, float(np.mean(resid**2)), rank_ok)


class _ProjectionStack:
    """Orthonormal bases for a stack of designs of equal shape (m, n, p)."""

    def __init__(self, designs: NDArray[np.float64]):
        m, n, p = designs.shape
        Q, R = np.linalg.qr(designs)
        diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
        tol = max(n, p) * _EPS * diag.max(axis=1)
        self.full_rank = np.all(diag > tol[:, None], axis=1)
        for j in np.flatnonzero(~self.full_rank):
            # Replace by an SVD basis of the column space, padded with zero
            # columns; the coefficient map becomes the pseudo-inverse.
            U, s, Vt = np.linalg.svd(designs[j], full_matrices=False)
            r = int(np.sum(s > max(n, p) * _EPS * s[0])) if s[0] > 0 else 0
            Q[j] = 0.0
            Q[j][:, :r] = U[:, :r]
            Rinv = np.zeros((p, p))
            Rinv[:, :r] = Vt[:r].T / s[:r]
            R[j] = Rinv  # stored as a coefficient map, see coef()
        self.designs = designs
        self.Q = Q
        self.R = R
        self.shape = (m, n, p)

    def project(
        self, Y: NDArray[np.float64], *, fast: bool = False
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Return ``(Q'Y, SSR)`` for every design; SSR uses the 1/n scaling.

        ``fast`` uses ``|Y|^2 - |Q'Y|^2`` instead of forming residuals, which
        loses about ``eps * |Y|^2 / SSR`` in relative accuracy.
        """
        m, n, p = self.shape
        vec = Y.ndim == 1
        Y2 = Y[:, None] if vec else Y
        B = Y2.shape[1]
        QtY = np.einsum("mnp,nb->mpb", self.Q, Y2, optimize=True)
        if fast:
            ssr = (np.einsum("nb,nb->b", Y2, Y2)[None, :] - np.einsum("mpb,mpb->mb", QtY, QtY)) / n
            ssr = np.maximum(ssr, 0.0)
            return (QtY[:, :, 0], ssr[:, 0]) if vec else (QtY, ssr)
        ssr = np.empty((m, B))
        step = max(1, _BLOCK_ELEMS // max(m * n, 1))
        for lo in range(0, B, step):
            hi = min(B, lo + step)
            resid = Y2[None, :, lo:hi] - self.Q @ QtY[:, :, lo:hi]
            ssr[:, lo:hi] = np.einsum("mnb,mnb->mb", resid, resid) / n
        if vec:
            return QtY[:, :, 0], ssr[:, 0]
        return QtY, ssr

    def coef(self, j: int | NDArray[np.intp], qty: NDArray[np.float64]) -> NDArray[np.float64]:
        """Coefficients of design(s) ``j`` given the projections ``Q_j'y``."""
        j = np.asarray(j)
        if j.ndim == 0:
            if self.full_rank[j]:
                return sla.solve_triangular(self.R[j], qty)
            return self.R[j] @ qty
        out = np.empty((j.shape[0], self.shape[2]))
        fr = self.full_rank[j]
        if np.any(fr):
            out[fr] = np.linalg.solve(self.R[j[fr]], qty[fr][..., None])[..., 0]
        if np.any(~fr):
            out[~fr] = np.einsum("bpq,bq->bp", self.R[j[~fr]], qty[~fr])
        return out


@dataclass(frozen=True)
class FitUnconstrained:
    """Unconstrained least squares fit over a threshold grid."""

    theta: ThetaJump
    ssr_hat: float
    grid: NDArray[np.float64]
    ssr_profile: NDArray[np.float64]
    residuals: NDArray[np.float64]
    fitted: NDArray[np.float64]
    index: int
    rank_ok: bool = True

    @property
    def profile(self) -> NDArray[np.float64]:
        """Array of rows ``(gamma_j, S_n(gamma_j))``."""
        return np.column_stack([self.grid, self.ssr_profile])

    @property
    def n(self) -> int:
        return self.residuals.shape[0]


@dataclass(frozen=True)
class FitConstrained:
    """Continuity-constrained (kink) least squares fit over a threshold grid."""

    theta: ThetaKink
    ssr_tilde: float
    grid: NDArray[np.float64]
    ssr_profile: NDArray[np.float64]
    residuals: NDArray[np.float64]
    fitted: NDArray[np.float64]
    index: int
    rank_ok: bool = True

    @property
    def profile(self) -> NDArray[np.float64]:
        return np.column_stack([self.grid, self.ssr_profile])


@dataclass(frozen=True)
class LseBatch:
    """Unconstrained fits for a batch of responses sharing the same design."""

    ssr_hat: NDArray[np.float64]  # (B,)
    index: NDArray[np.intp]  # (B,) winning grid index
    gamma: NDArray[np.float64]  # (B,)
    alpha: NDArray[np.float64]  # (B, 2k)
    residuals: NDArray[np.float64]  # (n, B)
    rank_ok: NDArray[np.bool_]  # (B,)
    profile: NDArray[np.float64]  # (G, B)

    @property
    def delta(self) -> NDArray[np.float64]:
        k = self.alpha.shape[1] // 2
        return self.alpha[:, k:]


class GridFitter:
    """Profile least squares over a fixed regressor matrix and candidate grid.

    Factorisations depend on ``X`` and the grid only, so one instance serves
    every response vector drawn for the same design (bootstrap resamples).
    """

    def __init__(self, X: NDArray[np.float64], gammas: ArrayLike, q: ArrayLike | None = None):
        self.X = np.asarray(X, dtype=np.float64)
        self.q = self.X[:, -1] if q is None else np.asarray(q, dtype=np.float64)
        self.gammas = np.asarray(gammas, dtype=np.float64)
        if self.gammas.ndim != 1 or self.gammas.size == 0:
            raise DimensionMismatch("gammas must be a non-empty vector")
        if np.any(np.diff(self.gammas) <= 0):
            raise DimensionMismatch("gammas must be strictly increasing")
        qs = np.sort(self.q)
        below = np.searchsorted(qs, self.gammas, side="right")
        _, first, self._part = np.unique(below, return_index=True, return_inverse=True)
        self._part = self._part.reshape(-1)
        reps = self.gammas[first]
        self._lse = _ProjectionStack(np.stack([build_regressors(self.X, g, self.q) for g in reps]))
        self._clse: _ProjectionStack | None = None

    @classmethod
    def for_dataset(cls, dataset: Dataset, grid: GridSpec | None = None) -> GridFitter:
        return cls(dataset.X, threshold_grid(dataset, grid), dataset.q)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def kink_stack(self) -> _ProjectionStack:
        if self._clse is None:
            self._clse = _ProjectionStack(np.stack([kink_design(self.X, g, self.q) for g in self.gammas]))
        return self._clse

    # -- unconstrained ---------------------------------------------------

    def lse_profile(self, Y: NDArray[np.float64]) -> NDArray[np.float64]:
        """Concentrated SSR at every candidate, shape (G,) or (G, B)."""
        return self._lse.project(Y)[1][self._part]

    def fit_lse(self, y: ArrayLike) -> FitUnconstrained:
        y = np.asarray(y, dtype=np.float64)
        qty, ssr_u = self._lse.project(y)
        prof = ssr_u[self._part]
        idx = int(np.argmin(prof))
        u = self._part[idx]
        rank_ok = bool(self._lse.full_rank[u])
        if not rank_ok:
            raise RankDeficient(f"design at gamma={self.gammas[idx]:.6g} is rank deficient")
        alpha = self._lse.coef(u, qty[u])
        resid = y - self._lse.designs[u] @ alpha
        k = self.k
        theta = ThetaJump(alpha[:k], alpha[k:], self.gammas[idx])
        return FitUnconstrained(
            theta, float(prof[idx]), self.gammas, prof, resid, y - resid, idx, rank_ok
        )

    def fit_lse_batch(self, Y: NDArray[np.float64]) -> LseBatch:
        """Vectorised :meth:`fit_lse` for the columns of ``Y`` (n, B)."""
        qty, ssr_u = self._lse.project(Y, fast=True)
        prof = ssr_u[self._part]
        idx = np.argmin(prof, axis=0)
        cols = np.arange(Y.shape[1])
        u = self._part[idx]
        alpha = self._lse.coef(u, qty[u, :, cols])
        fitted = np.einsum("bnp,bp->nb", self._lse.designs[u], alpha)
        return LseBatch(
            prof[idx, cols],
            idx,
            self.gammas[idx],
            alpha,
            Y - fitted,
            self._lse.full_rank[u],
            prof,
        )

    # -- constrained -----------------------------------------------------

    def clse_profile(self, Y: NDArray[np.float64], *, fast: bool = False) -> NDArray[np.float64]:
        return self.kink_stack.project(Y, fast=fast)[1]

    def fit_clse(self, y: ArrayLike) -> FitConstrained:
        y = np.asarray(y, dtype=np.float64)
        stack = self.kink_stack
        qty, prof = stack.project(y)
        idx = int(np.argmin(prof))
        rank_ok = bool(stack.full_rank[idx])
        if not rank_ok:
            raise RankDeficient(f"kink design at gamma={self.gammas[idx]:.6g} is rank deficient")
        coef = stack.coef(idx, qty[idx])
        resid = y - stack.designs[idx] @ coef
        theta = ThetaKink(coef[:-1], coef[-1], self.gammas[idx])
        return FitConstrained(
            theta, float(prof[idx]), self.gammas, prof, resid, y - resid, idx, rank_ok
        )


def concentrated_ssr(
    X: NDArray[np.float64],
    gamma: float,
    Y: NDArray[np.float64],
    *,
    fast: bool = False,
    q: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """``S_n(gamma)`` at an arbitrary threshold for one or many responses."""
    stack = _ProjectionStack(build_regressors(X, gamma, q)[None])
    return stack.project(np.asarray(Y, dtype=np.float64), fast=fast)[1][0]


def fit_lse(dataset: Dataset, grid: GridSpec | None = None) -> FitUnconstrained:
    """Unconstrained LSE by grid search over the concentrated SSR."""
    return GridFitter.for_dataset(dataset, grid).fit_lse(dataset.y)


def fit_clse(dataset: Dataset, grid: GridSpec | None = None) -> FitConstrained:
    """Continuity-constrained LSE: hinge regression profiled over the same grid."""
    return GridFitter.for_dataset(dataset, grid).fit_clse(dataset.y)
