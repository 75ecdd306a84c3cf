"""Data model, regressor construction, SSR evaluation and threshold grids.

Layout convention: the regressor matrix ``X`` has an intercept in its first
column and the threshold variable ``q`` in its last column, so
``x_t = (1, x_t2', q_t)'``.  A break model whose threshold variable is not a
regressor (for example a time index) passes ``q`` separately.  The regime
indicator is ``1{q_t > gamma}``; observations with ``q_t == gamma`` belong to
the lower regime.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from threshreg.errors import DimensionMismatch, EmptyGrid, InputError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "Dataset",
    "GridSpec",
    "ThetaJump",
    "ThetaKink",
    "build_regressors",
    "hinge",
    "kink_design",
    "kink_mean",
    "ssr_kink",
    "ssr_unconstrained",
    "threshold_grid",
]


@dataclass(frozen=True)
class Dataset:
    """Response and regressors for a threshold regression.

    Attributes
    ----------
    y : ndarray, shape (n,)
    X : ndarray, shape (n, k)
        First column all ones.  Unless ``threshold`` is given, the last
        column is the threshold variable.
    names : tuple of str
        Column labels for ``X``, used in reports only.
    threshold : ndarray, shape (n,), optional
        Threshold variable that is not among the regressors.  The kink
        model is continuous in ``q`` only when ``q`` is a column of ``X``.
    """

    y: NDArray[np.float64]
    X: NDArray[np.float64]
    names: tuple[str, ...] = field(default=(), compare=False)
    threshold: NDArray[np.float64] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        if y.ndim != 1:
            raise DimensionMismatch("y must be one-dimensional")
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has shape {X.shape}, expected ({y.shape[0]}, k)")
        if X.shape[1] < (2 if self.threshold is None else 1):
            raise DimensionMismatch("X needs at least an intercept and the threshold variable")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("y and X must be finite (missing values are not imputed)")
        if not np.all(X[:, 0] == 1.0):
            raise InputError("first column of X must be identically 1")
        y.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.names and len(self.names) != X.shape[1]:
            raise DimensionMismatch("names must label every column of X")
        if self.threshold is not None:
            q = np.asarray(self.threshold, dtype=np.float64)
            if q.shape != y.shape:
                raise DimensionMismatch("threshold must have one value per observation")
            if not np.all(np.isfinite(q)):
                raise InputError("threshold variable must be finite")
            q.flags.writeable = False
            object.__setattr__(self, "threshold", q)
        if not self.names:
            if self.threshold is None:
                mid = tuple(f"x{j}" for j in range(1, X.shape[1] - 1))
                object.__setattr__(self, "names", ("const", *mid, "q"))
            else:
                mid = tuple(f"x{j}" for j in range(1, X.shape[1]))
                object.__setattr__(self, "names", ("const", *mid))

    @classmethod
    def from_columns(
        cls,
        y: ArrayLike,
        q: ArrayLike,
        regressors: ArrayLike | None = None,
        names: Sequence[str] | None = None,
        *,
        q_in_regressors: bool = True,
    ) -> Dataset:
        """Assemble ``X = [1, regressors, q]``, or ``[1, regressors]`` with ``q`` kept apart."""
        y = np.asarray(y, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        cols = [np.ones_like(q)]
        if regressors is not None:
            Z = np.asarray(regressors, dtype=np.float64)
            if Z.ndim == 1:
                Z = Z[:, None]
            cols.extend(Z.T)
        names = tuple(names) if names is not None else ()
        if not q_in_regressors:
            return cls(y, np.column_stack(cols), names, threshold=q)
        cols.append(q)
        return cls(y, np.column_stack(cols), names)

    @property
    def q(self) -> NDArray[np.float64]:
        return self.X[:, -1] if self.threshold is None else self.threshold

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def with_response(self, y: ArrayLike) -> Dataset:
        return Dataset(np.asarray(y, dtype=np.float64), self.X, self.names, self.threshold)


@dataclass(frozen=True)
class ThetaJump:
    """Unconstrained parameters: ``y = beta'x + delta'x 1{q > gamma}``."""

    beta: NDArray[np.float64]
    delta: NDArray[np.float64]
    gamma: float

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        delta = np.asarray(self.delta, dtype=np.float64).reshape(-1)
        if beta.shape != delta.shape:
            raise DimensionMismatch("beta and delta must have the same length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def alpha(self) -> NDArray[np.float64]:
        return np.concatenate([self.beta, self.delta])

    @property
    def jump_at_threshold(self) -> NDArray[np.float64]:
        """Continuity restriction residuals ``(delta_1 + delta_3 gamma, delta_2)``."""
        return np.concatenate([[self.delta[0] + self.delta[-1] * self.gamma], self.delta[1:-1]])


@dataclass(frozen=True)
class ThetaKink:
    """Continuity-constrained parameters: ``y = beta'x + delta3 (q - gamma) 1{q > gamma}``."""

    beta: NDArray[np.float64]
    delta3: float
    gamma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "delta3", float(self.delta3))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not np.isfinite(self.delta3):
            raise InputError("delta3 must be finite")

    def to_jump(self) -> ThetaJump:
        k = self.beta.shape[0]
        delta = np.zeros(k)
        delta[0] = -self.delta3 * self.gamma
        delta[-1] = self.delta3
        return ThetaJump(self.beta, delta, self.gamma)


@dataclass(frozen=True)
class GridSpec:
    """Candidate-threshold rule.

    ``trim_fraction`` of the q-values is discarded in each tail and
    ``n_points`` equidistant candidates (default ``n // 2``) are placed
    between the remaining extremes.  ``explicit_points`` overrides the rule.
    """

    trim_fraction: float = 0.05
    n_points: int | None = None
    explicit_points: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.trim_fraction < 0.5:
            raise InputError("trim_fraction must lie in [0, 0.5)")
        if self.n_points is not None and self.n_points < 3:
            raise InputError("n_points must be at least 3")
        if self.explicit_points is not None:
            pts = tuple(float(p) for p in np.atleast_1d(self.explicit_points))
            object.__setattr__(self, "explicit_points", pts)


def _as_Xq(
    data: Dataset | NDArray[np.float64], q: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    if isinstance(data, Dataset):
        return data.X, data.q
    X = np.asarray(data, dtype=np.float64)
    return X, X[:, -1] if q is None else np.asarray(q, dtype=np.float64)


def build_regressors(
    data: Dataset | NDArray[np.float64], gamma: float, q: NDArray[np.float64] | None = None
) -> NDArray[np.float64]:
    """Return the n x 2k matrix with rows ``(x_t', x_t' 1{q_t > gamma})``.

    ``q`` defaults to the dataset's threshold variable, or the last column
    when a bare matrix is passed.
    """
    X, q = _as_Xq(data, q)
    ind = (q > gamma).astype(np.float64)
    return np.hstack([X, X * ind[:, None]])


def hinge(q: NDArray[np.float64], gamma: float) -> NDArray[np.float64]:
    """``(q - gamma) 1{q > gamma}``."""
    return np.maximum(q - gamma, 0.0)


def kink_design(
    data: Dataset | NDArray[np.float64], gamma: float, q: NDArray[np.float64] | None = None
) -> NDArray[np.float64]:
    """Return the n x (k+1) matrix ``[X, (q - gamma) 1{q > gamma}]``."""
    X, q = _as_Xq(data, q)
    return np.column_stack([X, hinge(q, gamma)])


def kink_mean(
    theta: ThetaKink, X: NDArray[np.float64], q: NDArray[np.float64] | None = None
) -> NDArray[np.float64]:
    """Regression function of the kink model evaluated at the rows of ``X``."""
    X, q = _as_Xq(X, q)
    return X @ theta.beta + theta.delta3 * hinge(q, theta.gamma)


def ssr_unconstrained(dataset: Dataset, theta: ThetaJump) -> float:
    """Mean squared residual ``(1/n) sum (y_t - alpha'x_t(gamma))^2``."""
    resid = dataset.y - build_regressors(dataset, theta.gamma) @ theta.alpha
    return float(np.mean(resid**2))


def ssr_kink(dataset: Dataset, theta: ThetaKink) -> float:
    resid = dataset.y - kink_mean(theta, dataset.X, dataset.q)
    return float(np.mean(resid**2))


def threshold_grid(dataset: Dataset, spec: GridSpec | None = None) -> NDArray[np.float64]:
    """Sorted candidate thresholds, each leaving at least ``k + 1`` points per regime."""
    spec = spec or GridSpec()
    q = dataset.q
    if spec.explicit_points is not None:
        cand = np.unique(np.asarray(spec.explicit_points, dtype=np.float64))
    else:
        n_points = spec.n_points if spec.n_points is not None else max(dataset.n // 2, 3)
        lo, hi = np.quantile(q, [spec.trim_fraction, 1.0 - spec.trim_fraction])
        cand = np.unique(np.linspace(lo, hi, n_points))
    qs = np.sort(q)
    below = np.searchsorted(qs, cand, side="right")
    need = dataset.k + 1
    keep = (below >= need) & (dataset.n - below >= need)
    cand = cand[keep]
    if cand.size == 0:
        raise EmptyGrid("no candidate threshold leaves enough observations in both regimes")
    return cand
