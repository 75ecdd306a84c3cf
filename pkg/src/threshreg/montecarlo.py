"""Simulation designs A-D and warp-speed Monte Carlo experiments.

Designs (errors ``eps_t = |q_t| e_t`` with ``e_t, q_t`` iid normal, unit variance)::

    A: y = 2 + 3 x + delta x 1{q > gamma0} + eps       x independent of q
    B: y = 2 + 3 q + delta q 1{q > gamma0} + eps       jump of size delta*gamma0
    C: y = 2 + 3 q + delta q 1{q > gamma0} + eps       gamma0 = 0, so a kink
    D: y = 2 + 3 q + delta q 1{t > gamma0 n} + eps     structural break in time

For D the regressors are ``(1, q_t)`` and the threshold variable is ``t / n``,
held outside the regressor matrix.

Bootstrap-calibrated rejection rates use the warp-speed method: each
replication contributes one (or ``B_per_rep``) bootstrap statistic and the
critical value is a quantile of the draws pooled over replications.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import TYPE_CHECKING, Any, Literal

import numpy as np

from threshreg.bootstrap import (
    MultiplierDist,
    RngSeed,
    _qn_draws,
    empirical_quantile,
    grid_bootstrap_ci,
    grid_bootstrap_draws,
    multipliers,
)
from threshreg.continuity import continuity_statistics
from threshreg.errors import InputError, ThresholdError
from threshreg.estimation import GridFitter
from threshreg.inference import (
    KernelSpec,
    asymptotic_confidence_set,
    limit_quantile,
    qlr_at,
    qlr_curve,
    scale_factor,
)
from threshreg.model import Dataset, GridSpec

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

__all__ = [
    "DeltaRule",
    "McDesign",
    "McReport",
    "run_continuity_experiment",
    "run_coverage_experiment",
    "run_estimator_dispersion",
    "run_power_experiment",
    "run_size_experiment",
    "simulate_design",
]

logger = logging.getLogger(__name__)

DesignKind = Literal["A", "B", "C", "D"]


@dataclass(frozen=True)
class DeltaRule:
    """Threshold effect: ``value`` if fixed, else ``value * n**(-phi)``."""

    kind: Literal["fixed", "shrinking"] = "shrinking"
    value: float = math.sqrt(10.0) / 4.0
    phi: float = 0.25

    def resolve(self, n: int) -> float:
        if self.kind == "fixed":
            return self.value
        return self.value * n ** (-self.phi)

    def scaled(self, factor: float) -> DeltaRule:
        return replace(self, value=self.value * factor)


_DEFAULTS: dict[str, tuple[float, float | None, DeltaRule]] = {
    # kind: (q_mean, gamma0 or None for "median of q", delta rule)
    "A": (2.0, None, DeltaRule()),
    "B": (2.0, None, DeltaRule()),
    "C": (0.0, 0.0, DeltaRule("fixed", 2.0)),
    "D": (2.0, 0.5, DeltaRule()),
}


@dataclass(frozen=True)
class McDesign:
    """A data-generating process.

    ``gamma0`` is in units of q for A-C and a break fraction in (0, 1) for D.
    ``None`` fields take the design defaults.  ``noise_scale = 0`` gives an
    exact, noise-free sample.
    """

    kind: DesignKind
    n: int
    gamma0: float | None = None
    delta_rule: DeltaRule | None = None
    q_mean: float | None = None
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _DEFAULTS:
            raise InputError(f"unknown design {self.kind!r}")
        q_mean, g0, rule = _DEFAULTS[self.kind]
        if self.q_mean is None:
            object.__setattr__(self, "q_mean", q_mean)
        if self.gamma0 is None:
            object.__setattr__(self, "gamma0", g0 if g0 is not None else self.q_mean)
        if self.delta_rule is None:
            object.__setattr__(self, "delta_rule", rule)
        if self.kind == "D" and not 0.0 < self.gamma0 < 1.0:
            raise InputError("design D takes gamma0 as a break fraction in (0, 1)")
        if self.n < 10:
            raise InputError("n must be at least 10")

    @property
    def delta(self) -> float:
        return self.delta_rule.resolve(self.n)

    @property
    def threshold(self) -> float:
        """True threshold on the scale of the dataset's threshold column."""
        if self.kind == "D":
            return math.floor(self.gamma0 * self.n) / self.n
        return float(self.gamma0)

    def describe(self) -> dict[str, Any]:
        d = asdict(self)
        d["delta"] = self.delta
        d["threshold"] = self.threshold
        return d


def simulate_design(design: McDesign, rng: np.random.Generator | RngSeed) -> Dataset:
    if isinstance(rng, RngSeed):
        rng = rng.generator()
    n = design.n
    q = design.q_mean + rng.standard_normal(n)
    e = rng.standard_normal(n)
    eps = design.noise_scale * np.abs(q) * e
    delta = design.delta
    if design.kind == "A":
        x = rng.standard_normal(n)
        y = 2.0 + 3.0 * x + delta * x * (q > design.gamma0) + eps
        return Dataset.from_columns(y, q, x, names=("const", "x", "q"))
    if design.kind in ("B", "C"):
        y = 2.0 + 3.0 * q + delta * q * (q > design.gamma0) + eps
        return Dataset.from_columns(y, q, names=("const", "q"))
    t = np.arange(1, n + 1)
    tau = t / n
    y = 2.0 + 3.0 * q + delta * q * (tau > design.threshold) + eps
    return Dataset.from_columns(y, tau, q, names=("const", "q"), q_in_regressors=False)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class McReport:
    """Rejection or coverage rates; one row per method, one column per level."""

    experiment: str
    design: dict[str, Any]
    nominal_levels: list[float]
    estimates: dict[str, list[float]]
    replications: int
    warp_speed: bool
    failed: int = 0
    settings: dict[str, Any] = field(default_factory=dict)

    @property
    def mc_se(self) -> dict[str, list[float]]:
        r = max(self.replications - self.failed, 1)
        return {m: [math.sqrt(p * (1.0 - p) / r) for p in v] for m, v in self.estimates.items()}

    def rate(self, method: str, level: float) -> float:
        return self.estimates[method][self._col(level)]

    def _col(self, level: float) -> int:
        for i, lv in enumerate(self.nominal_levels):
            if math.isclose(lv, level):
                return i
        raise KeyError(level)

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "design": self.design,
            "nominal_levels": self.nominal_levels,
            "estimates": self.estimates,
            "mc_se": self.mc_se,
            "replications": self.replications,
            "failed": self.failed,
            "warp_speed": self.warp_speed,
            "settings": self.settings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_tsv(self) -> str:
        head = ["method", *(f"{lv:g}" for lv in self.nominal_levels), *(f"se_{lv:g}" for lv in self.nominal_levels)]
        lines = ["\t".join(head)]
        se = self.mc_se
        for m, vals in self.estimates.items():
            row = [m, *(f"{v:.6f}" for v in vals), *(f"{v:.6f}" for v in se[m])]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# replication driver
# ---------------------------------------------------------------------------


def _run_one(fn: Callable[[int], Any], r: int) -> Any:
    try:
        return fn(r)
    except ThresholdError as exc:
        logger.debug("replication %d failed: %s", r, exc)
        return None


def _chunk(fn: Callable[[int], Any], reps: range) -> list[Any]:
    from threadpoolctl import threadpool_limits

    with threadpool_limits(1):
        return [_run_one(fn, r) for r in reps]


def map_replications(fn: Callable[[int], Any], R: int, workers: int = 1) -> list[Any]:
    """``[fn(0), ..., fn(R-1)]`` in order; failed replications give ``None``.

    BLAS is pinned to one thread per process so results are bitwise identical
    for any ``workers``.
    """
    if workers <= 1:
        return _chunk(fn, range(R))
    bounds = np.linspace(0, R, min(workers * 4, R) + 1).astype(int)
    chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(partial(_chunk, fn), chunks)
        return [x for part in parts for x in part]


def _warp_rates(stats: NDArray, boot: NDArray, levels: Sequence[float]) -> list[float]:
    """Share of ``stats`` above the pooled bootstrap ``(1 - s)`` quantile."""
    return [float(np.mean(stats > empirical_quantile(boot, 1.0 - s))) for s in levels]


# ---------------------------------------------------------------------------
# size of H0: gamma = gamma0
# ---------------------------------------------------------------------------


def _size_rep(design, seed, grid, kernel, dist, B_per_rep, r):
    rs = RngSeed(seed, r)
    data = simulate_design(design, rs.generator())
    fitter = GridFitter.for_dataset(data, grid)
    lse = fitter.fit_lse(data.y)
    xi = scale_factor(data, lse, kernel)
    g0 = design.threshold
    stat = qlr_at(data, lse, g0) / xi.xi_hat
    boot = grid_bootstrap_draws(data, g0, B_per_rep, kernel, dist, rs.derive(1), fitter=fitter, lse=lse)
    return stat, np.asarray(boot)


def run_size_experiment(
    design: McDesign,
    levels: Sequence[float] = (0.01, 0.05, 0.10),
    R: int = 1000,
    B_per_rep: int = 1,
    methods: Sequence[str] = ("asymptotic", "bootstrap"),
    seed: int = 0,
    *,
    grid: GridSpec | None = None,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    workers: int = 1,
) -> McReport:
    """Size of the scaled-QLR test of ``H0: gamma = gamma0`` at nominal sizes ``levels``."""
    if R < 1:
        raise InputError("R must be positive")
    kernel = kernel or KernelSpec()
    dist = dist or MultiplierDist()
    fn = partial(_size_rep, design, seed, grid, kernel, dist, B_per_rep)
    out = [o for o in map_replications(fn, R, workers) if o is not None]
    stats = np.array([o[0] for o in out])
    boot = np.concatenate([o[1] for o in out]) if out else np.array([np.inf])
    est: dict[str, list[float]] = {}
    if "asymptotic" in methods:
        est["asymptotic"] = [float(np.mean(stats > limit_quantile(1.0 - s))) for s in levels]
    if "bootstrap" in methods:
        est["bootstrap"] = _warp_rates(stats, boot, levels)
    return McReport(
        "size", design.describe(), list(levels), est, R, True, R - len(out),
        {"seed": seed, "B_per_rep": B_per_rep, "bootstrap_draws": int(boot.size)},
    )


# ---------------------------------------------------------------------------
# coverage of confidence sets for gamma0
# ---------------------------------------------------------------------------


def _coverage_rep(design, seed, grid, kernel, dist, levels, B, n_points, methods, r):
    rs = RngSeed(seed, r)
    data = simulate_design(design, rs.generator())
    fitter = GridFitter.for_dataset(data, grid)
    lse = fitter.fit_lse(data.y)
    g0 = design.threshold
    row = []
    if "asymptotic" in methods:
        xi = scale_factor(data, lse, kernel)
        curve = qlr_curve(data, lse)
        row.append([asymptotic_confidence_set(curve, xi, s).contains(g0) for s in levels])
    if "bootstrap" in methods:
        pts = np.linspace(fitter.gammas[0], fitter.gammas[-1], n_points)
        res = grid_bootstrap_ci(
            data, levels, pts, B, kernel, dist, rs.derive(1), fitter=fitter, lse=lse
        )
        row.append([res.sets[s].contains(g0) for s in levels])
    return row


def run_coverage_experiment(
    design: McDesign,
    levels: Sequence[float] = (0.90, 0.95, 0.99),
    R: int = 1000,
    B_per_rep: int = 399,
    grid_points: int = 10,
    seed: int = 0,
    *,
    methods: Sequence[str] = ("asymptotic", "bootstrap"),
    grid: GridSpec | None = None,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    workers: int = 1,
) -> McReport:
    """Coverage of the asymptotic set and the grid-bootstrap set for ``gamma0``.

    Bootstrap quantiles are computed at ``grid_points`` equidistant points of
    the trimmed support of q, each from ``B_per_rep`` resamples.
    """
    kernel = kernel or KernelSpec()
    dist = dist or MultiplierDist()
    methods = [m for m in ("asymptotic", "bootstrap") if m in methods]
    fn = partial(_coverage_rep, design, seed, grid, kernel, dist, list(levels), B_per_rep, grid_points, methods)
    out = [o for o in map_replications(fn, R, workers) if o is not None]
    est = {}
    for i, m in enumerate(methods):
        hits = np.array([o[i] for o in out], dtype=float).reshape(len(out), len(levels))
        est[m] = [float(v) for v in hits.mean(axis=0)] if out else [math.nan] * len(levels)
    return McReport(
        "coverage", design.describe(), list(levels), est, R, False, R - len(out),
        {"seed": seed, "B_per_rep": B_per_rep, "grid_points": grid_points},
    )


# ---------------------------------------------------------------------------
# continuity tests: size under a kink, power under a jump
# ---------------------------------------------------------------------------


def _continuity_rep(design, seed, grid, kernel, dist, B_per_rep, r):
    rs = RngSeed(seed, r)
    data = simulate_design(design, rs.generator())
    fitter = GridFitter.for_dataset(data, grid)
    st = continuity_statistics(data, kernel=kernel, fitter=fitter)
    eta = multipliers(data.n, B_per_rep, dist, rs.derive(2))
    qn_star = _qn_draws(fitter, st.clse.fitted, st.lse.residuals, eta)
    qlr_star = grid_bootstrap_draws(
        data, st.gamma_tilde, B_per_rep, kernel, dist, rs.derive(3), fitter=fitter, lse=st.lse,
        fitted=st.clse.fitted,
    )
    qn_star = np.where(np.isnan(qn_star), np.inf, qn_star)
    return st.q_n, st.qlr_tilde, qn_star, np.asarray(qlr_star)


def run_continuity_experiment(
    design: McDesign,
    levels: Sequence[float] = (0.10, 0.05, 0.01),
    R: int = 1000,
    B_per_rep: int = 1,
    seed: int = 0,
    *,
    grid: GridSpec | None = None,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    workers: int = 1,
    label: str = "",
) -> McReport:
    """Warp-speed rejection rates of the bootstrap ``Q_n`` and ``QLR_n(gamma_tilde)`` tests."""
    kernel = kernel or KernelSpec()
    dist = dist or MultiplierDist()
    fn = partial(_continuity_rep, design, seed, grid, kernel, dist, B_per_rep)
    out = [o for o in map_replications(fn, R, workers) if o is not None]
    qn = np.array([o[0] for o in out])
    qlr = np.array([o[1] for o in out])
    qn_b = np.concatenate([o[2] for o in out]) if out else np.array([np.inf])
    qlr_b = np.concatenate([o[3] for o in out]) if out else np.array([np.inf])
    est = {f"QLR_n{label}": _warp_rates(qlr, qlr_b, levels), f"Q_n{label}": _warp_rates(qn, qn_b, levels)}
    return McReport(
        "continuity", design.describe(), list(levels), est, R, True, R - len(out),
        {"seed": seed, "B_per_rep": B_per_rep},
    )


def run_power_experiment(
    design: McDesign,
    levels: Sequence[float] = (0.10, 0.05, 0.01),
    R: int = 1000,
    delta_multipliers: Sequence[float] = (1.0, 2.0, 4.0),
    seed: int = 0,
    *,
    B_per_rep: int = 1,
    grid: GridSpec | None = None,
    kernel: KernelSpec | None = None,
    dist: MultiplierDist | None = None,
    workers: int = 1,
) -> McReport:
    """Continuity-test power under a jump design for scaled threshold effects.

    Each multiplier rescales the design's delta rule; the same seed is used
    for every multiplier so the columns share their random draws.
    """
    est: dict[str, list[float]] = {}
    failed = 0
    deltas = {}
    for m in delta_multipliers:
        d = replace(design, delta_rule=design.delta_rule.scaled(m))
        rep = run_continuity_experiment(
            d, levels, R, B_per_rep, seed, grid=grid, kernel=kernel, dist=dist, workers=workers, label=f"[x{m:g}]"
        )
        est.update(rep.estimates)
        failed += rep.failed
        deltas[f"x{m:g}"] = d.delta
    return McReport(
        "power", design.describe(), list(levels), est, R, True, failed,
        {"seed": seed, "B_per_rep": B_per_rep, "deltas": deltas},
    )


# ---------------------------------------------------------------------------
# sampling dispersion of the two threshold estimators
# ---------------------------------------------------------------------------


def _dispersion_rep(design, seed, grid, r):
    data = simulate_design(design, RngSeed(seed, r).generator())
    fitter = GridFitter.for_dataset(data, grid)
    return fitter.fit_lse(data.y).theta.gamma, fitter.fit_clse(data.y).theta.gamma


def run_estimator_dispersion(
    design: McDesign, R: int = 500, seed: int = 0, *, grid: GridSpec | None = None, workers: int = 1
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Draws of ``(gamma_hat, gamma_tilde)`` over ``R`` simulated samples."""
    out = [o for o in map_replications(partial(_dispersion_rep, design, seed, grid), R, workers) if o]
    arr = np.array(out, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]
