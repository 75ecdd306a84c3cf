"""Command-line interface.

Subcommands::

    threshreg estimate        --input data.csv --response y --regressors x --threshold-var q
    threshreg test-continuity --input data.csv ... --boot-reps 999 --seed 1
    threshreg ci              --input data.csv ... --level 0.9 --level 0.95
    threshreg simulate        --design C --n 250 --experiment continuity --reps 2000

Exit status is 0 on success, 2 for input errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from threshreg import __version__
from threshreg.bootstrap import MultiplierDist, continuity_test_bootstrap, grid_bootstrap_ci
from threshreg.errors import InputError, NumericError
from threshreg.estimation import GridFitter
from threshreg.inference import (
    KernelSpec,
    asymptotic_confidence_set,
    kink_covariance,
    limit_quantile,
    qlr_curve,
    scale_factor,
    slope_covariance,
)
from threshreg.io import RunConfig, load_csv, provenance, rows_to_tsv, to_json, to_tsv_rows
from threshreg.model import Dataset, GridSpec
from threshreg.montecarlo import (
    McDesign,
    run_continuity_experiment,
    run_coverage_experiment,
    run_power_experiment,
    run_size_experiment,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

__all__ = ["build_parser", "cmd_ci", "cmd_estimate", "cmd_simulate", "cmd_test_continuity", "main"]

log = logging.getLogger("threshreg")


def _grid(config: RunConfig) -> GridSpec:
    return GridSpec(trim_fraction=config.trim, n_points=config.grid_points)


def _kernel(config: RunConfig) -> KernelSpec:
    return KernelSpec(config.kernel, config.bandwidth)


def _load(config: RunConfig) -> Dataset:
    if config.input_path is None:
        raise InputError("--input is required")
    return load_csv(config.input_path, config)


def _common_provenance(config: RunConfig, data: Dataset, fitter: GridFitter) -> dict[str, Any]:
    kernel = _kernel(config)
    return provenance(
        config,
        n=data.n,
        columns=list(data.names),
        grid={"trim": config.trim, "points": int(fitter.gammas.size),
              "min": float(fitter.gammas[0]), "max": float(fitter.gammas[-1])},
        kernel=config.kernel,
        bandwidth=kernel.resolve_bandwidth(data.q),
    )


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _estimation_section(data: Dataset, fitter: GridFitter) -> dict[str, Any]:
    lse = fitter.fit_lse(data.y)
    clse = fitter.fit_clse(data.y)
    k = data.k
    cov = slope_covariance(data, lse)
    se = cov.std_errors
    # Upper-regime coefficients are beta + delta.
    A = np.hstack([np.eye(k), np.eye(k)])
    upper_se = np.sqrt(np.clip(np.diag(A @ cov.cov @ A.T), 0.0, None))
    names = list(data.names)
    below = int(np.sum(data.q <= lse.theta.gamma))
    kcov = kink_covariance(data, clse)
    kse = kcov.std_errors
    return {
        "unconstrained": {
            "gamma_hat": lse.theta.gamma,
            "ssr_hat": lse.ssr_hat,
            "regime_sizes": {"below": below, "above": data.n - below},
            "coefficients": {
                name: {
                    "beta": lse.theta.beta[i],
                    "beta_se": se[i],
                    "delta": lse.theta.delta[i],
                    "delta_se": se[k + i],
                    "upper": lse.theta.beta[i] + lse.theta.delta[i],
                    "upper_se": upper_se[i],
                }
                for i, name in enumerate(names)
            },
        },
        "constrained": {
            "gamma_tilde": clse.theta.gamma,
            "ssr_tilde": clse.ssr_tilde,
            "coefficients": {name: {"beta": clse.theta.beta[i], "beta_se": kse[i]} for i, name in enumerate(names)},
            "delta3": clse.theta.delta3,
            "delta3_se": kse[k],
        },
    }


def cmd_estimate(config: RunConfig) -> dict[str, Any]:
    data = _load(config)
    fitter = GridFitter.for_dataset(data, _grid(config))
    return {"provenance": _common_provenance(config, data, fitter), "estimation": _estimation_section(data, fitter)}


# ---------------------------------------------------------------------------
# test-continuity
# ---------------------------------------------------------------------------


def cmd_test_continuity(config: RunConfig) -> dict[str, Any]:
    data = _load(config)
    grid = _grid(config)
    fitter = GridFitter.for_dataset(data, grid)
    res = continuity_test_bootstrap(data, grid, config.boot_reps, MultiplierDist(), config.seed, _kernel(config))
    st = res.statistic
    return {
        "provenance": _common_provenance(config, data, fitter),
        "test": {
            "B": res.B,
            "q_n": st.q_n,
            "p_q_n": res.p_qn,
            "qlr_tilde": st.qlr_tilde,
            "p_qlr_tilde": res.p_qlr,
            "gamma_hat": st.gamma_hat,
            "gamma_tilde": st.gamma_tilde,
            "xi_hat": st.xi.xi_hat if st.xi is not None else None,
            "redrawn": res.redrawn,
            "counted_degenerate": res.counted_degenerate,
        },
    }


# ---------------------------------------------------------------------------
# ci
# ---------------------------------------------------------------------------


def _interval_rows(cs) -> list[dict[str, Any]]:
    return cs.to_dict()["intervals"]


def cmd_ci(config: RunConfig) -> tuple[dict[str, Any], list[list[float]]]:
    """Confidence sets and the plot table ``(gamma, qlr_scaled, acv, grid_quantile)``.

    The plot table uses the first requested level.
    """
    data = _load(config)
    grid = _grid(config)
    kernel = _kernel(config)
    fitter = GridFitter.for_dataset(data, grid)
    lse = fitter.fit_lse(data.y)
    clse = fitter.fit_clse(data.y)
    xi = scale_factor(data, lse, kernel)
    curve = qlr_curve(data, lse)
    levels = list(config.levels)
    boot = grid_bootstrap_ci(
        data, levels, None, config.boot_reps, kernel, MultiplierDist(), config.seed, grid,
        n_quantile_points=config.quantile_points, fitter=fitter, lse=lse, gamma_tilde=clse.theta.gamma,
    )
    sets = {}
    for s in levels:
        sets[f"{s:g}"] = {
            "asymptotic": _interval_rows(asymptotic_confidence_set(curve, xi, s)),
            "grid_bootstrap": _interval_rows(boot.sets[s]),
            "acv": limit_quantile(s),
        }
    s0 = levels[0]
    scaled = curve.values / xi.xi_hat
    quant = boot.curves[s0](curve.grid)
    acv = limit_quantile(s0)
    plot = [[g, v, acv, c] for g, v, c in zip(curve.grid, scaled, quant)]
    report = {
        "provenance": _common_provenance(config, data, fitter),
        "ci": {
            "gamma_hat": lse.theta.gamma,
            "gamma_tilde": clse.theta.gamma,
            "xi_hat": xi.xi_hat,
            "B": config.boot_reps,
            "quantile_points": boot.grid_points,
            "sets": sets,
            "plot_level": s0,
        },
    }
    return report, plot


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config: RunConfig):
    if config.design is None or config.n is None:
        raise InputError("simulate needs --design and --n")
    design = McDesign(config.design, config.n, gamma0=config.gamma0)
    grid = _grid(config)
    kernel = _kernel(config)
    kw: dict[str, Any] = {"grid": grid, "kernel": kernel, "workers": config.workers}
    levels = tuple(config.levels)
    if config.experiment == "size":
        rep = run_size_experiment(design, levels, config.reps, seed=config.seed, **kw)
    elif config.experiment == "coverage":
        rep = run_coverage_experiment(
            design, levels, config.reps, config.boot_reps, config.quantile_points, config.seed, **kw
        )
    elif config.experiment == "continuity":
        rep = run_continuity_experiment(design, levels, config.reps, seed=config.seed, **kw)
    elif config.experiment == "power":
        rep = run_power_experiment(design, levels, config.reps, config.delta_multipliers, config.seed, **kw)
    else:
        raise InputError(f"unknown experiment {config.experiment!r}")
    rep.settings["provenance"] = provenance(config)
    return rep


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _lag(text: str) -> tuple[str, int]:
    col, sep, k = text.rpartition(":")
    if not sep or not col:
        raise argparse.ArgumentTypeError(f"expected COLUMN:K, got {text!r}")
    try:
        return col, int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"lag order must be an integer, got {k!r}") from None


def _names(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threshreg", description="Threshold regression with continuity tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--trim", type=float, default=0.05, help="fraction of q trimmed from each tail")
    common.add_argument("--grid-points", type=int, default=None, help="number of candidate thresholds (default n/2)")
    common.add_argument("--kernel", choices=("epanechnikov", "gaussian"), default="epanechnikov")
    common.add_argument("--bandwidth", type=float, default=None, help="kernel bandwidth (default 2.34 sd(q) n^-1/5)")
    common.add_argument("--boot-reps", type=int, default=399)
    common.add_argument("--level", type=float, action="append", dest="levels", help="repeatable")
    common.add_argument("--quantile-points", type=int, default=10, help="equidistant bootstrap quantile points")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("tsv", "json"), default="tsv", dest="fmt")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, dest="input_path")
    data.add_argument("--response", required=True)
    data.add_argument("--regressors", type=_names, default=[], help="comma-separated, excluding the intercept")
    data.add_argument("--threshold-var", required=True)
    data.add_argument("--lag", type=_lag, action="append", dest="lags", default=[],
                      metavar="COLUMN:K", help="make L<K>.<COLUMN> available; repeatable")
    data.add_argument("--threshold-not-regressor", action="store_true",
                      help="keep the threshold variable out of the regressors (break models)")

    sub.add_parser("estimate", parents=[common, data], help="unconstrained and kink fits")
    sub.add_parser("test-continuity", parents=[common, data], help="bootstrap tests of continuity")
    p_ci = sub.add_parser("ci", parents=[common, data], help="confidence sets for the threshold")
    p_ci.add_argument("--plot-out", default=None, help="plot table path (default <out>.plot.tsv)")
    p_sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo experiments")
    p_sim.add_argument("--design", choices=("A", "B", "C", "D"), required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--experiment", choices=("size", "coverage", "continuity", "power"), default="size")
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--gamma0", type=float, default=None)
    p_sim.add_argument("--delta-multipliers", type=lambda s: [float(v) for v in _names(s)], default=[1.0, 2.0, 4.0])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.command != "simulate":
        default_levels: tuple[float, ...] = (0.95,)
    elif args.experiment == "coverage":
        default_levels = (0.90, 0.95, 0.99)
    else:
        default_levels = (0.10, 0.05, 0.01)
    kw: dict[str, Any] = dict(
        trim=args.trim,
        grid_points=args.grid_points,
        kernel=args.kernel,
        bandwidth=args.bandwidth,
        boot_reps=args.boot_reps,
        levels=tuple(args.levels) if args.levels else default_levels,
        quantile_points=args.quantile_points,
        seed=args.seed,
        fmt=args.fmt,
        out=args.out,
        workers=args.workers,
    )
    if args.command == "simulate":
        kw.update(design=args.design, n=args.n, experiment=args.experiment, reps=args.reps,
                  gamma0=args.gamma0, delta_multipliers=tuple(args.delta_multipliers))
    else:
        kw.update(input_path=args.input_path, response=args.response, regressors=tuple(args.regressors),
                  threshold_var=args.threshold_var, lags=tuple(args.lags),
                  threshold_in_regressors=not args.threshold_not_regressor)
    return RunConfig(**kw)


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _stamp(config: RunConfig) -> str:
    """Provenance comment line for plain TSV tables."""
    prov = provenance(config)
    return f"# threshreg {prov['version']} seed={prov['seed']} config_hash={prov['config_hash']}\n"


def _render(report: dict[str, Any], fmt: str) -> str:
    return to_json(report) if fmt == "json" else to_tsv_rows(report)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        if args.command == "estimate":
            _emit(_render(cmd_estimate(config), config.fmt), config.out)
        elif args.command == "test-continuity":
            _emit(_render(cmd_test_continuity(config), config.fmt), config.out)
        elif args.command == "ci":
            report, plot = cmd_ci(config)
            _emit(_render(report, config.fmt), config.out)
            plot_path = args.plot_out or (f"{config.out}.plot.tsv" if config.out else None)
            if plot_path is not None:
                table = rows_to_tsv(["gamma", "qlr_scaled", "acv", "grid_quantile"], plot)
                _emit(_stamp(config) + table, plot_path)
        else:
            rep = cmd_simulate(config)
            _emit(rep.to_json() + "\n" if config.fmt == "json" else _stamp(config) + rep.to_tsv(), config.out)
    except InputError as exc:
        log.error("%s", exc)
        return 2
    except NumericError as exc:
        log.error("%s", exc)
        return 3
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
