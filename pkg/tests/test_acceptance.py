"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
The Monte Carlo criteria (5-8) run at their stated replication counts and
take several minutes in total.
"""

import os
import time

import numpy as np
import pytest
from scipy.integrate import quad

from threshreg.cli import run
from threshreg.continuity import continuity_statistics
from threshreg.estimation import fit_clse, fit_lse
from threshreg.inference import (
    KernelSpec,
    asymptotic_confidence_set,
    kernel_moment,
    limit_quantile,
    qlr_curve,
    scale_factor,
)
from threshreg.model import Dataset, GridSpec
from threshreg.montecarlo import (
    DeltaRule,
    McDesign,
    run_coverage_experiment,
    run_continuity_experiment,
    run_estimator_dispersion,
    run_power_experiment,
)

from conftest import record_criterion
from oracles import brute_clse, brute_lse, limit_quantile_oracle

WORKERS = max(1, min(4, os.cpu_count() or 1))


def _iqr(x):
    q75, q25 = np.percentile(x, [75, 25])
    return float(q75 - q25)


def _random_small_dataset(rng):
    n = int(rng.integers(12, 31))
    k = int(rng.integers(2, 4))
    q = rng.standard_normal(n)
    cols = [rng.standard_normal(n) for _ in range(k - 2)]
    X = np.column_stack([np.ones(n), *cols, q])
    y = X @ rng.standard_normal(k) + (q > 0) * (X @ rng.standard_normal(k)) + rng.standard_normal(n)
    return Dataset(y, X)


def _rel_close(a, b, rtol):
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(b), 1.0)))


def test_criterion_1_exhaustive_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    failures = []
    for i in range(50):
        d = _random_small_dataset(rng)
        lse, clse = fit_lse(d), fit_clse(d)
        g_o, coef_o, ssr_o, _ = brute_lse(d.y, d.X, d.q, lse.grid)
        gk_o, coefk_o, ssrk_o = brute_clse(d.y, d.X, d.q, clse.grid)
        k = d.k
        ok = (
            lse.theta.gamma == g_o
            and _rel_close(lse.theta.beta, coef_o[:k], 1e-10)
            and _rel_close(lse.theta.delta, coef_o[k:], 1e-10)
            and _rel_close(lse.ssr_hat, ssr_o, 1e-10)
            and clse.theta.gamma == gk_o
            and _rel_close(clse.theta.beta, coefk_o[:k], 1e-10)
            and _rel_close(clse.theta.delta3, coefk_o[k], 1e-10)
            and _rel_close(clse.ssr_tilde, ssrk_o, 1e-10)
        )
        if not ok:
            failures.append(i)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10
    record_criterion(1, ok, f"50 datasets, mismatches={failures}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_closed_form_quantiles():
    stated = {0.90: 5.9395, 0.95: 7.3523, 0.99: 10.5966}
    worst = 0.0
    parts = []
    for s, v in stated.items():
        got, oracle = limit_quantile(s), limit_quantile_oracle(s)
        worst = max(worst, abs(got - oracle))
        parts.append(f"s={s}: {got:.6f} (oracle {oracle:.6f}, stated {v})")
    ok = worst < 1e-6
    record_criterion(2, ok, "; ".join(parts) + f"; max |diff| {worst:.1e}")
    assert ok


def test_criterion_3_kernel_moment():
    kappa2 = kernel_moment(KernelSpec("epanechnikov"), 2)
    direct, _ = quad(lambda u: u * u * 0.75 * (1 - u * u), -1, 1)
    ok = abs(kappa2 - 0.2) < 1e-8 and abs(direct - 0.2) < 1e-8
    record_criterion(3, ok, f"kappa2 = {kappa2:.12f}")
    assert ok


def test_criterion_4_invariant_suite():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    bad = []
    for i in range(100):
        n = int(rng.integers(40, 200))
        q = rng.standard_normal(n)
        x = rng.standard_normal(n)
        jump = float(rng.uniform(0, 2))
        y = 1 + x + 0.5 * q + jump * (q > rng.uniform(-0.5, 0.5)) * (1 + x) + rng.standard_normal(n)
        d = Dataset.from_columns(y, q, x)
        st = continuity_statistics(d)
        curve = qlr_curve(d, st.lse)
        xi = st.xi
        d10 = d.with_response(10 * y)
        lse10 = fit_lse(d10)
        scaled = curve.values / xi.xi_hat
        scaled10 = qlr_curve(d10, lse10).values / scale_factor(d10, lse10).xi_hat
        gap = np.max(np.abs(st.clse.theta.to_jump().jump_at_threshold))
        sets = [asymptotic_confidence_set(curve, xi, s) for s in (0.8, 0.9, 0.95, 0.99)]
        nested = all(
            b.contains(g) for a, b in zip(sets, sets[1:]) for g in curve.grid if a.contains(g)
        )
        checks = [
            st.q_n >= 0,
            curve.values[st.lse.index] == 0.0,
            st.ssr_tilde >= st.ssr_hat,
            gap < 1e-10,
            xi.xi_hat > 0,
            np.allclose(scaled, scaled10, rtol=1e-8, atol=1e-10),
            nested,
        ]
        if not all(checks):
            bad.append(i)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 30
    record_criterion(4, ok, f"100 datasets, violations={bad}, {elapsed:.2f}s")
    assert ok


@pytest.mark.slow
def test_criterion_5_kink_null_size():
    t0 = time.perf_counter()
    rep = run_continuity_experiment(McDesign("C", 250), (0.05,), R=2000, seed=5, workers=WORKERS)
    qn, qlr = rep.rate("Q_n", 0.05), rep.rate("QLR_n", 0.05)
    ok = abs(qn - 0.0477) <= 0.02 and abs(qlr - 0.0387) <= 0.02
    record_criterion(
        5, ok, f"design C n=250 R=2000: Q_n {qn:.4f} (0.0477), QLR {qlr:.4f} (0.0387), {time.perf_counter() - t0:.0f}s"
    )
    assert ok


@pytest.mark.slow
def test_criterion_6_jump_power():
    t0 = time.perf_counter()
    rep = run_power_experiment(McDesign("B", 500), (0.05,), R=1000, delta_multipliers=(4.0,), seed=6, workers=WORKERS)
    qn, qlr = rep.rate("Q_n[x4]", 0.05), rep.rate("QLR_n[x4]", 0.05)
    ok = abs(qn - 0.4797) <= 0.05 and abs(qlr - 0.4128) <= 0.05 and qn >= qlr
    record_criterion(
        6, ok, f"design B n=500 R=1000: Q_n {qn:.4f} (0.4797), QLR {qlr:.4f} (0.4128), "
        f"Q_n >= QLR {qn >= qlr}, {time.perf_counter() - t0:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_7_coverage():
    t0 = time.perf_counter()
    boot = run_coverage_experiment(
        McDesign("D", 250), (0.95,), R=500, B_per_rep=399, grid_points=10, seed=7,
        methods=("bootstrap",), workers=WORKERS,
    )
    asym = run_coverage_experiment(McDesign("B", 500), (0.95,), R=500, seed=71, methods=("asymptotic",), workers=WORKERS)
    cb, ca = boot.rate("bootstrap", 0.95), asym.rate("asymptotic", 0.95)
    ok = abs(cb - 0.898) <= 0.05 and ca < 0.85
    record_criterion(
        7, ok, f"design D bootstrap {cb:.3f} (0.898), design B asymptotic {ca:.3f} (< 0.85), "
        f"{time.perf_counter() - t0:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8a_constrained_estimator_less_dispersed():
    gh, gt = run_estimator_dispersion(McDesign("C", 500), R=500, seed=8, workers=WORKERS)
    ok = _iqr(gt) < _iqr(gh)
    record_criterion(8, ok, f"(a) n=500 IQR(gamma_tilde) {_iqr(gt):.4f} < IQR(gamma_hat) {_iqr(gh):.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_8b_unconstrained_rate():
    gh_small, _ = run_estimator_dispersion(McDesign("C", 125), R=500, seed=81, workers=WORKERS)
    gh_large, _ = run_estimator_dispersion(McDesign("C", 1000), R=500, seed=82, workers=WORKERS)
    ratio = _iqr(gh_large) / _iqr(gh_small)
    ok = 0.4 <= ratio <= 0.6
    record_criterion(
        8, ok, f"(b) IQR(gamma_hat) n=1000 / n=125 = {_iqr(gh_large):.4f} / {_iqr(gh_small):.4f} = {ratio:.3f} "
        "(target [0.4, 0.6])",
    )
    assert ok


def _write_series(path, n=90, seed=9):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    x = rng.standard_normal(n)
    y = 1 + x + q + 1.5 * (q > 0.2) + rng.standard_normal(n)
    rows = [f"{float(a)!r},{float(b)!r},{float(c)!r}" for a, b, c in zip(y, x, q)]
    path.write_text("y,x,q\n" + "\n".join(rows) + "\n")
    return path


def test_criterion_9_determinism(tmp_path):
    data = str(_write_series(tmp_path / "d.csv"))
    common = ["--input", data, "--response", "y", "--regressors", "x", "--threshold-var", "q", "--seed", "9"]
    commands = {
        "estimate": ["estimate", *common],
        "continuity": ["test-continuity", *common, "--boot-reps", "49"],
        "ci": ["ci", *common, "--boot-reps", "49", "--quantile-points", "5", "--level", "0.9", "--level", "0.95"],
        "simulate": ["simulate", "--design", "C", "--n", "80", "--reps", "12", "--experiment", "continuity",
                     "--seed", "9"],
    }
    mismatched = []
    for name, args in commands.items():
        outputs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            for fmt in ("tsv", "json"):
                out = tmp_path / f"{name}.{tag}.{fmt}"
                assert run([*args, "--workers", workers, "--format", fmt, "--out", str(out)]) == 0
                files = [out.read_bytes()]
                plot = tmp_path / f"{name}.{tag}.{fmt}.plot.tsv"
                if plot.exists():
                    files.append(plot.read_bytes())
                outputs.append((fmt, files))
        by_fmt = {}
        for fmt, files in outputs:
            by_fmt.setdefault(fmt, []).append(files)
        if any(len({tuple(f) for f in runs}) != 1 for runs in by_fmt.values()):
            mismatched.append(name)
    ok = not mismatched
    record_criterion(9, ok, f"4 commands x 2 formats x (repeat, 2 workers) byte-identical; mismatched={mismatched}")
    assert ok


US_DATA = os.environ.get("THRESHREG_US_DATA")


@pytest.mark.skipif(not US_DATA, reason="set THRESHREG_US_DATA to a CSV with columns growth, debt")
def test_criterion_10_us_series(tmp_path):
    import json

    out = tmp_path / "us.json"
    code = run([
        "estimate", "--input", US_DATA, "--response", "growth", "--regressors", "L1.growth,L1.debt",
        "--threshold-var", "L1.debt", "--lag", "growth:1", "--lag", "debt:1", "--format", "json", "--out", str(out),
    ])
    est = json.loads(out.read_text())["estimation"]
    u, c = est["unconstrained"], est["constrained"]
    sizes = (u["regime_sizes"]["below"], u["regime_sizes"]["above"])
    ok = code == 0 and round(u["gamma_hat"], 1) == 17.2 and round(c["gamma_tilde"], 1) == 43.8 and sizes == (99, 109)
    record_criterion(10, ok, f"gamma_hat {u['gamma_hat']}, gamma_tilde {c['gamma_tilde']}, regimes {sizes}")
    assert ok
