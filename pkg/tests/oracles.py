"""Independent reference implementations used as test oracles.

Each oracle recomputes a quantity from its definition with plain numpy
(normal equations or ``lstsq``) and shares no code with the package beyond
the dataset container.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def brute_lse(y, X, q, grid):
    """Unconstrained fit by separate OLS at every candidate; ties toward smallest gamma."""
    best = None
    ssrs = []
    for g in grid:
        ind = (q > g).astype(float)
        Z = np.hstack([X, X * ind[:, None]])
        coef = np.linalg.solve(Z.T @ Z, Z.T @ y)
        ssr = float(np.mean((y - Z @ coef) ** 2))
        ssrs.append(ssr)
        if best is None or ssr < best[0]:
            best = (ssr, g, coef)
    return best[1], best[2], best[0], np.array(ssrs)


def brute_clse(y, X, q, grid):
    best = None
    for g in grid:
        Z = np.column_stack([X, np.where(q > g, q - g, 0.0)])
        coef = np.linalg.solve(Z.T @ Z, Z.T @ y)
        ssr = float(np.mean((y - Z @ coef) ** 2))
        if best is None or ssr < best[0]:
            best = (ssr, g, coef)
    return best[1], best[2], best[0]


def limit_quantile_oracle(s):
    """Root of ``(1 - exp(-z/2))^2 = s`` by bracketing, independent of the closed form."""
    return brentq(lambda z: (1.0 - np.exp(-z / 2.0)) ** 2 - s, 1e-9, 200.0, xtol=1e-14, rtol=1e-15)


def epanechnikov_kappa2_closed_form():
    # int_{-1}^{1} u^2 * 0.75 (1 - u^2) du = 0.75 * (2/3 - 2/5)
    return 0.75 * (2.0 / 3.0 - 2.0 / 5.0)
