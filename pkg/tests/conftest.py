from __future__ import annotations

import numpy as np
import pytest

from threshreg.model import Dataset


def make_dataset(rng: np.random.Generator, n: int = 60, k: int = 2, jump: float = 1.0, gamma: float = 0.0) -> Dataset:
    """Random jump-model sample with ``k`` columns (intercept, k-2 extras, q)."""
    q = rng.standard_normal(n)
    Z = rng.standard_normal((n, k - 2)) if k > 2 else None
    X_extra = Z.sum(axis=1) if Z is not None else 0.0
    y = 1.0 + 0.5 * q + X_extra + jump * (q > gamma) + rng.standard_normal(n)
    return Dataset.from_columns(y, q, Z)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def jump_data(rng) -> Dataset:
    return make_dataset(rng, n=120, jump=2.0, gamma=0.3)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Log one acceptance line; shown in the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
