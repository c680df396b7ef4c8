import numpy as np
import pytest

from hjsys.monotone import row_sums
from hjsys.problem import ControlSet, ProblemInstance, TorusGrid


def random_monotone(rng, m, zero_rows=0.3, sparsity=0.4):
    """Random matrix with nonpositive off-diagonal and nonnegative row sums."""
    B = -rng.uniform(0.0, 1.0, (m, m)) * (rng.uniform(size=(m, m)) > sparsity)
    np.fill_diagonal(B, 0.0)
    slack = rng.uniform(0.0, 1.0, m) * (rng.uniform(size=m) > zero_rows)
    np.fill_diagonal(B, -B.sum(axis=1) + slack)
    # nudge rows whose sum rounds below zero
    while np.any(row_sums(B) < 0):
        idx = np.flatnonzero(row_sums(B) < 0)
        B[idx, idx] = np.nextafter(B[idx, idx], np.inf)
    return B


def random_instance(seed, N=3, m=1, K=2, dim=1, varying_B=False):
    rng = np.random.default_rng(seed)
    grid = TorusGrid(dim, N)
    X = grid.size
    g = rng.uniform(-1.0, 1.0, (X, K, m, dim))
    L = rng.uniform(-1.0, 2.0, (X, K, m))
    if varying_B:
        B = np.stack([random_monotone(rng, m) for _ in range(X)])
    else:
        B = np.broadcast_to(random_monotone(rng, m), (X, m, m))
    return ProblemInstance(grid, ControlSet(tuple(range(K))), g, L, B, name=f"random{seed}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
