"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (the lines are also
collected in the terminal summary), or ``python3 tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
import pytest

from hjsys.ergodic import default_schedule, lambda_sweep, solve_ergodic
from hjsys.measures import (
    adjoint_residual,
    brute_force_oracle,
    green_poisson,
    mather_limit,
    normalization,
    pairing,
    policy_occupancies,
)
from hjsys.measures import test_vectors as make_test_vectors
from hjsys.monotone import is_monotone, normal_form
from hjsys.problem import builtin_problem
from hjsys.scheme import assemble, bellman_apply, build_operator, contraction_factor, equation_residual
from hjsys.solver import comparison_test, solve_discounted

from conftest import random_instance, random_monotone

LAMBDAS = (1.0, 0.1, 0.01)

BUILTIN_CASES = [
    ("eikonal1d", {"N": 200}),
    ("eikonal1d", {"N": 200, "K": 16, "normalize": True}),
    ("switch2", {"N": 200}),
    ("switch2", {"N": 200, "K": 5, "costs": "equal", "shift": [0.5, -0.5]}),
    ("constcost", {}),
    ("constcost", {"ell": [1.0, 2.0, -1.0], "B": [[1, -1, 0], [0, 2, -1], [-1, 0, 1]],
                   "K": 3, "N": 50}),
    ("decoupled_diag", {"N": 200}),
    ("decoupled_diag", {"N": 200, "K": 16, "b": [2.0, 0.0]}),
]


def anchors(p, n=5):
    X = p.grid.size
    return [((j * X) // n, j % p.m) for j in range(n)]


@pytest.fixture(scope="module")
def builtin_measures():
    """Solve every builtin case at every discount and compute 5 anchored measures each."""
    start = time.perf_counter()
    out = []
    for name, params in BUILTIN_CASES:
        p = builtin_problem(name, params)
        psis = make_test_vectors(p, n_random=100, seed=42)
        for lam in LAMBDAS:
            sol = solve_discounted(p, lam)
            for z, k in anchors(p):
                nu = green_poisson(p, lam, z, k, solution=sol)
                out.append(dict(name=name, p=p, lam=lam, sol=sol, nu=nu, psis=psis))
    return out, time.perf_counter() - start


def test_c01_duality(builtin_measures, criterion):
    runs, elapsed = builtin_measures
    gap = max(abs(r["sol"].values[r["nu"].anchor] - pairing(r["nu"], r["p"].L)) for r in runs)
    ok = gap <= 1e-8 and elapsed < 30
    criterion(1, "duality |v_k(z) - <nu,L>|", ok,
              f"{len(runs)} measures, max gap {gap:.2e} (tol 1e-8), {elapsed:.1f}s (limit 30s)")
    assert ok


def test_c02_adjoint(builtin_measures, criterion):
    runs, _ = builtin_measures
    worst = max(adjoint_residual(r["p"], r["nu"], r["psis"]) for r in runs)
    ok = worst <= 1e-8 and all(len(r["psis"]) == 101 for r in runs)
    criterion(2, "adjoint characterisation", ok,
              f"psi = 1 plus 100 seeded random, max residual {worst:.2e} (tol 1e-8)")
    assert ok


def test_c03_normalization(builtin_measures, criterion):
    runs, _ = builtin_measures
    norm = max(abs(normalization(r["p"], r["nu"]) - 1) for r in runs)
    flat = [r for r in runs if np.all(r["p"].row_sums == 0)]
    mass = max(abs(r["lam"] * r["nu"].weights.sum() - 1) for r in flat)
    ok = norm <= 1e-10 and mass <= 1e-10 and len(flat) > 0
    criterion(3, "normalization <nu, B^lam 1> = 1", ok,
              f"max error {norm:.2e}; lam*nu mass error on {len(flat)} rho=0 measures "
              f"{mass:.2e} (tol 1e-10)")
    assert ok


TINY = [
    # (N, m, K, dim, varying B)
    (3, 1, 2, 1, False), (3, 1, 3, 1, False), (2, 2, 2, 1, False), (2, 2, 2, 1, True),
    (3, 2, 2, 1, False), (3, 2, 2, 1, True), (4, 2, 2, 1, True), (2, 3, 2, 1, True),
    (3, 3, 2, 1, False), (4, 3, 2, 1, True), (6, 2, 2, 1, False), (6, 2, 2, 1, True),
    (2, 2, 3, 1, True), (3, 2, 3, 1, False), (4, 1, 4, 1, False), (2, 1, 2, 2, False),
    (2, 2, 2, 2, True), (2, 3, 2, 2, False), (12, 1, 2, 1, False), (4, 3, 2, 1, False),
    (3, 1, 6, 1, False), (2, 2, 4, 1, True),
]


def _min_other_pairing(p, lam, z, k, K, batch=4096):
    S = p.n_states
    X = p.grid.size
    shape = (K,) * S
    best = np.inf
    all_pol = itertools.product(range(K), repeat=S)
    while True:
        chunk = list(itertools.islice(all_pol, batch))
        if not chunk:
            return best
        pol = np.array(chunk)
        occ = policy_occupancies(p, lam, z, k, pol)
        cost = p.L[np.arange(S) % X, pol, np.arange(S) // X]          # (n, S)
        best = min(best, float((occ * cost).sum(axis=1).min()))


def test_c04_oracle(criterion):
    start = time.perf_counter()
    worst_v = worst_nu = 0.0
    margin = np.inf
    for seed, (N, m, K, dim, varying) in enumerate(TINY):
        p = random_instance(1000 + seed, N=N, m=m, K=K, dim=dim, varying_B=varying)
        lam = [1.0, 0.3, 0.05][seed % 3]
        z, k = seed % p.grid.size, seed % m
        assert p.n_states <= 12 and K ** p.n_states <= 10**6
        orc = brute_force_oracle(p, lam, z, k)
        sol = solve_discounted(p, lam)
        nu = green_poisson(p, lam, z, k, solution=sol)
        worst_v = max(worst_v, float(np.abs(orc.v_exact - sol.values).max()))
        worst_nu = max(worst_nu, float(np.abs(orc.nu_exact.weights - nu.weights).max()))
        margin = min(margin, _min_other_pairing(p, lam, z, k, K) - pairing(nu, p.L))
    elapsed = time.perf_counter() - start
    ok = worst_v <= 1e-9 and worst_nu <= 1e-9 and margin >= -1e-9 and elapsed < 60
    criterion(4, "oracle equivalence", ok,
              f"{len(TINY)} instances, value err {worst_v:.1e}, measure err {worst_nu:.1e}, "
              f"min_other <nu,L> - <nu_opt,L> = {margin:.1e} (tol 1e-9), {elapsed:.1f}s (limit 60s)")
    assert ok


def test_c05_monotone_and_comparison(builtin_measures, criterion):
    runs, _ = builtin_measures
    rng = np.random.default_rng(5)
    violations = 0
    comparisons = []
    kappas = []
    seen = set()
    for r in runs:
        key = (id(r["p"]), r["lam"])
        if key in seen:
            continue
        seen.add(key)
        p, lam, v = r["p"], r["lam"], r["sol"].values
        op = build_operator(p, lam)
        kappas.append(contraction_factor(op))
        if lam == 0.1:
            shape = v.shape
            for _ in range(1000):
                a = v + rng.uniform(-3, 3, shape)
                b = a + rng.uniform(0, 2, shape) * (rng.uniform(size=shape) < 0.5)
                violations += int(np.any(bellman_apply(op, a)[0] > bellman_apply(op, b)[0] + 1e-12))
        C = float(rng.uniform(0.1, 2.0))
        comparisons.append(comparison_test(p, lam, v - C, v + C).status)
    ok = violations == 0 and all(s == "holds" for s in comparisons) and max(kappas) < 1
    criterion(5, "monotone scheme and comparison", ok,
              f"{violations} order violations in {1000 * len(BUILTIN_CASES)} pairs, "
              f"{comparisons.count('holds')}/{len(comparisons)} comparisons hold, "
              f"max kappa {max(kappas):.6f}")
    assert ok


@pytest.fixture(scope="module")
def normalized_eikonal():
    # three controls (xi = -1, 0, 1) so the normalized discrete system has a solution
    return builtin_problem("eikonal1d", {"N": 200, "K": 3, "normalize": True})


def test_c06_vanishing_discount(normalized_eikonal, criterion):
    p = normalized_eikonal
    start = time.perf_counter()
    rec = lambda_sweep(p, default_schedule())
    elapsed = time.perf_counter() - start
    d = rec.distances
    after_first = all(b <= a for a, b in zip(d[1:], d[2:]))
    limit_scale = 1e-6 * (1 + np.abs(rec.limit.values).max())
    final = rec.entries[-1]
    raw = float(np.abs(equation_residual(assemble(p, 0.0), final.values)).max())
    ok = after_first and d[-1] <= 1e-3 and rec.limit_residual <= limit_scale and elapsed < 60
    criterion(6, "vanishing discount sweep", ok,
              f"distances {d[0]:.2e}..{d[-1]:.2e} nonincreasing after j=1: {after_first}, "
              f"final {d[-1]:.2e} (tol 1e-3), (P0) residual of limit {rec.limit_residual:.1e} "
              f"(tol {limit_scale:.1e}; raw lam_final iterate {raw:.1e}), {elapsed:.1f}s")
    assert ok


def test_c07_mather(normalized_eikonal, criterion):
    sched = default_schedule()
    res = mather_limit(normalized_eikonal, sched, 0, 0)
    cost = res.cost_pairings
    decreasing = all(abs(b) < abs(a) for a, b in zip(cost, cost[1:]))
    bound = max(1e-6, 10 * sched[-1])
    ok = abs(cost[-1]) <= 1e-2 and decreasing and res.adjoint_residual <= bound
    criterion(7, "Mather measure", ok,
              f"<mu0,L> = {cost[-1]:.2e} at lam {sched[-1]:.2e} (tol 1e-2), decreasing: {decreasing}, "
              f"adjoint residual {res.adjoint_residual:.1e} (tol {bound:.1e}), mass {res.measure.mass:.12f}")
    assert ok


def test_c08_ergodic_constant(criterion):
    errs = {}
    for N in (100, 200, 400):
        sol = solve_ergodic(builtin_problem("eikonal1d", {"N": N}))
        errs[N] = abs(sol.c[0] + 1.0)
    trend = errs[100] > errs[200] > errs[400]
    rates = [np.log2(errs[100] / errs[200]), np.log2(errs[200] / errs[400])]
    ok = errs[200] <= 0.05 and trend
    criterion(8, "ergodic constant of the eikonal problem", ok,
              f"|c+1| = {errs[100]:.2e}, {errs[200]:.2e}, {errs[400]:.2e} for N = 100, 200, 400 "
              f"(tol 0.05 at N=200), observed rates {rates[0]:.2f}, {rates[1]:.2f}")
    assert ok


def _closure_connected(A):
    m = A.shape[0]
    reach = (A != 0) | np.eye(m, dtype=bool)
    for k in range(m):
        reach = reach | (reach[:, [k]] & reach[[k], :])
    return bool(reach.all())


def _definitional_violation(B, rng, trials=10_000):
    m = B.shape[0]
    U = rng.uniform(-1.0, 1.0, (trials, m)) * rng.choice([1.0, 100.0], size=(trials, 1))
    k = rng.integers(0, m, trials)
    U[np.arange(trials), k] = np.abs(U).max(axis=1)
    BU = U @ B.T
    return bool(np.any(BU[np.arange(trials), k] < -1e-12 * np.abs(U).max()))


def test_c09_normal_form(criterion):
    rng = np.random.default_rng(9)
    start = time.perf_counter()
    failures = []
    for t in range(1000):
        m = int(rng.integers(1, 7))
        B = random_monotone(rng, m, sparsity=float(rng.uniform(0.1, 0.95)))
        nf = normal_form(B)
        A = nf.matrix
        P = nf.perm.matrix
        if not np.array_equal(A, P @ B @ P.T):
            failures.append((t, "conjugation"))
        for s, r, kind in zip(nf.offsets, nf.block_sizes, nf.kinds):
            if np.any(A[s:s + r, s + r:] != 0):
                failures.append((t, "upper block"))
            if s > 0 and not _closure_connected(A[s:s + r, s:s + r]):
                failures.append((t, "connectivity"))
        if nf.kinds[0] == "diagonal":
            r1 = nf.block_sizes[0]
            blk = A[:r1, :r1]
            if np.any(blk != np.diag(np.diag(blk))):
                failures.append((t, "leading block"))
        if not is_monotone(A):
            failures.append((t, "monotone"))
        if _definitional_violation(B, rng):
            failures.append((t, "definition"))
        # a general matrix: definitional violations only where the test says no
        G = rng.uniform(-1, 1, (m, m))
        if _definitional_violation(G, rng, 2000) and is_monotone(G):
            failures.append((t, "definition general"))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 10
    criterion(9, "normal form", ok,
              f"1000 matrices m <= 6, {len(failures)} failures {failures[:3]}, {elapsed:.1f}s (limit 10s)")
    assert ok


def test_c10_order_property(criterion):
    # dyadic entries keep every product and sum exact in binary floating point,
    # so the inequalities are checked with no tolerance at all
    rng = np.random.default_rng(10)
    bad = 0
    for _ in range(10_000):
        m = int(rng.integers(1, 7))
        off = -rng.integers(0, 17, (m, m)) / 8.0
        np.fill_diagonal(off, 0.0)
        B = off.copy()
        np.fill_diagonal(B, -off.sum(axis=1) + rng.integers(0, 17, m) / 8.0)
        assert is_monotone(B)
        u = rng.integers(-4096, 4097, m) / 8.0
        C = rng.integers(0, 4097) / 8.0
        one = np.ones(m)
        lo, mid, hi = B @ (u - C * one), B @ u, B @ (u + C * one)
        bad += int(not (np.all(lo <= mid) and np.all(mid <= hi)))
    ok = bad == 0
    criterion(10, "order property B(u-C1) <= Bu <= B(u+C1)", ok,
              f"{bad} violations in 10000 exact dyadic triples")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
