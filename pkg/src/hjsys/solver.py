"""Discounted solves: value iteration (Gauss-Seidel or Jacobi) and policy iteration."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse.linalg as spla

from .problem import ProblemInstance, TorusGrid
from .scheme import (
    DiscreteOperator,
    bellman_apply,
    build_operator,
    check_subsolution,
    check_supersolution,
    contraction_factor,
    neighbour_sum,
    policy_system,
)

__all__ = [
    "ConvergenceError",
    "ValueFunction",
    "solve_discounted",
    "solve_policy",
    "ComparisonOutcome",
    "comparison_test",
    "Diagnostics",
    "diagnostics",
]

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 50_000


class ConvergenceError(RuntimeError):
    def __init__(self, message, kappa=None, residual=None):
        super().__init__(message)
        self.kappa = kappa
        self.residual = residual


@dataclass
class ValueFunction:
    """Values ``v[x, i]`` with the minimizing control attached."""

    values: np.ndarray
    policy: np.ndarray
    lam: float
    grid: TorusGrid
    residual: float = np.nan
    iterations: int = 0
    kappa: float = np.nan
    method: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")


def solve_policy(op: DiscreteOperator, policy, x0=None) -> np.ndarray:
    """Values of the frozen policy, shape (X, m)."""
    A, rhs = policy_system(op, policy)
    X, _, m = op.shape
    if A.shape[0] <= DIRECT_SOLVE_LIMIT:
        v = spla.spsolve(A.tocsc(), rhs)
    else:
        v, info = spla.bicgstab(A, rhs, x0=None if x0 is None else x0.ravel(order="F"),
                                rtol=1e-12, atol=0.0, maxiter=10_000)
        if info != 0:
            raise ConvergenceError(f"frozen-policy iterative solve failed (info={info})")
    return np.asarray(v).reshape((X, m), order="F")


def _sweep_orders(grid: TorusGrid):
    idx = np.arange(grid.size)
    if grid.dim == 1:
        return [idx, idx[::-1]]
    ij = idx.reshape(grid.n, grid.n)   # [iy, ix]
    return [ij[::sy, ::sx].ravel() for sy, sx in itertools.product((1, -1), (1, -1))]


def _gauss_seidel_sweep(op: DiscreteOperator, v: np.ndarray, order) -> None:
    m = v.shape[1]
    diag, nbr, wn, wc, cost = op.diag, op.nbr, op.w_nbr, op.w_cpl, op.cost
    for x in order:
        for i in range(m):
            spatial = (wn[x, :, i, :] * v[nbr[x, :, i, :], i]).sum(axis=-1)
            coupling = wc[x, i] @ v[x]
            v[x, i] = ((spatial + coupling + cost[x, :, i]) / diag[x, :, i]).min()


def _residual(op, v):
    Tv, policy = bellman_apply(op, v)
    return float(np.abs(Tv - v).max()), policy


def _scaled(tol, v):
    return tol * max(1.0, float(np.abs(v).max()))


def _policy_iteration(op, v, policy, tol, max_policy_iter, history):
    for it in range(1, max_policy_iter + 1):
        v = solve_policy(op, policy, v)
        ratio = (neighbour_sum(op, v) + op.cost) / op.diag
        best = ratio.min(axis=1)
        current = np.take_along_axis(ratio, policy[:, None, :], axis=1)[:, 0, :]
        # switch only on strict improvement so ties cannot cycle
        slack = 1e-13 * (1.0 + np.abs(v))
        improve = current > best + slack
        res = float(np.abs(best - v).max())
        history.append(("policy", it, res))
        if not improve.any():
            return v, policy, it, res
        policy = np.where(improve, np.argmin(ratio, axis=1), policy)
    raise ConvergenceError(f"policy iteration did not stabilise in {max_policy_iter} steps",
                           kappa=contraction_factor(op), residual=res)


def solve_discounted(
    p: ProblemInstance,
    lam: float,
    tol: float = 1e-10,
    max_iter: int | None = None,
    method: str = "gauss_seidel",
    accelerate: bool = True,
    v0=None,
    op: DiscreteOperator | None = None,
) -> ValueFunction:
    """Solve the discrete discounted system to sup-norm residual ``tol``.

    ``method`` selects the value-iteration flavour ("gauss_seidel" with
    alternating sweep orders, or "jacobi").  With ``accelerate`` a few sweeps
    warm-start policy iteration, which then runs to a stable policy (at most
    ``max_iter`` policy steps, default 100).  Without it value iteration runs
    for up to ``max_iter`` sweeps (default 10**6).  The residual test is
    relative to ``max(1, |v|_inf)``.
    """
    if not lam > 0:
        raise ValueError(f"discount must be positive, got {lam}")
    if method not in ("gauss_seidel", "jacobi"):
        raise ValueError(f"unknown method {method!r}")
    op = build_operator(p, lam) if op is None else op
    kappa = contraction_factor(op)
    X, m = p.grid.size, p.m
    v = np.zeros((X, m)) if v0 is None else np.array(getattr(v0, "values", v0), dtype=float)
    history = []
    orders = _sweep_orders(p.grid)

    def sweep(k):
        nonlocal v
        if method == "jacobi":
            v, _ = bellman_apply(op, v)
        else:
            _gauss_seidel_sweep(op, v, orders[k % len(orders)])

    if accelerate:
        for k in range(4):
            sweep(k)
        _, policy = bellman_apply(op, v)
        if v0 is not None and hasattr(v0, "policy"):
            policy = np.asarray(v0.policy).copy()
        v, policy, its, _ = _policy_iteration(op, v, policy, tol, max_iter or 100, history)
        res, _ = _residual(op, v)
        name = f"{method}+policy"
    else:
        limit = max_iter or 10**6
        res = np.inf
        its = 0
        for its in range(1, limit + 1):
            sweep(its - 1)
            res, _ = _residual(op, v)
            if res <= _scaled(tol, v):
                break
        name = method
    _, policy = bellman_apply(op, v)
    if not res <= _scaled(tol, v):
        raise ConvergenceError(f"no convergence at lam={lam}: residual {res:.3e} "
                               f"(contraction estimate {kappa:.6f})", kappa=kappa, residual=res)
    log.debug("lam=%g solved by %s in %d steps, residual %.2e, kappa %.6f",
              lam, name, its, res, kappa)
    return ValueFunction(v, policy, float(lam), p.grid, res, its, kappa, name, history)


# --------------------------------------------------------------------------
# comparison and diagnostics


@dataclass(frozen=True)
class ComparisonOutcome:
    status: str             # "holds", "violated" or "not_applicable"
    sub_residual: float
    super_residual: float
    max_excess: float

    @property
    def holds(self) -> bool:
        return self.status == "holds"


def comparison_test(p: ProblemInstance, lam: float, u_sub, w_super, tol: float = 1e-8,
                    ) -> ComparisonOutcome:
    """Check ``u_sub <= w_super + tol`` after certifying sub/super status."""
    sub = check_subsolution(p, lam, p.L, u_sub, tol)
    sup = check_supersolution(p, lam, p.L, w_super, tol)
    u = np.asarray(getattr(u_sub, "values", u_sub))
    w = np.asarray(getattr(w_super, "values", w_super))
    excess = float((u - w).max())
    if not (sub.passed and sup.passed):
        status = "not_applicable"
    else:
        status = "holds" if excess <= tol else "violated"
    return ComparisonOutcome(status, sub.max_residual, sup.max_residual, excess)


class Diagnostics(NamedTuple):
    sup_bound: float
    lipschitz: np.ndarray


def diagnostics(v, grid: TorusGrid | None = None) -> Diagnostics:
    """Sup norm and per-mode discrete Lipschitz constant over neighbour pairs."""
    grid = getattr(v, "grid", grid)
    vals = np.asarray(getattr(v, "values", v), dtype=float)
    x = np.arange(grid.size)
    lip = np.zeros(vals.shape[1])
    for d in range(grid.dim):
        diff = np.abs(vals[grid.neighbor(x, d, 1)] - vals) / grid.h
        lip = np.maximum(lip, diff.max(axis=0))
    return Diagnostics(float(np.abs(vals).max()), lip)
