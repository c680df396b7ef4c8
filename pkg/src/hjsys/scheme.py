"""Monotone upwind discretisation of ``lam v + B v + H[v] = 0``.

For a state ``s = (x, i)`` and control ``xi`` the scheme row reads::

    d(s, xi) v(s) - sum_{s'} w(s, xi, s') v(s') - L_i(x, xi)

with ``d = lam + b_ii(x) + sum_d |g_d| / h``, weight ``|g_d| / h`` on the
neighbour ``x + sign(g_d) h e_d`` of mode ``i`` and weight ``-b_ij(x) >= 0``
on ``(x, j)``.  The discrete equation is ``max_xi row = 0``, equivalently
``v = T v`` with ``(T v)(s) = min_xi (sum w v' + L) / d``: the value of a
killed controlled Markov chain with transition weights ``w / d``.

States are flattened as ``s = x + X * i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .monotone import MonotonicityError
from .problem import ProblemInstance

__all__ = [
    "DiscreteOperator",
    "SubsolutionReport",
    "assemble",
    "build_operator",
    "neighbour_sum",
    "apply_rows",
    "bellman_apply",
    "scheme_residual",
    "equation_residual",
    "contraction_factor",
    "policy_system",
    "check_subsolution",
    "check_supersolution",
]


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    lam: float
    diag: np.ndarray      # (X, K, m)
    nbr: np.ndarray       # (X, K, m, dim) grid index of the upwind neighbour
    w_nbr: np.ndarray     # (X, K, m, dim)
    w_cpl: np.ndarray     # (X, m, m), -b_ij off the diagonal, 0 on it
    cost: np.ndarray      # (X, K, m)

    @property
    def shape(self):
        return self.cost.shape

    @property
    def n_states(self) -> int:
        X, _, m = self.cost.shape
        return X * m


def _values(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v), dtype=float)


def assemble(p: ProblemInstance, lam: float, cost=None) -> DiscreteOperator:
    """Operator for any ``lam >= 0``; ``lam = 0`` rows may have zero diagonal."""
    if lam < 0:
        raise ValueError(f"discount must be nonnegative, got {lam}")
    grid = p.grid
    X, K, m, dim = p.g.shape
    x = np.arange(X)
    nbr = np.empty((X, K, m, dim), dtype=np.int64)
    for d in range(dim):
        fwd = grid.neighbor(x, d, +1)
        bwd = grid.neighbor(x, d, -1)
        nbr[..., d] = np.where(p.g[..., d] > 0, fwd[:, None, None], bwd[:, None, None])
    w_nbr = np.abs(p.g) / grid.h
    bii = np.einsum("xii->xi", p.B)
    diag = lam + bii[:, None, :] + w_nbr.sum(axis=-1)
    w_cpl = -np.array(p.B, dtype=float)
    w_cpl[:, np.arange(m), np.arange(m)] = 0.0
    cost = p.L if cost is None else np.asarray(cost, dtype=float)
    if cost.shape != p.L.shape:
        raise ValueError(f"cost table has shape {cost.shape}, expected {p.L.shape}")
    return DiscreteOperator(float(lam), diag, nbr, w_nbr, w_cpl, np.array(cost, dtype=float))


def build_operator(p: ProblemInstance, lam: float) -> DiscreteOperator:
    if not lam > 0:
        raise ValueError(f"discount must be positive, got {lam}")
    from .problem import validate_problem

    report = validate_problem(p)
    if not report.monotone:
        raise MonotonicityError(f"coupling is not monotone: {report.witness}")
    return assemble(p, lam)


def neighbour_sum(op: DiscreteOperator, v: np.ndarray) -> np.ndarray:
    """``sum_{s'} w(s, xi, s') v(s')``, shape (X, K, m)."""
    m = v.shape[1]
    modes = np.arange(m)[None, None, :, None]
    spatial = (op.w_nbr * v[op.nbr, modes]).sum(axis=-1)
    coupling = np.einsum("xij,xj->xi", op.w_cpl, v)
    return spatial + coupling[:, None, :]


def apply_rows(op: DiscreteOperator, v) -> np.ndarray:
    """Linear part of every row: ``(B^lam v)_i - [g_i . D_h v_i]_upwind``."""
    v = _values(v)
    return op.diag * v[:, None, :] - neighbour_sum(op, v)


def bellman_apply(op: DiscreteOperator, v):
    """One application of T; returns ``(T v, argmin policy)``."""
    v = _values(v)
    ratio = (neighbour_sum(op, v) + op.cost) / op.diag
    policy = np.argmin(ratio, axis=1)
    return np.take_along_axis(ratio, policy[:, None, :], axis=1)[:, 0, :], policy


def scheme_residual(op: DiscreteOperator, v, phi=None) -> np.ndarray:
    """Row residuals ``apply_rows(v) - phi`` for every (x, xi, i)."""
    phi = op.cost if phi is None else np.asarray(phi, dtype=float)
    return apply_rows(op, v) - phi


def equation_residual(op: DiscreteOperator, v, c=None) -> np.ndarray:
    """``lam v + B v + H_h[v] - c`` per state, shape (X, m)."""
    res = scheme_residual(op, v).max(axis=1)
    if c is not None:
        res = res - np.asarray(c, dtype=float)
    return res


def contraction_factor(op: DiscreteOperator) -> float:
    """``max (sum w) / d`` over states and controls: the sup-norm Lipschitz constant of T."""
    total = op.w_nbr.sum(axis=-1) + op.w_cpl.sum(axis=2)[:, None, :]
    return float((total / op.diag).max())


def policy_system(op: DiscreteOperator, policy):
    """Sparse matrix and right-hand side of the frozen-policy equations.

    Row ``s = x + X i`` is ``d v(s) - sum w v(s') = L_i(x, policy(s))``.
    """
    X, K, m = op.cost.shape
    policy = np.asarray(policy)
    pol = policy[:, None, :]
    d = np.take_along_axis(op.diag, pol, axis=1)[:, 0, :]
    rhs = np.take_along_axis(op.cost, pol, axis=1)[:, 0, :]
    nbr = np.take_along_axis(op.nbr, pol[..., None], axis=1)[:, 0]      # (X, m, dim)
    wn = np.take_along_axis(op.w_nbr, pol[..., None], axis=1)[:, 0]
    xs = np.arange(X)[:, None]
    modes = np.arange(m)[None, :]
    state = xs + X * modes
    rows = [state.ravel()]
    cols = [state.ravel()]
    vals = [d.ravel()]
    for k in range(nbr.shape[-1]):
        rows.append(state.ravel())
        cols.append((nbr[..., k] + X * modes).ravel())
        vals.append(-wn[..., k].ravel())
    for j in range(m):
        rows.append(state.ravel())
        cols.append(np.broadcast_to(xs + X * j, (X, m)).ravel())
        vals.append(-op.w_cpl[:, :, j].ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(X * m, X * m)).tocsr()
    A.eliminate_zeros()
    return A, rhs.ravel(order="F")


@dataclass(frozen=True)
class SubsolutionReport:
    max_residual: float
    worst: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def __bool__(self):
        return self.passed


def check_subsolution(p: ProblemInstance, lam: float, phi, u, tol: float = 1e-8) -> SubsolutionReport:
    """Grid test of ``(B^lam u)_i <= g_i . D_h u_i + phi_i`` for all (x, xi, i)."""
    op = assemble(p, lam, cost=phi)
    u = _values(u)
    if u.shape != (p.grid.size, p.m):
        raise ValueError(f"value shape {u.shape} does not match ({p.grid.size}, {p.m})")
    res = scheme_residual(op, u)
    worst = np.unravel_index(np.argmax(res), res.shape)
    return SubsolutionReport(float(res[worst]), tuple(int(j) for j in worst), tol)


def check_supersolution(p: ProblemInstance, lam: float, phi, w, tol: float = 1e-8) -> SubsolutionReport:
    """Mirror test: at every state some control has residual ``>= -tol``.

    The reported ``max_residual`` is ``-min_s max_xi residual`` so that, as for
    subsolutions, the check passes iff it is ``<= tol``.
    """
    op = assemble(p, lam, cost=phi)
    res = scheme_residual(op, _values(w)).max(axis=1)
    worst = np.unravel_index(np.argmin(res), res.shape)
    return SubsolutionReport(float(-res[worst]), tuple(int(j) for j in worst), tol)
