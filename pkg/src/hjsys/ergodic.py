"""Vanishing-discount sweeps and the ergodic problem ``B v + H[v] = c``.

The ergodic solver works on a constant monotone B.  The modes are permuted
into block lower triangular normal form and solved block by block: each
block sees the values of the blocks it depends on through a shift of its
running cost, ``L_i - sum_q b_iq v_q`` (a nonnegative multiple of ``v_q``,
since ``b_iq <= 0``).

Limits as ``lam -> 0`` are taken on the frozen policy of the smallest
discount.  For that policy ``lam v^lam`` tends to ``Pi L_pi`` (``Pi`` the
projector onto the kernel of the undiscounted policy matrix ``A`` along its
range), and the limit of ``v^lam`` solves ``A v = L_pi - Pi L_pi``.  Both are
computed exactly, so the returned pairs satisfy the undiscounted scheme to
rounding whenever the frozen policy is optimal there; otherwise a few
average-cost policy improvement steps follow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .measures import green_poisson
from .monotone import MonotonicityError, normal_form
from .problem import ProblemInstance
from .scheme import assemble, equation_residual, policy_system, scheme_residual
from .solver import ConvergenceError, ValueFunction, diagnostics, solve_discounted

__all__ = [
    "ErgodicError",
    "default_schedule",
    "LimitEstimate",
    "vanishing_limit",
    "SweepEntry",
    "SweepRecord",
    "lambda_sweep",
    "BlockSolution",
    "extrapolate",
    "ergodic_constant_scalar",
    "ergodic_constant_block",
    "ErgodicSolution",
    "solve_ergodic",
]

log = logging.getLogger(__name__)


class ErgodicError(RuntimeError):
    pass


def default_schedule(n: int = 8, start: float = 0.1) -> list:
    """``lam_j = start * 2**-j`` for ``j = 0..n-1``."""
    return [start * 2.0**-j for j in range(n)]


def _check_schedule(schedule):
    lams = [float(s) for s in schedule]
    if len(lams) < 4:
        raise ValueError(f"schedule needs at least 4 values, got {len(lams)}")
    if any(b >= a for a, b in zip(lams, lams[1:])) or lams[-1] <= 0:
        raise ValueError("schedule must be strictly decreasing and positive")
    return lams


# --------------------------------------------------------------------------
# exact limit of a frozen policy


@dataclass
class LimitEstimate:
    values: np.ndarray      # (X, m)
    gain: np.ndarray        # (X, m), limit of lam v^lam
    policy: np.ndarray
    residual: float         # max |undiscounted residual + gain|
    improvements: int = 0


def _projector(A):
    R = sla.null_space(A, rcond=1e-10)
    if R.shape[1] == 0:
        return None
    Q = sla.null_space(A.T, rcond=1e-10)
    return R @ np.linalg.solve(Q.T @ R, Q.T)


def _frozen_limit(op0, policy, v_start, lam):
    A, rhs = policy_system(op0, policy)
    A = A.toarray()
    X, _, m = op0.shape
    v = v_start.ravel(order="F")
    Pi = _projector(A)
    if Pi is None:
        gain = np.zeros_like(rhs)
        limit = np.linalg.solve(A, rhs)
    elif lam > 0:
        gain = Pi @ rhs
        # (lam + A) v_lam = L, so the correction solves A d = lam v_lam - gain
        limit = v + np.linalg.lstsq(A, lam * v - gain, rcond=None)[0]
    else:
        gain = Pi @ rhs
        limit = np.linalg.lstsq(A, rhs - gain, rcond=None)[0]
    shape = (X, m)
    return limit.reshape(shape, order="F"), gain.reshape(shape, order="F")


def vanishing_limit(p: ProblemInstance, sol: ValueFunction, tol: float = 1e-9,
                    max_improve: int = 50) -> LimitEstimate:
    """Exact undiscounted limit along the frozen policy of ``sol``."""
    op0 = assemble(p, 0.0)
    policy = np.array(sol.policy, copy=True)
    v, gain = _frozen_limit(op0, policy, sol.values, sol.lam)
    for step in range(max_improve + 1):
        rows = scheme_residual(op0, v) + gain[:, None, :]
        best = rows.max(axis=1)
        current = np.take_along_axis(rows, policy[:, None, :], axis=1)[:, 0, :]
        scale = tol * (1.0 + np.abs(v).max())
        improve = best > current + scale
        if not improve.any() or step == max_improve:
            break
        policy = np.where(improve, np.argmax(rows, axis=1), policy)
        v, gain = _frozen_limit(op0, policy, v, 0.0)
    residual = float(np.abs(equation_residual(op0, v, -gain)).max())
    return LimitEstimate(v, gain, policy, residual, step)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepEntry:
    lam: float
    values: np.ndarray | None
    sup_bound: float = np.nan
    lipschitz: np.ndarray | None = None
    lam_v: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    normalization_errors: list = field(default_factory=list)
    residual: float = np.nan
    error: str | None = None


@dataclass
class SweepRecord:
    entries: list
    anchors: list
    distances: list
    limit: LimitEstimate | None
    limit_residual: float
    e_consistent: bool
    bounded: bool
    cauchy_decreasing: bool
    suggestion: str | None = None

    @property
    def lams(self) -> list:
        return [e.lam for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "anchors": [list(a) for a in self.anchors],
            "table": [
                {
                    "lam": e.lam,
                    "sup_bound": e.sup_bound,
                    "lipschitz": None if e.lipschitz is None else e.lipschitz.tolist(),
                    "lam_v": e.lam_v,
                    "gaps": e.gaps,
                    "normalization_errors": e.normalization_errors,
                    "residual": e.residual,
                    "error": e.error,
                }
                for e in self.entries
            ],
            "distances": self.distances,
            "limit_residual": self.limit_residual,
            "gain_max_abs": None if self.limit is None else float(np.abs(self.limit.gain).max()),
            "e_consistent": self.e_consistent,
            "bounded": self.bounded,
            "cauchy_decreasing": self.cauchy_decreasing,
            "suggestion": self.suggestion,
        }


def lambda_sweep(p: ProblemInstance, schedule=None, anchors=None, tol: float = 1e-10,
                 measures: bool = True) -> SweepRecord:
    """Solve along a decreasing discount schedule with warm starts.

    ``anchors`` are ``(z, k)`` pairs (default: grid point 0 in every mode).
    With ``measures`` the Green-Poisson duality gap is recorded per anchor.
    The limit residual is measured against the undiscounted scheme with the
    exact frozen-policy limit.
    """
    lams = _check_schedule(default_schedule() if schedule is None else schedule)
    anchors = [(0, i) for i in range(p.m)] if anchors is None else [tuple(a) for a in anchors]
    entries, prev = [], None
    last_ok = None
    for lam in lams:
        try:
            sol = solve_discounted(p, lam, tol=tol, v0=prev)
        except ConvergenceError as exc:
            entries.append(SweepEntry(lam, None, error=str(exc)))
            continue
        prev = last_ok = sol
        diag = diagnostics(sol)
        entry = SweepEntry(lam, sol.values.copy(), diag.sup_bound, diag.lipschitz,
                           [float(lam * sol.values[z, k]) for z, k in anchors],
                           residual=sol.residual)
        if measures:
            for z, k in anchors:
                nu = green_poisson(p, lam, z, k, solution=sol)
                entry.gaps.append(nu.gap)
                entry.normalization_errors.append(nu.meta["normalization_error"])
        entries.append(entry)

    ok = [e for e in entries if e.values is not None]
    distances = [float(np.abs(a.values - b.values).max()) for a, b in zip(ok, ok[1:])]
    cauchy = all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(distances[1:], distances[2:]))
    limit = vanishing_limit(p, last_ok) if last_ok is not None else None
    if limit is None:
        return SweepRecord(entries, anchors, distances, None, np.inf, False, False, False,
                           "no discount in the schedule could be solved")
    limit_res = float(np.abs(equation_residual(assemble(p, 0.0), limit.values)).max())
    sups = [e.sup_bound for e in ok]
    bounded = max(sups) <= 2.0 * sups[0] + 1.0
    gain = limit.gain
    gain_zero = float(np.abs(gain).max()) <= 1e-8 * (1.0 + float(np.abs(p.L).max()))
    suggestion = None
    if not gain_zero:
        c = -gain[0]
        suggestion = ("lam v^lam does not vanish; add the per-mode constants c = "
                      f"{np.round(c, 10).tolist()} to L (ergodic constants of the discrete system)")
    return SweepRecord(entries, anchors, distances, limit, limit_res, bounded and gain_zero,
                       bounded, cauchy, suggestion)


# --------------------------------------------------------------------------
# ergodic constants


@dataclass
class BlockSolution:
    c: np.ndarray
    values: np.ndarray
    kind: str
    c_extrapolated: np.ndarray | None = None
    fit_residual: float | None = None
    limit_residual: float = 0.0


def extrapolate(lams, lam_v):
    """Linear fit of ``lam v^lam`` through the two smallest discounts.

    Returns ``(intercept, slope, fit_residual)`` where the fit residual is
    the miss at the third smallest discount.
    """
    lams = np.asarray(lams, dtype=float)
    y = np.asarray(lam_v, dtype=float)
    order = np.argsort(lams)
    a, b = order[1], order[0]
    slope = (y[a] - y[b]) / (lams[a] - lams[b])
    intercept = y[b] - slope * lams[b]
    fit = None
    if len(order) > 2:
        c3 = order[2]
        fit = float(abs(intercept + slope * lams[c3] - y[c3]))
    if not abs(slope * lams[b]) <= 0.5 * (1.0 + abs(intercept)):
        raise ErgodicError(f"extrapolation unstable: slope {slope:.3e} at lam {lams[b]:.3e}")
    return float(intercept), float(slope), fit


def _block_vanishing(pb: ProblemInstance, schedule, kind):
    lams = _check_schedule(schedule)
    sols, prev = [], None
    for lam in lams:
        prev = solve_discounted(pb, lam, v0=prev)
        sols.append(prev)
    lam_v = np.array([s.lam * s.values[0] for s in sols])       # (n, m)
    intercepts, fits = [], []
    for i in range(pb.m):
        c0, _, fit = extrapolate(lams, lam_v[:, i])
        intercepts.append(c0)
        fits.append(fit)
    limit = vanishing_limit(pb, sols[-1])
    spread = limit.gain.max(axis=0) - limit.gain.min(axis=0)
    if np.any(spread > 1e-8 * (1.0 + np.abs(limit.gain).max())):
        raise ErgodicError(f"limit of lam v^lam is not constant in x (spread {spread.max():.3e})")
    c = -limit.gain[0].copy()
    v = limit.values.copy()
    if np.all(pb.row_sums == 0):
        v -= v.min()
    return BlockSolution(c, v, kind, -np.array(intercepts), max(f or 0.0 for f in fits),
                         limit.residual)


def _constant_b(pb: ProblemInstance) -> np.ndarray:
    if not pb.is_constant_coupling():
        raise ErgodicError("ergodic solver needs a constant coupling matrix")
    return np.array(pb.B[0])


def ergodic_constant_scalar(pb: ProblemInstance, schedule=None) -> BlockSolution:
    """Scalar equation ``b v + H[v] = c`` with constant ``b >= 0``.

    For ``b > 0`` the equation is uniquely solvable for every c and c = 0 is
    reported.  For ``b = 0``, c is the negative limit of ``lam v^lam``.
    """
    if pb.m != 1:
        raise ValueError(f"scalar path needs m = 1, got m = {pb.m}")
    b = float(_constant_b(pb)[0, 0])
    if b < 0:
        raise MonotonicityError(f"scalar coupling must be nonnegative, got {b}")
    if b > 0:
        sol = solve_discounted(pb.replace(B=np.zeros_like(pb.B)), b)
        return BlockSolution(np.zeros(1), sol.values.copy(), "diagonal", np.zeros(1), 0.0,
                             sol.residual)
    return _block_vanishing(pb, default_schedule() if schedule is None else schedule, "diagonal")


def ergodic_constant_block(pb: ProblemInstance, schedule=None) -> BlockSolution:
    """Irreducible block: per-component vanishing-discount limit."""
    if pb.m < 2:
        raise ValueError("1 x 1 blocks are routed to ergodic_constant_scalar")
    B = _constant_b(pb)
    nf = normal_form(B)
    if nf.p != 1 or nf.kinds[0] != "irreducible":
        raise ValueError("block coupling matrix is not irreducible")
    return _block_vanishing(pb, default_schedule() if schedule is None else schedule,
                            "irreducible")


@dataclass
class ErgodicSolution:
    c: np.ndarray
    values: np.ndarray
    provenance: list
    residual: float
    tol: float
    normal_form: object = None

    def to_dict(self) -> dict:
        return {
            "c": self.c.tolist(),
            "provenance": self.provenance,
            "residual": self.residual,
            "tolerance": self.tol,
            "normal_form": None if self.normal_form is None else self.normal_form.to_dict(),
        }


def _subproblem(p, modes, shift):
    modes = list(modes)
    Bsub = p.B[:, modes][:, :, modes]
    return p.replace(g=p.g[:, :, modes], L=p.L[:, :, modes] + shift[:, None, :], B=Bsub,
                     name=f"{p.name}[modes={modes}]")


def solve_ergodic(p: ProblemInstance, schedule=None, tol: float = 1e-6) -> ErgodicSolution:
    """Find ``(c, v)`` with ``B v + H[v] = c`` by block induction on the normal form.

    The final residual certificate is ``max |B v + H_h[v] - c| <= tol (1 + |v|)``.
    """
    B = _constant_b(p)
    nf = normal_form(B)
    X, m = p.grid.size, p.m
    v = np.zeros((X, m))
    c = np.zeros(m)
    done = []
    provenance = []
    for k, (modes, kind) in enumerate(zip(nf.original_modes(), nf.kinds)):
        groups = [[q] for q in modes] if kind == "diagonal" else [modes]
        for group in groups:
            shift = np.zeros((X, len(group)))
            for a, i in enumerate(group):
                for q in done:
                    # b_iq v_q moves into the Hamiltonian, i.e. out of the cost
                    shift[:, a] -= B[i, q] * v[:, q]
            pb = _subproblem(p, group, shift)
            if len(group) == 1:
                sol = ergodic_constant_scalar(pb, schedule)
            else:
                sol = ergodic_constant_block(pb, schedule)
            v[:, group] = sol.values
            c[group] = sol.c
            provenance.append({
                "block": k + 1,
                "kind": sol.kind,
                "modes": [int(q) for q in group],
                "c": sol.c.tolist(),
                "c_extrapolated": None if sol.c_extrapolated is None else sol.c_extrapolated.tolist(),
                "fit_residual": sol.fit_residual,
            })
        done.extend(modes)
    residual = float(np.abs(equation_residual(assemble(p, 0.0), v, c[None, :])).max())
    if residual > tol * (1.0 + float(np.abs(v).max())):
        raise ErgodicError(f"ergodic residual {residual:.3e} exceeds tolerance")
    return ErgodicSolution(c, v, provenance, residual, tol, nf)
