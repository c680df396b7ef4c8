"""Green-Poisson and Mather measures of the discrete system.

At the discrete level the Green-Poisson measure anchored at ``(z, k)`` is the
occupancy measure of the optimal killed chain started there: with ``A`` the
frozen-policy matrix, ``A^T nu = e_(z,k)``.  Pairing with the cost gives
``<nu, L> = e^T A^{-1} L = v_k(z)`` exactly, and pairing with the scheme
applied to any test vector ``psi`` gives ``psi_k(z)``.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .problem import ProblemInstance
from .scheme import apply_rows, assemble, bellman_apply, policy_system
from .solver import ValueFunction, solve_discounted

__all__ = [
    "MeasureError",
    "DiscreteMeasure",
    "ProbabilityMeasure",
    "green_poisson",
    "pairing",
    "normalization",
    "adjoint_residual",
    "mather_residual",
    "test_vectors",
    "to_probability",
    "from_probability",
    "MatherResult",
    "mather_limit",
    "OracleResult",
    "brute_force_oracle",
    "policy_occupancies",
]

NEGATIVE_CLIP = 1e-12


class MeasureError(RuntimeError):
    pass


@dataclass
class DiscreteMeasure:
    """Weights ``nu[x, xi, i] >= 0`` representing ``v_k(z)``."""

    weights: np.ndarray
    anchor: tuple
    lam: float
    value: float = np.nan
    meta: dict = field(default_factory=dict)

    @property
    def masses(self) -> np.ndarray:
        """Total mass per mode."""
        return self.weights.sum(axis=(0, 1))

    @property
    def gap(self) -> float:
        return self.meta.get("gap", np.nan)

    def rows(self):
        """Nonzero ``(x, xi, i, weight)`` rows in x-fastest order."""
        X, K, m = self.weights.shape
        for i in range(m):
            for xi in range(K):
                for x in range(X):
                    w = self.weights[x, xi, i]
                    if w != 0:
                        yield x, xi, i, float(w)


@dataclass
class ProbabilityMeasure:
    weights: np.ndarray
    kind: str = "probability"

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


def pairing(measure, phi) -> float:
    """``<nu, phi> = sum_i sum_{x, xi} nu_i(x, xi) phi_i(x, xi)``."""
    w = getattr(measure, "weights", measure)
    return float(np.sum(w * np.asarray(phi)))


def normalization(p: ProblemInstance, nu: DiscreteMeasure) -> float:
    """``<nu, B^lam 1>``; equal to 1 for a Green-Poisson measure."""
    rate = nu.lam + p.row_sums
    return pairing(nu, rate[:, None, :])


def _occupancy(op, policy, z, k):
    A, rhs = policy_system(op, policy)
    X, K, m = op.shape
    e = np.zeros(A.shape[0])
    e[z + X * k] = 1.0
    occ = spla.spsolve(A.T.tocsc(), e)
    if not np.all(np.isfinite(occ)):
        raise MeasureError("frozen-policy system is singular")
    return occ.reshape((X, m), order="F"), A, rhs


def _spread(occ, policy, K):
    X, m = occ.shape
    w = np.zeros((X, K, m))
    np.put_along_axis(w, policy[:, None, :], occ[:, None, :], axis=1)
    return w


def _clip(w):
    low = w.min()
    if low < -NEGATIVE_CLIP:
        raise MeasureError(f"occupancy has negative weight {low:.3e}")
    return np.where(w < 0, 0.0, w)


def green_poisson(p: ProblemInstance, lam: float, z: int, k: int,
                  solution: ValueFunction | None = None) -> DiscreteMeasure:
    """Occupancy measure of the optimal policy started from ``(z, k)``."""
    if not lam > 0:
        raise ValueError(f"discount must be positive, got {lam}")
    if not (0 <= z < p.grid.size and 0 <= k < p.m):
        raise IndexError(f"anchor ({z}, {k}) out of range")
    op = assemble(p, lam)
    if solution is None:
        solution = solve_discounted(p, lam, op=op)
    occ, A, rhs = _occupancy(op, solution.policy, z, k)
    w = _clip(_spread(occ, solution.policy, p.K))
    nu = DiscreteMeasure(w, (int(z), int(k)), float(lam), float(solution.values[z, k]))
    value = pairing(nu, p.L)
    nu.meta.update(
        pairing=value,
        gap=abs(nu.value - value),
        normalization_error=abs(normalization(p, nu) - 1.0),
    )
    return nu


def test_vectors(p: ProblemInstance, n_random: int = 100, seed: int = 42,
                 basis: bool = False) -> list:
    """``psi = 1``, optionally every basis indicator, and seeded random vectors."""
    X, m = p.grid.size, p.m
    psis = [np.ones((X, m))]
    if basis:
        for s in range(X * m):
            e = np.zeros(X * m)
            e[s] = 1.0
            psis.append(e.reshape((X, m), order="F"))
    rng = np.random.default_rng(seed)
    psis.extend(rng.uniform(-1.0, 1.0, size=(X, m)) for _ in range(n_random))
    return psis


def adjoint_residual(p: ProblemInstance, nu: DiscreteMeasure, psis) -> float:
    """``max_psi |<nu, (B^lam psi) - g . D_h psi> - psi_k(z)|`` with the scheme's stencil."""
    if len(psis) == 0:
        raise ValueError("need at least one test vector")
    op = assemble(p, nu.lam)
    z, k = nu.anchor
    worst = 0.0
    for psi in psis:
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (p.grid.size, p.m):
            raise ValueError(f"test vector shape {psi.shape} != ({p.grid.size}, {p.m})")
        worst = max(worst, abs(pairing(nu, apply_rows(op, psi)) - psi[z, k]))
    return worst


def mather_residual(p: ProblemInstance, mu, psis) -> float:
    """``max_psi |sum_i <mu_i, (B psi)_i - g_i . D_h psi_i>|`` (undiscounted rows)."""
    op = assemble(p, 0.0)
    return max(abs(pairing(mu, apply_rows(op, psi))) for psi in psis)


def to_probability(p: ProblemInstance, nu: DiscreteMeasure) -> ProbabilityMeasure:
    """``mu_i = (lam + rho_i) nu_i``; total mass one for a normalized ``nu``."""
    rate = nu.lam + p.row_sums
    return ProbabilityMeasure(nu.weights * rate[:, None, :])


def from_probability(p: ProblemInstance, mu: ProbabilityMeasure, lam: float, anchor) -> DiscreteMeasure:
    rate = lam + p.row_sums
    return DiscreteMeasure(mu.weights / rate[:, None, :], tuple(anchor), float(lam))


# --------------------------------------------------------------------------
# vanishing discount


@dataclass
class MatherResult:
    measure: ProbabilityMeasure
    lams: list
    cost_pairings: list
    masses: list
    tv_distances: list
    adjoint_residual: float
    iterates: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.measure.kind,
            "mass": self.measure.mass,
            "lams": list(self.lams),
            "cost_pairings": list(self.cost_pairings),
            "masses": list(self.masses),
            "tv_distances": list(self.tv_distances),
            "adjoint_residual": self.adjoint_residual,
        }


def _check_schedule(schedule, minimum=4):
    lams = [float(s) for s in schedule]
    if len(lams) < minimum:
        raise ValueError(f"schedule needs at least {minimum} values, got {len(lams)}")
    if any(b >= a for a, b in zip(lams, lams[1:])) or lams[-1] <= 0:
        raise ValueError("schedule must be strictly decreasing and positive")
    return lams


def mather_limit(p: ProblemInstance, schedule, z: int, k: int, n_random: int = 100,
                 seed: int = 42) -> MatherResult:
    """Follow ``lam nu^lam`` down the schedule; the last iterate estimates ``mu^0``.

    The iterate equals ``lam / (lam + rho_i) mu_i^lam``; it is a probability
    measure when every row sum vanishes and a sub-probability measure
    otherwise.
    """
    lams = _check_schedule(schedule)
    kind = "probability" if np.all(p.row_sums == 0) else "sub-probability"
    iterates, pairings, masses = [], [], []
    sol = None
    for lam in lams:
        sol = solve_discounted(p, lam, v0=sol)
        nu = green_poisson(p, lam, z, k, solution=sol)
        mu = ProbabilityMeasure(lam * nu.weights, kind)
        iterates.append(mu)
        pairings.append(pairing(mu, p.L))
        masses.append(mu.mass)
    tv = [0.5 * float(np.abs(a.weights - b.weights).sum()) for a, b in zip(iterates, iterates[1:])]
    res = mather_residual(p, iterates[-1], test_vectors(p, n_random, seed))
    return MatherResult(iterates[-1], lams, pairings, masses, tv, res, iterates)


# --------------------------------------------------------------------------
# exhaustive oracle


@dataclass
class OracleResult:
    v_exact: np.ndarray
    nu_exact: DiscreteMeasure
    policy: np.ndarray
    n_policies: int
    values_by_policy: np.ndarray = field(repr=False)
    fixed_point_error: float = np.nan


def _dense_rows(op):
    """Dense scheme rows per (state, control): ``R[s, xi, :]`` and cost ``c[s, xi]``."""
    X, K, m = op.shape
    S = X * m
    R = np.zeros((S, K, S))
    c = np.zeros((S, K))
    for xi in range(K):
        pol = np.full((X, m), xi)
        A, rhs = policy_system(op, pol)
        R[:, xi, :] = A.toarray()
        c[:, xi] = rhs
    return R, c


def _enumerate(R, c, K, S, batch=4096, threads=1):
    n = K**S
    policies = np.array(list(itertools.product(range(K), repeat=S)), dtype=np.int64) \
        if n <= 4096 else None
    rows = np.arange(S)

    def solve_chunk(start):
        stop = min(n, start + batch)
        if policies is not None:
            pol = policies[start:stop]
        else:
            idx = np.arange(start, stop)
            pol = np.stack([(idx // K**(S - 1 - s)) % K for s in range(S)], axis=1)
        A = R[rows[None, :], pol]
        b = c[rows[None, :], pol]
        return pol, np.linalg.solve(A, b[..., None])[..., 0]

    starts = range(0, n, batch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(solve_chunk, starts))
    else:
        parts = [solve_chunk(s) for s in starts]
    return np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts])


def policy_occupancies(p: ProblemInstance, lam: float, z: int, k: int, policies) -> np.ndarray:
    """Occupancy vectors from ``(z, k)`` for each flattened policy (rows)."""
    op = assemble(p, lam)
    R, _ = _dense_rows(op)
    S = p.n_states
    rows = np.arange(S)
    A = R[rows[None, :], np.asarray(policies)]
    e = np.zeros(S)
    e[z + p.grid.size * k] = 1.0
    return np.linalg.solve(np.transpose(A, (0, 2, 1)), np.broadcast_to(e, (len(A), S))[..., None])[..., 0]


def brute_force_oracle(p: ProblemInstance, lam: float, z: int, k: int,
                       threads: int = 1) -> OracleResult:
    """Enumerate every stationary policy of a tiny instance.

    Needs at most 12 states and at most 10**6 policies.  The componentwise
    minimum over policies is the exact discrete value; the occupancy of the
    minimizing policy is the exact Green-Poisson measure.
    """
    S, K = p.n_states, p.K
    if S > 12 or K**S > 10**6:
        raise ValueError(f"instance too large for enumeration ({S} states, {K}**{S} policies)")
    if not lam > 0:
        raise ValueError(f"discount must be positive, got {lam}")
    op = assemble(p, lam)
    R, c = _dense_rows(op)
    policies, values = _enumerate(R, c, K, S, threads=threads)
    v_min = values.min(axis=0)
    best = int(np.argmin(values.sum(axis=1)))
    X, m = p.grid.size, p.m
    policy = policies[best].reshape((X, m), order="F")
    v_exact = v_min.reshape((X, m), order="F")
    occ = np.linalg.solve(R[np.arange(S), policies[best]].T, np.eye(S)[z + X * k])
    nu = DiscreteMeasure(_clip(_spread(occ.reshape((X, m), order="F"), policy, K)),
                         (int(z), int(k)), float(lam), float(v_exact[z, k]))
    nu.meta["pairing"] = pairing(nu, p.L)
    nu.meta["gap"] = abs(nu.meta["pairing"] - nu.value)
    Tv, _ = bellman_apply(op, v_exact)
    return OracleResult(v_exact, nu, policy, len(policies), values,
                        float(np.abs(Tv - v_exact).max()))
