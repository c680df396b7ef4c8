"""Bellman-form Hamiltonians ``H_i(x, p) = max_xi [-g_i(x, xi) . p - L_i(x, xi)]``."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .problem import ProblemInstance

__all__ = [
    "HamiltonianEval",
    "eval_H",
    "eval_H_phi",
    "hamiltonian_table",
    "sample_directions",
    "coercivity_margin",
    "coercivity_margins",
]


class HamiltonianEval(NamedTuple):
    value: float
    argmax_control: int


def _check_index(p: ProblemInstance, i: int, x: int) -> None:
    if not 0 <= i < p.m:
        raise IndexError(f"mode {i} out of range for m={p.m}")
    if not 0 <= x < p.grid.size:
        raise IndexError(f"grid point {x} out of range for {p.grid.size} points")


def eval_H_phi(p: ProblemInstance, phi, i: int, x: int, mom) -> HamiltonianEval:
    """Hamiltonian for mode ``i`` at grid point ``x`` with cost table ``phi``.

    Ties go to the lowest control index.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != p.L.shape:
        raise ValueError(f"cost table has shape {phi.shape}, expected {p.L.shape}")
    _check_index(p, i, x)
    mom = np.atleast_1d(np.asarray(mom, dtype=float))
    if mom.shape != (p.grid.dim,) or not np.all(np.isfinite(mom)):
        raise ValueError("momentum must be a finite vector of the grid dimension")
    vals = -p.g[x, :, i, :] @ mom - phi[x, :, i]
    k = int(np.argmax(vals))
    return HamiltonianEval(float(vals[k]), k)


def eval_H(p: ProblemInstance, i: int, x: int, mom) -> HamiltonianEval:
    return eval_H_phi(p, p.L, i, x, mom)


def hamiltonian_table(p: ProblemInstance, mom, phi=None) -> np.ndarray:
    """Vectorised ``H_i(x, mom[x, i])`` for momenta of shape ``(X, m, dim)``."""
    phi = p.L if phi is None else np.asarray(phi, dtype=float)
    mom = np.asarray(mom, dtype=float)
    vals = -np.einsum("xkid,xid->xki", p.g, mom) - phi
    return vals.max(axis=1)


def sample_directions(dim: int, n: int | None = None) -> np.ndarray:
    """Unit directions: {-1, +1} in 1D, ``n`` equally spaced angles in 2D."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    n = 64 if n is None else n
    if n < 16:
        raise ValueError("at least 16 directions are needed in 2D")
    t = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def coercivity_margin(p: ProblemInstance, i: int, x: int, directions) -> float:
    """Smallest support value ``min_theta max_xi g_i(x, xi) . theta``.

    A positive value ``delta`` certifies, up to direction sampling, that the
    ball of radius ``delta`` lies in the convex hull of the drifts, hence
    ``H_i(x, p) >= delta |p| - max L``.
    """
    directions = np.asarray(directions, dtype=float)
    if directions.size == 0:
        raise ValueError("no directions supplied")
    _check_index(p, i, x)
    support = p.g[x, :, i, :] @ directions.T
    return float(support.max(axis=0).min())


def coercivity_margins(p: ProblemInstance, n_directions: int | None = None):
    """Margins for every (x, i) and the number of directions used."""
    dirs = sample_directions(p.grid.dim, n_directions)
    support = np.einsum("xkid,td->xkit", p.g, dirs)
    return support.max(axis=1).min(axis=-1), len(dirs)
