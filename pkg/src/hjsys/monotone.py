"""Monotone coupling matrices and their Frobenius normal form.

A real m x m matrix B is *monotone* when ``u_k = max_i u_i >= 0`` implies
``(Bu)_k >= 0``.  That is equivalent to nonpositive off-diagonal entries
together with nonnegative row sums, which is what :func:`is_monotone` checks.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MonotonicityError",
    "MonotoneCheck",
    "Permutation",
    "NormalForm",
    "is_monotone",
    "shifted",
    "row_sums",
    "strongly_connected_components",
    "normal_form",
]


class MonotonicityError(ValueError):
    """Raised where a monotone coupling matrix is required."""


@dataclass(frozen=True)
class MonotoneCheck:
    """Result of :func:`is_monotone`; truthy iff the matrix is monotone.

    For a failure, ``u`` is a vector whose maximal coordinate ``u[row]`` is
    nonnegative while ``(B u)[row] = Bu_row < 0``.
    """

    monotone: bool
    kind: str | None = None
    row: int | None = None
    col: int | None = None
    u: np.ndarray | None = None
    Bu_row: float | None = None

    def __bool__(self):
        return self.monotone

    def to_dict(self) -> dict:
        if self.monotone:
            return {"monotone": True}
        return {"monotone": False, "kind": self.kind, "row": self.row, "col": self.col,
                "u": self.u.tolist(), "Bu_row": self.Bu_row}


def is_monotone(B) -> MonotoneCheck:
    B = np.asarray(B, dtype=float)
    m = B.shape[0]
    if B.shape != (m, m):
        raise ValueError(f"coupling matrix must be square, got {B.shape}")
    for i in range(m):
        for j in range(m):
            if i != j and B[i, j] > 0:
                # e_i - t e_j keeps u_i = 1 as the max and drives (Bu)_i below 0
                t = 1.0 + abs(B[i, i]) / abs(B[i, j])
                u = np.zeros(m)
                u[i], u[j] = 1.0, -t
                # rounding can eat the margin b_ij when it is tiny next to b_ii
                while (B @ u)[i] >= 0 and np.isfinite(u[j] * 2):
                    u[j] *= 2
                return MonotoneCheck(False, "off_diagonal", i, j, u, float((B @ u)[i]))
    u = np.ones(m)
    rho = row_sums(B)
    for i in range(m):
        if rho[i] < 0:
            return MonotoneCheck(False, "row_sum", i, None, u, float(rho[i]))
    return MonotoneCheck(True)


def shifted(B, lam: float) -> np.ndarray:
    """``lam * I + B`` for ``lam >= 0``."""
    if lam < 0:
        raise ValueError(f"discount must be nonnegative, got {lam}")
    B = np.asarray(B, dtype=float)
    return B + lam * np.eye(B.shape[-1])


def row_sums(B) -> np.ndarray:
    """Exactly rounded row sums, so the sign does not depend on column order."""
    B = np.asarray(B, dtype=float)
    flat = B.reshape(-1, B.shape[-1])
    return np.array([math.fsum(r) for r in flat]).reshape(B.shape[:-1])


@dataclass(frozen=True)
class Permutation:
    """Permutation matrix ``P[i, j] = delta(pi(i), j)``, so ``(P u)_i = u_{pi(i)}``.

    ``pi[i]`` is the original index that lands in position ``i``.
    """

    pi: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        m = len(self.pi)
        P = np.zeros((m, m))
        P[np.arange(m), self.pi] = 1.0
        return P

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(len(self.pi))
        return inv

    def conjugate(self, B) -> np.ndarray:
        """``P B P^T``, entrywise ``B[pi(i), pi(j)]``."""
        B = np.asarray(B)
        return B[np.ix_(self.pi, self.pi)]


@dataclass(frozen=True)
class NormalForm:
    perm: Permutation
    block_sizes: tuple
    blocks: tuple
    kinds: tuple
    matrix: np.ndarray

    @property
    def p(self) -> int:
        return len(self.block_sizes)

    @property
    def offsets(self) -> tuple:
        """``s_k``: number of indices preceding block k."""
        return tuple(int(s) for s in np.concatenate([[0], np.cumsum(self.block_sizes)[:-1]]))

    def index_sets(self) -> list:
        """Positions of each block in the permuted ordering."""
        return [list(range(s, s + r)) for s, r in zip(self.offsets, self.block_sizes)]

    def original_modes(self) -> list:
        """Original mode indices of each block."""
        return [[int(self.perm.pi[q]) for q in idx] for idx in self.index_sets()]

    def to_dict(self) -> dict:
        return {
            "pi": self.perm.pi.tolist(),
            "block_sizes": list(self.block_sizes),
            "kinds": list(self.kinds),
            "blocks": [b.tolist() for b in self.blocks],
            "original_modes": self.original_modes(),
            "PBPt": self.matrix.tolist(),
        }


def _adjacency(B) -> list:
    m = B.shape[0]
    return [[j for j in range(m) if j != i and B[i, j] != 0] for i in range(m)]


def strongly_connected_components(adj) -> list:
    """Tarjan's algorithm, iterative; components come out sinks first."""
    n = len(adj)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack, comps = [], []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(adj[v]):
                work[-1] = (v, pos + 1)
                w = adj[v][pos]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


def is_strongly_connected(B) -> bool:
    B = np.asarray(B)
    return len(strongly_connected_components(_adjacency(B))) == 1


def normal_form(B) -> NormalForm:
    """Permute a constant monotone B into block lower triangular form.

    The digraph has an edge i -> j when i != j and ``B[i, j] != 0``: row i
    then depends on unknown j, so j's component must come first.  Pure
    diagonal rows (no outgoing edges) are gathered into the leading diagonal
    block; the remaining components follow in dependency order, ties broken
    by lowest original index.  Components of size one are labelled
    ``"diagonal"``, larger ones ``"irreducible"``.
    """
    B = np.asarray(B, dtype=float)
    check = is_monotone(B)
    if not check:
        raise MonotonicityError(f"normal form needs a monotone matrix ({check.kind} "
                                f"violation in row {check.row})")
    m = B.shape[0]
    adj = _adjacency(B)
    comps = strongly_connected_components(adj)
    comp_of = np.empty(m, dtype=int)
    for c, members in enumerate(comps):
        comp_of[members] = c

    leading = sorted(members[0] for members in comps if len(members) == 1 and not adj[members[0]])
    rest = [c for c, members in enumerate(comps)
            if not (len(members) == 1 and not adj[members[0]])]

    # pending[c]: how many components c still waits for
    deps = {c: {int(comp_of[j]) for i in comps[c] for j in adj[i]} - {c} for c in rest}
    placed = {int(comp_of[i]) for i in leading}
    pending = {c: len(deps[c] - placed) for c in rest}
    dependents = {c: [] for c in range(len(comps))}
    for c in rest:
        for d in deps[c]:
            dependents[d].append(c)
    heap = [(comps[c][0], c) for c in rest if pending[c] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, c = heapq.heappop(heap)
        order.append(c)
        for e in dependents[c]:
            pending[e] -= 1
            if pending[e] == 0:
                heapq.heappush(heap, (comps[e][0], e))
    if len(order) != len(rest):
        raise RuntimeError("condensation is not acyclic")

    sizes, kinds, pi = [], [], []
    if leading:
        sizes.append(len(leading))
        kinds.append("diagonal")
        pi.extend(leading)
    for c in order:
        sizes.append(len(comps[c]))
        kinds.append("diagonal" if len(comps[c]) == 1 else "irreducible")
        pi.extend(comps[c])
    perm = Permutation(np.array(pi, dtype=int))
    A = perm.conjugate(B)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    blocks = tuple(A[s:e, s:e].copy() for s, e in zip(offsets[:-1], offsets[1:]))
    nf = NormalForm(perm, tuple(sizes), blocks, tuple(kinds), A)
    _verify(nf)
    return nf


def _verify(nf: NormalForm) -> None:
    A = nf.matrix
    for (s, r), blk, kind in zip(zip(nf.offsets, nf.block_sizes), nf.blocks, nf.kinds):
        if np.any(A[s:s + r, s + r:] != 0):
            raise RuntimeError("normal form is not block lower triangular")
        if kind == "irreducible" and not is_strongly_connected(blk):
            raise RuntimeError("irreducible block is not strongly connected")
    if nf.kinds and nf.kinds[0] == "diagonal":
        blk = nf.blocks[0]
        if np.any(blk - np.diag(np.diag(blk)) != 0):
            raise RuntimeError("leading block is not diagonal")
    if not is_monotone(A):
        raise RuntimeError("conjugated matrix lost monotonicity")
