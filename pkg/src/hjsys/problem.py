"""Problem data for weakly coupled Hamilton-Jacobi systems on the flat torus.

A problem is a dense tabulation over a periodic grid of

* drift vectors ``g[x, xi, i, :]`` (one per grid point, control and mode),
* running costs ``L[x, xi, i]``,
* coupling matrices ``B[x, :, :]``.

Grid points are flattened with the first axis varying fastest, so in 2D the
point ``(ix, iy)`` has index ``ix + N * iy``.  The same "x-fastest" convention
is used by the flat arrays of the problem document (see :func:`load_problem`).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "ProblemError",
    "TorusGrid",
    "ControlSet",
    "ProblemInstance",
    "ValidationReport",
    "BUILTINS",
    "builtin_problem",
    "load_problem",
    "serialize_problem",
    "validate_problem",
]


class ProblemError(ValueError):
    """Malformed or inconsistent problem data."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus ``[0, 1)^dim`` with ``n`` points per axis."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ProblemError(f"grid dimension must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 1:
            raise ProblemError(f"points per axis must be a positive integer, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def size(self) -> int:
        return self.n**self.dim

    def multi_index(self, idx):
        """Split flat indices into per-axis indices, shape ``(..., dim)``."""
        idx = np.asarray(idx)
        if self.dim == 1:
            return idx[..., None]
        return np.stack([idx % self.n, idx // self.n], axis=-1)

    def flat_index(self, multi):
        multi = np.asarray(multi) % self.n
        if self.dim == 1:
            return multi[..., 0]
        return multi[..., 0] + self.n * multi[..., 1]

    def neighbor(self, idx, axis: int, step: int):
        """Index of the point ``step`` cells away along ``axis`` (wraps)."""
        multi = self.multi_index(idx).copy()
        multi[..., axis] = (multi[..., axis] + step) % self.n
        return self.flat_index(multi)

    def coordinates(self) -> np.ndarray:
        """Point coordinates, shape ``(size, dim)``."""
        return self.multi_index(np.arange(self.size)) * self.h


@dataclass(frozen=True)
class ControlSet:
    """Finite ordered control set; the position of a label is its index."""

    labels: tuple

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ProblemError("control set must be nonempty")

    def __len__(self):
        return len(self.labels)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Immutable tabulated problem.

    Attributes
    ----------
    g : ndarray, shape (X, K, m, dim)
    L : ndarray, shape (X, K, m)
    B : ndarray, shape (X, m, m)
    """

    grid: TorusGrid
    controls: ControlSet
    g: np.ndarray
    L: np.ndarray
    B: np.ndarray
    name: str = "tabulated"
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        X, K, d = self.grid.size, len(self.controls), self.grid.dim
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 3 or L.shape[:2] != (X, K):
            raise ProblemError(f"cost table L has shape {L.shape}, expected ({X}, {K}, m)")
        m = L.shape[2]
        if m < 1:
            raise ProblemError("mode count m must be at least 1")
        g = np.asarray(self.g, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if g.shape != (X, K, m, d):
            raise ProblemError(f"drift table g has shape {g.shape}, expected {(X, K, m, d)}")
        if B.shape != (X, m, m):
            raise ProblemError(f"coupling table B has shape {B.shape}, expected {(X, m, m)}")
        for label, table in (("cost", L), ("drift", g), ("coupling", B)):
            bad = np.argwhere(~np.isfinite(table))
            if len(bad):
                raise ProblemError(f"non-finite {label} at {tuple(int(j) for j in bad[0])}")
        object.__setattr__(self, "L", _frozen(L))
        object.__setattr__(self, "g", _frozen(g))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def m(self) -> int:
        return self.L.shape[2]

    @property
    def K(self) -> int:
        return len(self.controls)

    @property
    def n_states(self) -> int:
        return self.grid.size * self.m

    @property
    def row_sums(self) -> np.ndarray:
        """``rho[x, i] = sum_j B[x, i, j]``."""
        return self.B.sum(axis=2)

    def is_constant_coupling(self) -> bool:
        return bool(np.all(self.B == self.B[0]))

    def replace(self, **changes) -> "ProblemInstance":
        fields = dict(grid=self.grid, controls=self.controls, g=self.g, L=self.L,
                      B=self.B, name=self.name, meta=self.meta)
        fields.update(changes)
        return ProblemInstance(**fields)

    def fingerprint(self) -> str:
        """SHA-256 over grid shape and the raw bytes of all tables."""
        h = hashlib.sha256()
        h.update(f"{self.grid.dim}:{self.grid.n}:{self.K}:{self.m}".encode())
        for a in (self.g, self.L, self.B):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# builtin benchmark problems


def _control_values(K: int) -> np.ndarray:
    if K < 1:
        raise ProblemError("K must be at least 1")
    if K == 1:
        return np.array([1.0])
    return np.linspace(-1.0, 1.0, K)


def _grid_from(params, dim=1) -> TorusGrid:
    return TorusGrid(dim, int(params.get("N", 200)))


def _eikonal_cost(x, phase=0.0):
    return 2.0 + np.sin(2.0 * np.pi * (x + phase))


def _advective_instance(grid, K, costs, B, name, meta):
    # g(x, xi) = xi in every mode, cost independent of the control
    xi = _control_values(K)
    X, m = grid.size, len(costs)
    g = np.broadcast_to(xi[None, :, None, None], (X, K, m, 1))
    L = np.broadcast_to(np.stack(costs, axis=-1)[:, None, :], (X, K, m))
    Bt = np.broadcast_to(np.asarray(B, dtype=float), (X, m, m))
    return ProblemInstance(grid, ControlSet(tuple(float(v) for v in xi)), g, L, Bt,
                           name=name, meta=meta)


def _shifts(params, m):
    shift = params.get("shift", 0.0)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (m,))
    return shift


def _eikonal1d(params):
    grid = _grid_from(params)
    K = int(params.get("K", 2))
    x = grid.coordinates()[:, 0]
    f = _eikonal_cost(x)
    if params.get("normalize", False):
        f = f - f.min()
    f = f + _shifts(params, 1)[0]
    return _advective_instance(grid, K, [f], [[0.0]], "eikonal1d", dict(params))


def _switch2(params):
    grid = _grid_from(params)
    K = int(params.get("K", 2))
    a = float(params.get("coupling", 1.0))
    x = grid.coordinates()[:, 0]
    if params.get("costs", "distinct") == "equal":
        costs = [_eikonal_cost(x), _eikonal_cost(x)]
    else:
        costs = [_eikonal_cost(x), 2.0 + np.cos(2.0 * np.pi * x)]
    if params.get("normalize", False):
        costs = [c - c.min() for c in costs]
    shift = _shifts(params, 2)
    costs = [c + s for c, s in zip(costs, shift)]
    return _advective_instance(grid, K, costs, [[a, -a], [-a, a]], "switch2", dict(params))


def _constcost(params):
    ell = np.asarray(params.get("ell", [3.0, 0.0]), dtype=float).ravel()
    m = len(ell)
    grid = TorusGrid(int(params.get("dim", 1)), int(params.get("N", 8)))
    K = int(params.get("K", 1))
    if "B" in params:
        B = np.asarray(params["B"], dtype=float)
    elif m == 2:
        B = np.array([[1.0, -1.0], [-1.0, 1.0]])
    else:
        B = np.zeros((m, m))
    X = grid.size
    g = np.zeros((X, K, m, grid.dim))
    L = np.broadcast_to(ell, (X, K, m))
    return ProblemInstance(grid, ControlSet(tuple(range(K))), g, L,
                           np.broadcast_to(B, (X, m, m)), name="constcost", meta=dict(params))


def _decoupled_diag(params):
    b = np.asarray(params.get("b", [1.0, 0.5, 0.0]), dtype=float).ravel()
    if np.any(b < 0):
        raise ProblemError("decoupled_diag requires b_i >= 0")
    m = len(b)
    grid = _grid_from(params)
    K = int(params.get("K", 2))
    x = grid.coordinates()[:, 0]
    costs = [_eikonal_cost(x, phase=i / m) for i in range(m)]
    if params.get("normalize", False):
        costs = [c - c.min() for c in costs]
    shift = _shifts(params, m)
    costs = [c + s for c, s in zip(costs, shift)]
    return _advective_instance(grid, K, costs, np.diag(b), "decoupled_diag", dict(params))


BUILTINS = {
    "eikonal1d": _eikonal1d,
    "switch2": _switch2,
    "constcost": _constcost,
    "decoupled_diag": _decoupled_diag,
}


def builtin_problem(name: str, params: Mapping[str, Any] | None = None) -> ProblemInstance:
    """Build one of the benchmark instances.

    ``eikonal1d``
        m = 1, B = 0, g(x, xi) = xi for K controls evenly spaced in [-1, 1]
        (K = 2 gives {-1, +1}), L = 2 + sin(2 pi x).  ``normalize=True``
        subtracts the grid minimum of the cost, ``shift`` adds a constant.
    ``switch2``
        m = 2 with B = [[a, -a], [-a, a]] (``coupling`` a, default 1) and the
        eikonal drift in both modes.  ``costs="distinct"`` uses 2 + sin and
        2 + cos, ``costs="equal"`` uses 2 + sin twice.
    ``constcost``
        g = 0 with constant costs ``ell``; B defaults to [[1, -1], [-1, 1]]
        for m = 2.
    ``decoupled_diag``
        B = diag(b), eikonal drift, phase-shifted costs per mode.
    """
    params = dict(params or {})
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ProblemError(f"unknown builtin problem {name!r}; "
                           f"choose from {sorted(BUILTINS)}") from None
    try:
        return factory(params)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError(f"invalid parameters for {name}: {exc}") from exc


# --------------------------------------------------------------------------
# structured-text documents


def _reshape_flat(values, shape, label):
    a = np.asarray(values, dtype=float)
    if a.ndim != 1:
        raise ProblemError(f"{label} must be a flat list (x-fastest layout)")
    if a.size != int(np.prod(shape)):
        raise ProblemError(f"shape mismatch for {label}: got {a.size} entries, "
                           f"expected {int(np.prod(shape))} = {' x '.join(map(str, shape))}")
    return a.reshape(shape, order="F")


def _from_document(doc: Mapping[str, Any]) -> ProblemInstance:
    if not isinstance(doc, Mapping):
        raise ProblemError("problem document must be an object")
    if "builtin" in doc:
        params = dict(doc.get("params", {}))
        params.update({k: v for k, v in doc.items() if k not in ("builtin", "params")})
        return builtin_problem(doc["builtin"], params)
    try:
        dim = int(doc["grid"]["dim"])
        n = int(doc["grid"]["N"])
        K = int(doc["controls"]["K"])
        m = int(doc["modes"])
        g_raw, L_raw, B_raw = doc["g"], doc["L"], doc["B"]
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem document: missing {exc}") from exc
    if m < 1:
        raise ProblemError("mode count m must be at least 1")
    grid = TorusGrid(dim, n)
    X = grid.size
    labels = doc["controls"].get("labels", list(range(K)))
    if len(labels) != K:
        raise ProblemError("controls.labels length differs from K")
    L = _reshape_flat(L_raw, (X, K, m), "L")
    g = _reshape_flat(g_raw, (X, K, m, dim), "g")
    B_arr = np.asarray(B_raw, dtype=float)
    if B_arr.shape == (m, m):
        B = np.broadcast_to(B_arr, (X, m, m))
    else:
        B = _reshape_flat(B_raw, (X, m, m), "B")
    return ProblemInstance(grid, ControlSet(tuple(labels)), g, L, B,
                           name=str(doc.get("name", "tabulated")))


def load_problem(source) -> ProblemInstance:
    """Load a problem from a path, a JSON string or an already parsed mapping.

    The document either names a builtin::

        {"builtin": "eikonal1d", "params": {"N": 200, "K": 2}}

    (parameters may also sit at top level) or tabulates everything::

        {"grid": {"dim": 1, "N": 4}, "controls": {"K": 2}, "modes": 1,
         "g": [...], "L": [...], "B": [...]}

    Flat arrays are x-fastest: ``L[x + X*(xi + K*i)]``,
    ``g[x + X*(xi + K*(i + m*d))]`` and ``B[x + X*(i + m*j)]``.  ``B`` may
    also be a single nested m x m matrix applied at every point.
    """
    if isinstance(source, Mapping):
        return _from_document(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"malformed problem document: {exc}") from exc
    return _from_document(doc)


def serialize_problem(p: ProblemInstance) -> dict:
    """Tabulated document for ``p``; ``load_problem`` inverts it bit-for-bit."""
    return {
        "name": p.name,
        "grid": {"dim": p.grid.dim, "N": p.grid.n},
        "controls": {"K": p.K, "labels": list(p.controls.labels)},
        "modes": p.m,
        "g": p.g.ravel(order="F").tolist(),
        "L": p.L.ravel(order="F").tolist(),
        "B": p.B.ravel(order="F").tolist(),
    }


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    monotone: bool
    coercive: bool
    margins: np.ndarray
    n_directions: int
    witness: dict | None = None
    warnings: list = field(default_factory=list)

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    def to_dict(self) -> dict:
        return {
            "monotone": self.monotone,
            "coercive": self.coercive,
            "min_margin": self.min_margin,
            "n_directions": self.n_directions,
            "witness": self.witness,
            "warnings": list(self.warnings),
        }


def validate_problem(p: ProblemInstance, n_directions: int | None = None) -> ValidationReport:
    """Check monotonicity of every B(x) and the coercivity margin at every (x, i)."""
    from .hamiltonian import coercivity_margins
    from .monotone import is_monotone

    witness = None
    for x in range(p.grid.size):
        check = is_monotone(p.B[x])
        if not check:
            witness = {"x": x, **check.to_dict()}
            break
    margins, D = coercivity_margins(p, n_directions)
    warnings = []
    coercive = bool(margins.min() > 0)
    if not coercive:
        x, i = np.unravel_index(np.argmin(margins), margins.shape)
        warnings.append(f"coercivity margin {margins[x, i]:.6g} <= 0 at x={x}, mode={i}: "
                        "0 is not interior to the convex hull of the drifts")
    if witness is not None:
        warnings.append(f"B(x) is not monotone at x={witness['x']}")
    return ValidationReport(witness is None, coercive, margins, D, witness, warnings)
