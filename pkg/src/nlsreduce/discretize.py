"""Uniform Cartesian grids, stencils, quadrature and constrained solves.

Fields live on vertex-centered boxes with homogeneous Dirichlet truncation:
values on the boundary layer are forced to zero, and all linear algebra acts
on the interior nodes.  The W^{1,2} inner product is the trapezoid mass term
plus the edge-difference gradient term; for fields vanishing on the boundary
this is exactly the bilinear form of the (-Δ+1) stencil, which keeps Riesz
representatives and operator duality consistent to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "Field",
    "GridMismatchError",
    "SingularOperatorError",
    "field_from_function",
    "zero_field",
    "apply_operator",
    "inner",
    "norm",
    "integrate",
    "neg_laplacian_matrix",
    "riesz_matrix",
    "schrodinger_matrix",
    "interior_vector",
    "embed_interior",
    "BorderedSolver",
    "solve_constrained",
]


class GridMismatchError(ValueError):
    pass


class SingularOperatorError(RuntimeError):
    """Bordered system is (numerically) singular; carries sigma_min estimate."""

    def __init__(self, message, sigma_min=None):
        if sigma_min is not None:
            message = f"{message} (smallest singular value ~ {sigma_min:.3e})"
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass(frozen=True)
class Grid:
    """Vertex-centered uniform box grid: m points per axis on [c-R, c+R]^n."""

    n: int
    extent: float
    m: int
    center: tuple = ()

    def __post_init__(self):
        if self.m < 16:
            raise ValueError("grid needs at least 16 points per axis")
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.n)
        if len(self.center) != self.n:
            raise ValueError("center dimension mismatch")

    @property
    def h(self) -> float:
        return 2.0 * self.extent / (self.m - 1)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.center[i] - self.extent, self.center[i] + self.extent, self.m)

    def points(self) -> np.ndarray:
        """Coordinates, shape (n, m, ..., m)."""
        axes = [self.axis(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def interior_slices(self) -> tuple:
        return (slice(1, -1),) * self.n

    def n_interior(self) -> int:
        return (self.m - 2) ** self.n


@dataclass
class Field:
    """Real samples attached to a grid; boundary values are held at zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def _check_same_grid(*fields: Field):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


def field_from_function(grid: Grid, fn) -> Field:
    return Field(grid, np.asarray(fn(grid.points()), dtype=float))


def zero_field(grid: Grid) -> Field:
    return Field(grid, np.zeros(grid.shape))


def _zero_boundary(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for ax in range(values.ndim):
        idx0 = [slice(None)] * values.ndim
        idx0[ax] = 0
        out[tuple(idx0)] = 0.0
        idx0[ax] = -1
        out[tuple(idx0)] = 0.0
    return out


def interior_vector(field: Field) -> np.ndarray:
    return field.values[field.grid.interior_slices()].ravel()


def embed_interior(grid: Grid, vec: np.ndarray) -> Field:
    values = np.zeros(grid.shape)
    values[grid.interior_slices()] = vec.reshape((grid.m - 2,) * grid.n)
    return Field(grid, values)


# --------------------------------------------------------------------------
# Stencil application (matrix-free, interior output, zero boundary).


def _neg_laplacian_values(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    core = (slice(1, -1),) * values.ndim
    acc = np.zeros_like(values[core])
    for ax in range(values.ndim):
        lo = [slice(1, -1)] * values.ndim
        hi = [slice(1, -1)] * values.ndim
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        acc += (2.0 * values[core] - values[tuple(lo)] - values[tuple(hi)]) / (h * h)
    out[core] = acc
    return out


def apply_operator(kind, v: Field, Vfield: Field = None, Kfield: Field = None,
                   zfield: Field = None, p: float = None) -> Field:
    """Apply -Δ or the linearized Schrodinger operator to a field.

    ``schrodinger`` returns  -Δv + v + V v - p K z_+^{p-1} v  on the interior.
    """
    if kind == "laplacian":
        return Field(v.grid, _neg_laplacian_values(v.values, v.grid.h))
    if kind == "schrodinger":
        _check_same_grid(v, Vfield, Kfield, zfield)
        out = _neg_laplacian_values(v.values, v.grid.h)
        zpow = np.where(zfield.values > 0, zfield.values, 0.0) ** (p - 1.0)
        core = v.grid.interior_slices()
        out[core] += (
            (1.0 + Vfield.values[core]) * v.values[core]
            - p * Kfield.values[core] * zpow[core] * v.values[core]
        )
        return Field(v.grid, out)
    raise ValueError(f"unknown operator kind {kind!r}")


# --------------------------------------------------------------------------
# Quadrature and inner products.


@lru_cache(maxsize=32)
def _trapezoid_weights(n: int, m: int, h: float) -> np.ndarray:
    w1 = np.full(m, h)
    w1[0] = w1[-1] = 0.5 * h
    w = w1
    for _ in range(n - 1):
        w = np.multiply.outer(w, w1)
    return w


def integrate(grid: Grid, values: np.ndarray) -> float:
    """Trapezoid quadrature over the box."""
    return float(np.sum(_trapezoid_weights(grid.n, grid.m, grid.h) * values))


def inner(u: Field, v: Field, kind: str = "L2") -> float:
    """L2 or W12 inner product (trapezoid mass + edge-difference gradient)."""
    g = _check_same_grid(u, v)
    a, b = u.values, v.values
    val = integrate(g, a * b)
    if kind == "L2":
        return val
    if kind != "W12":
        raise ValueError(f"unknown inner product kind {kind!r}")
    hn = g.h**g.n
    grad = 0.0
    for ax in range(g.n):
        da = np.diff(a, axis=ax)
        db = np.diff(b, axis=ax)
        grad += np.sum(da * db)
    return val + grad * hn / (g.h * g.h)


def norm(u: Field, kind: str = "W12") -> float:
    return float(np.sqrt(max(inner(u, u, kind), 0.0)))


# --------------------------------------------------------------------------
# Sparse interior matrices.


@lru_cache(maxsize=32)
def _neg_laplacian_interior(n: int, m: int, h: float) -> sp.csr_matrix:
    k = m - 2
    one = sp.identity(k, format="csr")
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(k, k), format="csr") / (h * h)
    mats = []
    for ax in range(n):
        parts = [t if j == ax else one for j in range(n)]
        acc = parts[0]
        for part in parts[1:]:
            acc = sp.kron(acc, part, format="csr")
        mats.append(acc)
    out = mats[0]
    for extra in mats[1:]:
        out = out + extra
    return out.tocsc()


def neg_laplacian_matrix(grid: Grid) -> sp.csc_matrix:
    return _neg_laplacian_interior(grid.n, grid.m, grid.h)


def riesz_matrix(grid: Grid) -> sp.csc_matrix:
    """Matrix of the W12 inner product against interior unit vectors: -Δ + 1."""
    return (neg_laplacian_matrix(grid) + sp.identity(grid.n_interior(), format="csc")).tocsc()


def schrodinger_matrix(grid: Grid, Vvals: np.ndarray, Kvals: np.ndarray,
                       zvals: np.ndarray, p: float) -> sp.csc_matrix:
    """-Δ + 1 + V - p K z_+^{p-1} on interior nodes."""
    core = grid.interior_slices()
    zpow = np.where(zvals > 0, zvals, 0.0) ** (p - 1.0)
    diag = 1.0 + Vvals[core].ravel() - p * (Kvals[core] * zpow[core]).ravel()
    return (neg_laplacian_matrix(grid) + sp.diags(diag)).tocsc()


# --------------------------------------------------------------------------
# Constrained (bordered) solves.


class BorderedSolver:
    """Factorization of  [[A, C], [C^T, 0]]  reused across right-hand sides.

    Solutions v satisfy C^T v = 0 and A v - rhs ∈ span(C), i.e. the equation
    holds tested against anything orthogonal to the constraint columns.
    """

    def __init__(self, A: sp.spmatrix, constraints, grid: Grid = None, method: str = "auto"):
        self.A = A.tocsc()
        self.k = len(constraints)
        n = self.A.shape[0]
        if self.k:
            cols = []
            for c in constraints:
                vec = interior_vector(c) if isinstance(c, Field) else np.asarray(c, dtype=float)
                cols.append(vec)
            C = sp.csc_matrix(np.column_stack(cols))
            self.M = sp.bmat([[self.A, C], [C.T, None]], format="csc")
        else:
            self.M = self.A
        if method == "auto":
            method = "direct" if (grid is None or grid.n <= 2) else "minres"
        self.method = method
        self.grid = grid
        if method == "direct":
            try:
                self._lu = spla.splu(self.M, permc_spec="COLAMD")
            except RuntimeError as err:
                raise SingularOperatorError(
                    f"bordered factorization failed: {err}", self._sigma_min_estimate()
                ) from None
        else:
            diag = np.abs(self.M.diagonal())
            diag[diag < 1e-12] = 1.0
            self._precond = spla.LinearOperator(self.M.shape, lambda x: x / diag)

    def _sigma_min_estimate(self):
        try:
            s = spla.svds(self.M.astype(float), k=1, which="SM", maxiter=200,
                          return_singular_vectors=False)
            return float(s[0])
        except Exception:
            return None

    def solve_vector(self, rhs: np.ndarray) -> np.ndarray:
        n = self.A.shape[0]
        b = np.concatenate([rhs, np.zeros(self.k)]) if self.k else rhs
        if self.method == "direct":
            x = self._lu.solve(b)
        else:
            x, info = spla.minres(self.M, b, M=self._precond, rtol=1e-11, maxiter=20000)
            if info != 0:
                raise SingularOperatorError(f"minres did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SingularOperatorError(
                "bordered solve produced non-finite values", self._sigma_min_estimate()
            )
        return x[:n]

    def solve(self, rhs: Field) -> Field:
        return embed_interior(rhs.grid, self.solve_vector(interior_vector(rhs)))


def solve_constrained(A: sp.spmatrix, rhs: Field, constraints, method: str = "auto") -> Field:
    """One-shot bordered solve; see BorderedSolver."""
    solver = BorderedSolver(A, list(constraints), grid=rhs.grid, method=method)
    return solver.solve(rhs)
