"""Continuous piecewise-linear finite elements on a uniform periodic 1D mesh.

Nodes are stored without a duplicated periodic endpoint: cell ``c`` joins
node ``c`` to node ``(c + 1) % n``.  Quadrature is 3-point Gauss-Legendre
on every cell, so integrands are handled as ``(n_cells, 3)`` arrays of
values at the quadrature points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

__all__ = [
    "GAUSS_POINTS",
    "GAUSS_WEIGHTS",
    "Mesh1DPeriodic",
    "NodalField",
    "CyclicTridiagonal",
    "HelmholtzSystem",
    "build_mesh",
    "project_function",
    "integrate",
    "assemble_load",
    "assemble_gradient_load",
    "helmholtz_solve",
    "l2_norm",
    "l2_error",
    "mass_matrix",
    "stiffness_matrix",
]

# reference coordinates on [0, 1] and weights summing to 1
GAUSS_POINTS = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class Mesh1DPeriodic:
    length: float
    n_cells: int

    def __post_init__(self):
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"mesh length must be positive, got {self.length}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 3:
            raise ValueError(f"need at least 3 cells, got {self.n_cells}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "length", float(self.length))

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.dx

    @property
    def cell_centres(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    def quadrature_points(self) -> np.ndarray:
        """Physical quadrature points, shape ``(n_cells, 3)``."""
        return (np.arange(self.n_cells)[:, None] + GAUSS_POINTS[None, :]) * self.dx

    def wrap(self, x):
        return np.mod(x, self.length)


def build_mesh(length: float, n_cells: int) -> Mesh1DPeriodic:
    return Mesh1DPeriodic(length, n_cells)


@dataclass
class NodalField:
    """A CG1 function given by its nodal values."""

    mesh: Mesh1DPeriodic
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_cells,):
            raise ValueError(
                f"expected {self.mesh.n_cells} nodal values, got shape {self.values.shape}"
            )

    def slopes(self) -> np.ndarray:
        """Cellwise constant derivative, one value per cell."""
        v = self.values
        return (np.roll(v, -1) - v) / self.mesh.dx

    def at_quadrature(self) -> np.ndarray:
        v = self.values
        return v[:, None] * (1.0 - GAUSS_POINTS) + np.roll(v, -1)[:, None] * GAUSS_POINTS

    def __call__(self, x) -> np.ndarray:
        """Evaluate the piecewise-linear interpolant at arbitrary points."""
        x = self.mesh.wrap(np.asarray(x, dtype=float))
        t = x / self.mesh.dx
        c = np.minimum(np.floor(t).astype(int), self.mesh.n_cells - 1)
        r = t - c
        v = self.values
        return v[c] * (1.0 - r) + v[(c + 1) % self.mesh.n_cells] * r

    def copy(self) -> "NodalField":
        return NodalField(self.mesh, self.values.copy())


def project_function(mesh: Mesh1DPeriodic, f: Callable) -> NodalField:
    """Nodal interpolant of ``f``; ``f`` must accept an array of coordinates."""
    return NodalField(mesh, np.broadcast_to(f(mesh.nodes), (mesh.n_cells,)).astype(float))


def integrate(mesh: Mesh1DPeriodic, integrand_qp) -> float:
    """Integrate values given at the quadrature points (shape ``(n, 3)``).

    Cellwise constants may be passed with shape ``(n, 1)`` or ``(n,)``.
    """
    vals = np.asarray(integrand_qp, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    vals = np.broadcast_to(vals, (mesh.n_cells, 3))
    return float(mesh.dx * np.sum(vals @ GAUSS_WEIGHTS))


def assemble_load(mesh: Mesh1DPeriodic, density_qp) -> np.ndarray:
    """Load vector ``b_i = int phi_i f dx`` for ``f`` given at quadrature points."""
    f = np.broadcast_to(np.asarray(density_qp, dtype=float), (mesh.n_cells, 3))
    left = mesh.dx * (f @ (GAUSS_WEIGHTS * (1.0 - GAUSS_POINTS)))
    right = mesh.dx * (f @ (GAUSS_WEIGHTS * GAUSS_POINTS))
    return left + np.roll(right, 1)


def assemble_gradient_load(mesh: Mesh1DPeriodic, density_qp) -> np.ndarray:
    """Load vector ``b_i = int (phi_i)_x f dx``."""
    f = np.broadcast_to(np.asarray(density_qp, dtype=float), (mesh.n_cells, 3))
    cell_int = f @ GAUSS_WEIGHTS  # = (1/dx) * int_cell f
    return np.roll(cell_int, 1) - cell_int


def l2_norm(u: NodalField) -> float:
    return float(np.sqrt(integrate(u.mesh, u.at_quadrature() ** 2)))


def l2_error(a: NodalField, b: NodalField) -> float:
    if a.mesh != b.mesh:
        raise ValueError("fields live on different meshes")
    return l2_norm(NodalField(a.mesh, a.values - b.values))


# --------------------------------------------------------------------------
# cyclic tridiagonal solves (Sherman-Morrison on a tridiagonal core)


@njit(cache=True, error_model="numpy")
def _cyclic_factor(sub, diag, sup):
    # A[i, i-1] = sub[i], A[i, i+1] = sup[i], indices mod n
    n = diag.shape[0]
    top = sub[0]  # A[0, n-1]
    bottom = sup[n - 1]  # A[n-1, 0]
    gamma = -diag[0]
    bb = diag.copy()
    bb[0] = diag[0] - gamma
    bb[n - 1] = diag[n - 1] - bottom * top / gamma
    cp = np.empty(n)
    inv = np.empty(n)
    inv[0] = 1.0 / bb[0]
    cp[0] = sup[0] * inv[0]
    for i in range(1, n):
        den = bb[i] - sub[i] * cp[i - 1]
        inv[i] = 1.0 / den
        cp[i] = sup[i] * inv[i]
    w = np.zeros(n)
    w[0] = gamma
    w[n - 1] = bottom
    z = _thomas(sub, cp, inv, w)
    denom = 1.0 + z[0] + top * z[n - 1] / gamma
    return cp, inv, z, gamma, top, denom


@njit(cache=True, error_model="numpy")
def _thomas(sub, cp, inv, rhs):
    n = rhs.shape[0]
    x = np.empty(n)
    x[0] = rhs[0] * inv[0]
    for i in range(1, n):
        x[i] = (rhs[i] - sub[i] * x[i - 1]) * inv[i]
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


@njit(cache=True, error_model="numpy")
def _cyclic_apply(sub, cp, inv, z, gamma, top, denom, rhs):
    n = rhs.shape[0]
    x = _thomas(sub, cp, inv, rhs)
    fact = (x[0] + top * x[n - 1] / gamma) / denom
    for i in range(n):
        x[i] -= fact * z[i]
    return x


@njit(cache=True, error_model="numpy")
def _cyclic_matvec(sub, diag, sup, x):
    n = x.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = sub[i] * x[i - 1] + diag[i] * x[i] + sup[i] * x[(i + 1) % n]
    return y


class CyclicTridiagonal:
    """Periodic tridiagonal matrix, factorized once at construction.

    ``sub[i]`` is ``A[i, i-1]`` and ``sup[i]`` is ``A[i, i+1]`` with indices
    taken mod ``n``, so ``sub[0]`` and ``sup[-1]`` are the corner couplings.
    """

    def __init__(self, sub, diag, sup, factorize: bool = True):
        self.sub = np.ascontiguousarray(sub, dtype=float)
        self.diag = np.ascontiguousarray(diag, dtype=float)
        self.sup = np.ascontiguousarray(sup, dtype=float)
        if not (self.sub.shape == self.diag.shape == self.sup.shape) or self.diag.ndim != 1:
            raise ValueError("sub, diag and sup must be 1D arrays of equal length")
        if self.diag.size < 3:
            raise ValueError("cyclic system needs at least 3 unknowns")
        self._factors = _cyclic_factor(self.sub, self.diag, self.sup) if factorize else None

    @property
    def n(self) -> int:
        return self.diag.size

    def solve(self, rhs) -> np.ndarray:
        if self._factors is None:
            raise RuntimeError("matrix was built without a factorization")
        rhs = np.ascontiguousarray(rhs, dtype=float)
        x = _cyclic_apply(self.sub, *self._factors, rhs)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("cyclic tridiagonal solve produced non-finite values")
        return x

    def matvec(self, x) -> np.ndarray:
        return _cyclic_matvec(self.sub, self.diag, self.sup, np.ascontiguousarray(x, dtype=float))

    def dense(self) -> np.ndarray:
        n = self.n
        A = np.zeros((n, n))
        i = np.arange(n)
        A[i, i] = self.diag
        A[i, (i - 1) % n] += self.sub
        A[i, (i + 1) % n] += self.sup
        return A


def mass_matrix(mesh: Mesh1DPeriodic) -> CyclicTridiagonal:
    n, dx = mesh.n_cells, mesh.dx
    return CyclicTridiagonal(np.full(n, dx / 6), np.full(n, 2 * dx / 3), np.full(n, dx / 6))


def stiffness_matrix(mesh: Mesh1DPeriodic) -> CyclicTridiagonal:
    """``K_ij = int (phi_i)_x (phi_j)_x``.  Singular, so only ``matvec`` is meaningful."""
    n, dx = mesh.n_cells, mesh.dx
    return CyclicTridiagonal(
        np.full(n, -1 / dx), np.full(n, 2 / dx), np.full(n, -1 / dx), factorize=False
    )


class HelmholtzSystem(CyclicTridiagonal):
    """Factorized matrix of ``int phi F + alpha^2 int phi_x F_x``.

    ``alpha = 0`` gives the plain mass matrix.
    """

    def __init__(self, mesh: Mesh1DPeriodic, alpha: float):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.mesh = mesh
        self.alpha = float(alpha)
        n, dx, a2 = mesh.n_cells, mesh.dx, self.alpha**2
        off = dx / 6 - a2 / dx
        super().__init__(np.full(n, off), np.full(n, 2 * dx / 3 + 2 * a2 / dx), np.full(n, off))


def helmholtz_solve(system: HelmholtzSystem, rhs) -> NodalField:
    """Solve for ``F`` given the assembled load vector ``rhs``.

    The residual is checked as a normwise backward error,
    ``|A F - rhs| / (|A| |F| + |rhs|) <= 1e-12`` in the max norm.
    """
    rhs = np.asarray(rhs, dtype=float)
    a_norm = float(np.max(np.abs(system.sub) + np.abs(system.diag) + np.abs(system.sup)))

    def backward_error(F):
        r = np.max(np.abs(system.matvec(F) - rhs), initial=0.0)
        scale = a_norm * np.max(np.abs(F), initial=0.0) + np.max(np.abs(rhs), initial=0.0)
        return r / scale if scale > 0 else 0.0

    F = system.solve(rhs)
    if backward_error(F) > 1e-12:
        # one step of iterative refinement
        F -= system.solve(system.matvec(F) - rhs)
        err = backward_error(F)
        if err > 1e-12:
            raise RuntimeError(f"Helmholtz solve backward error {err:.3e} above 1e-12")
    return NodalField(system.mesh, F)
