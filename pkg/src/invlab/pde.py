"""Finite-difference Darcy and Schrodinger operators on the unit cube.

The *apply* functions are the only part of this module the estimators use;
the solvers exist for synthetic data, stability diagnostics and the Bayesian
forward model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, ValidationError
from .numerics import Grid, GridField, check_same_grid

SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class DarcyProblem:
    f: GridField
    g: GridField
    f_min: float | None = None

    def __post_init__(self):
        check_same_grid(self.f, self.g)

    @property
    def grid(self) -> Grid:
        return self.f.grid


@dataclass(frozen=True)
class SchrodingerProblem:
    f: GridField
    g_boundary: GridField  # only boundary-node values are read
    g_min: float | None = None

    def __post_init__(self):
        check_same_grid(self.f, self.g_boundary)

    @property
    def grid(self) -> Grid:
        return self.f.grid


def _laplacian_values(u: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    for axis in range(u.ndim):
        v = np.moveaxis(u, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[1:-1] += (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    return out


def _darcy_values(f: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    for axis in range(u.ndim):
        fv = np.moveaxis(f, axis, 0)
        uv = np.moveaxis(u, axis, 0)
        o = np.moveaxis(out, axis, 0)
        flux = 0.5 * (fv[1:] + fv[:-1]) * (uv[1:] - uv[:-1]) / h
        o[1:-1] += (flux[1:] - flux[:-1]) / h
    return out


def darcy_apply(f: GridField, u: GridField) -> GridField:
    """Conservative discrete div(f grad u); boundary nodes are set to zero."""
    check_same_grid(f, u)
    grid = f.grid
    vals = _darcy_values(f.values, u.values, grid.h)
    return GridField(grid, np.where(grid.interior, vals, 0.0))


def laplacian(u: GridField) -> GridField:
    """Standard (2d+1)-point Laplacian at interior nodes, zero on the boundary."""
    vals = _laplacian_values(u.values, u.grid.h)
    return GridField(u.grid, np.where(u.grid.interior, vals, 0.0))


def schrodinger_apply(f: GridField, u: GridField) -> GridField:
    """Discrete (1/2) Laplacian(u) - f u at interior nodes; zero on the boundary."""
    check_same_grid(f, u)
    grid = f.grid
    vals = 0.5 * _laplacian_values(u.values, grid.h) - f.values * u.values
    return GridField(grid, np.where(grid.interior, vals, 0.0))


# -- sparse assembly -------------------------------------------------------

def _full_operator(grid: Grid, face_coeff, diag: np.ndarray | None) -> sp.csr_matrix:
    """Node-to-node matrix of sum_axis D^T diag(face) D plus an optional diagonal.

    ``face_coeff(axis)`` returns the face coefficients between consecutive
    nodes along ``axis`` with the axis moved to the front.
    """
    size = grid.size
    flat = np.arange(size).reshape(grid.shape)
    h2 = grid.h ** 2
    rows, cols, vals = [], [], []
    for axis in range(grid.d):
        idx = np.moveaxis(flat, axis, 0)
        p = idx[:-1].ravel()
        q = idx[1:].ravel()
        c = np.asarray(face_coeff(axis)).ravel() / h2
        # row p gains c (u_q - u_p); row q gains c (u_p - u_q)
        rows += [p, p, q, q]
        cols += [q, p, p, q]
        vals += [c, -c, c, -c]
    if diag is not None:
        rows.append(np.arange(size))
        cols.append(np.arange(size))
        vals.append(np.asarray(diag, dtype=float).ravel())
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size))
    mat.sum_duplicates()
    return mat


def _split(grid: Grid, mat: sp.csr_matrix):
    inner = np.flatnonzero(grid.interior.ravel())
    outer = np.flatnonzero(~grid.interior.ravel())
    mat = mat.tocsr()
    return mat[inner][:, inner].tocsc(), mat[inner][:, outer].tocsc(), inner, outer


def darcy_matrix(f: GridField):
    """Interior stiffness matrix of the Darcy operator (negative definite)."""
    fv = f.values

    def faces(axis):
        v = np.moveaxis(fv, axis, 0)
        return 0.5 * (v[1:] + v[:-1])

    full = _full_operator(f.grid, faces, None)
    k_ii, _, inner, _ = _split(f.grid, full)
    return k_ii, inner


def schrodinger_matrix(f: GridField):
    grid = f.grid

    def faces(axis):
        shape = list(grid.shape)
        shape[0] -= 1
        return np.full(shape, 0.5)

    full = _full_operator(grid, faces, -f.values)
    return _split(grid, full)


class SPDFactor:
    """Direct factorization of a symmetric positive-definite interior matrix.

    1-D problems are tridiagonal and use banded Cholesky; 2-D problems use a
    sparse LU factorization.  Solves are reusable (e.g. for adjoint solves).
    """

    def __init__(self, mat: sp.spmatrix, d: int):
        self.mat = mat.tocsc()
        self.d = d
        if d == 1:
            main = self.mat.diagonal()
            upper = np.concatenate([[0.0], self.mat.diagonal(1)])
            try:
                self._chol = sla.cholesky_banded(np.vstack([upper, main]), lower=False)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("banded Cholesky failed; matrix not SPD") from exc
        else:
            self._lu = spla.splu(self.mat)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.d == 1:
            x = sla.cho_solve_banded((self._chol, False), rhs)
        else:
            x = self._lu.solve(rhs)
        res = np.linalg.norm(self.mat @ x - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0 and res > SOLVE_RTOL * scale:
            raise NumericalError("linear solve residual too large",
                                 residual=float(res / scale))
        return x


def darcy_factor(f: GridField) -> tuple:
    """Factor -K(f) and return ``(factor, interior_indices)``."""
    k_ii, inner = darcy_matrix(f)
    return SPDFactor(-k_ii, f.grid.d), inner


def darcy_solve(problem: DarcyProblem) -> GridField:
    """Solve div(f grad u) = g with u = 0 on the boundary."""
    f, g = problem.f, problem.g
    if problem.f_min is not None:
        if problem.f_min <= 0:
            raise ValidationError("f_min must be positive")
        ok = f.min() >= problem.f_min
    else:
        ok = f.min() > 0
    if not ok:
        raise ValidationError(
            f"ellipticity violated: min f = {f.min():.3g} (floor {problem.f_min})")
    factor, inner = darcy_factor(f)
    u = np.zeros(f.grid.size)
    u[inner] = -factor.solve(g.values.ravel()[inner])
    return GridField(f.grid, u)


def schrodinger_solve(problem: SchrodingerProblem) -> GridField:
    """Solve (1/2) Laplacian(u) - f u = 0 with u = g on the boundary."""
    f, gb = problem.f, problem.g_boundary
    grid = f.grid
    if f.min() < 0:
        raise ValidationError(f"potential must be non-negative, min f = {f.min():.3g}")
    bvals = gb.values[~grid.interior]
    floor = problem.g_min if problem.g_min is not None else 0.0
    if bvals.min() <= 0 or bvals.min() < floor:
        raise ValidationError(
            f"boundary data must be positive (min {bvals.min():.3g}, floor {floor:.3g})")
    k_ii, k_ib, inner, outer = schrodinger_matrix(f)
    rhs = k_ib @ gb.values.ravel()[outer]
    factor = SPDFactor(-k_ii, grid.d)
    u = np.empty(grid.size)
    u[outer] = gb.values.ravel()[outer]
    u[inner] = factor.solve(rhs)
    return GridField(grid, u)
