"""Uniform grids on the unit interval/square, trapezoidal quadrature,
finite-difference derivatives and discrete Sobolev-type norms.

Every field lives on the closed cube [0, 1]^d sampled at ``n + 2`` nodes per
axis (``n`` interior nodes plus both boundary nodes), so ``h * (n + 1) == 1``.
Values are stored with shape ``(n + 2,) * d`` in row-major (C) order; axis 0
is the x-direction.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.fft import dctn

from .errors import ValidationError

NORM_KINDS = ("L2", "H1", "H2", "Linf", "C1", "C2")


@dataclass(frozen=True)
class Grid:
    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValidationError(f"grid dimension must be 1 or 2, got {self.d}")
        if int(self.n) != self.n or self.n < 3:
            raise ValidationError(f"grid needs n >= 3 interior points, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def shape(self) -> tuple:
        return (self.n + 2,) * self.d

    @property
    def size(self) -> int:
        return (self.n + 2) ** self.d

    @cached_property
    def nodes(self) -> np.ndarray:
        """1-D node coordinates ``0, h, ..., 1``."""
        x = np.arange(self.n + 2) * self.h
        x[-1] = 1.0
        return x

    @cached_property
    def mesh(self) -> tuple:
        """Coordinate arrays of shape ``self.shape`` (one per axis)."""
        return tuple(np.meshgrid(*([self.nodes] * self.d), indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """All node coordinates as an array of shape (size, d), row-major."""
        return np.stack([m.ravel() for m in self.mesh], axis=1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoidal weights, shape ``self.shape``."""
        w1 = np.full(self.n + 2, self.h)
        w1[0] = w1[-1] = 0.5 * self.h
        w = w1
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, w1)
        return w

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of interior nodes."""
        m1 = np.zeros(self.n + 2, dtype=bool)
        m1[1:-1] = True
        m = m1
        for _ in range(self.d - 1):
            m = np.logical_and.outer(m, m1)
        return m

    def field(self, fn: Callable | float) -> "GridField":
        """Sample ``fn(x)`` / ``fn(x, y)`` (or a constant) at every node."""
        if callable(fn):
            vals = np.asarray(fn(*self.mesh), dtype=float)
            vals = np.broadcast_to(vals, self.shape)
        else:
            vals = np.full(self.shape, float(fn))
        return GridField(self, vals)

    def zeros(self) -> "GridField":
        return GridField(self, np.zeros(self.shape))


@dataclass(frozen=True, eq=False)
class GridField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            if vals.size == self.grid.size:
                vals = vals.reshape(self.grid.shape)
            else:
                raise ValidationError(
                    f"values of shape {vals.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("grid field contains NaN or Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # arithmetic keeps the grid and re-validates finiteness
    def _coerce(self, other):
        if isinstance(other, GridField):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return GridField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GridField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GridField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridField(self.grid, self.values / self._coerce(other))

    def __neg__(self):
        return GridField(self.grid, -self.values)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridField":
        return GridField(self.grid, fn(self.values))

    def interior_only(self) -> "GridField":
        """Copy with boundary nodes set to zero."""
        return GridField(self.grid, np.where(self.grid.interior, self.values, 0.0))

    def at(self, points) -> np.ndarray:
        return interpolate(self, points)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def check_same_grid(a: GridField, b: GridField):
    if a.grid != b.grid:
        raise ValidationError(f"grid mismatch: {a.grid} vs {b.grid}")


def quadrature_inner(a: GridField, b: GridField) -> float:
    """Trapezoidal approximation of the L2 inner product on the unit cube."""
    check_same_grid(a, b)
    return float(np.sum(a.grid.weights * a.values * b.values))


def fd_derivative(u: GridField, direction: int = 0, order: int = 1) -> GridField:
    """Second-order accurate derivative along one axis.

    Centered stencils at interior nodes, one-sided second-order stencils at the
    two boundary nodes; both are exact on quadratics.
    """
    if order not in (1, 2):
        raise ValidationError(f"derivative order must be 1 or 2, got {order}")
    if not 0 <= direction < u.grid.d:
        raise ValidationError(f"direction {direction} out of range for d={u.grid.d}")
    h = u.grid.h
    v = np.moveaxis(u.values, direction, 0)
    if order == 1:
        out = np.gradient(v, h, axis=0, edge_order=2)
    else:
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return GridField(u.grid, np.moveaxis(out, 0, direction))


def _first_derivatives(u: GridField) -> list:
    return [fd_derivative(u, i, 1) for i in range(u.grid.d)]


def _second_derivatives(u: GridField) -> list:
    d = u.grid.d
    out = []
    for i in range(d):
        for j in range(d):
            if i == j:
                out.append(fd_derivative(u, i, 2))
            else:
                out.append(fd_derivative(fd_derivative(u, i, 1), j, 1))
    return out


def sobolev_seminorm(u: GridField, k: int) -> float:
    """Discrete |u|_{H^k} for k in {0, 1, 2}."""
    if k == 0:
        parts = [u]
    elif k == 1:
        parts = _first_derivatives(u)
    elif k == 2:
        parts = _second_derivatives(u)
    else:
        raise ValidationError(f"seminorm order must be 0, 1 or 2, got {k}")
    return float(np.sqrt(sum(quadrature_inner(p, p) for p in parts)))


def discrete_norm(u: GridField, kind: str = "L2") -> float:
    if kind not in NORM_KINDS:
        raise ValidationError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    if kind in ("H2", "C2") and u.grid.n < 5:
        raise ValidationError("H2/C2 norms need n >= 5")
    if kind == "L2":
        return float(np.sqrt(quadrature_inner(u, u)))
    if kind == "Linf":
        return float(np.max(np.abs(u.values)))
    if kind in ("H1", "H2"):
        order = 1 if kind == "H1" else 2
        return float(np.sqrt(sum(sobolev_seminorm(u, k) ** 2 for k in range(order + 1))))
    parts = [u] + _first_derivatives(u)
    if kind == "C2":
        parts += _second_derivatives(u)
    return float(max(np.max(np.abs(p.values)) for p in parts))


def spectral_sobolev_norm(u: GridField, s: float) -> float:
    """Cosine-series proxy for the H^s norm, usable for any real s >= 0.

    The nodal values are interpolated by the cosine series
    ``sum_k a_k prod_i cos(k_i pi x_i)`` (an inverse DCT-I), whose L2 norm is
    exact, and frequency k is weighted by (1 + pi^2 |k|^2)^s.
    """
    if s < 0:
        raise ValidationError("Sobolev order must be non-negative")
    grid = u.grid
    m = grid.n + 1
    scale1 = np.full(m + 1, 1.0 / m)
    scale1[[0, -1]] *= 0.5
    norm1 = np.full(m + 1, 0.5)
    norm1[0] = 1.0
    coef = dctn(u.values, type=1)
    weight = np.ones(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = m + 1
        coef = coef * scale1.reshape(shape)
        weight = weight * norm1.reshape(shape)
    k = np.meshgrid(*([np.arange(m + 1)] * grid.d), indexing="ij")
    freq2 = sum(kk.astype(float) ** 2 for kk in k)
    return float(np.sqrt(np.sum((1.0 + np.pi**2 * freq2) ** s * weight * coef**2)))


def interpolation_matrix(grid: Grid, points) -> sp.csr_matrix:
    """Sparse (N, grid.size) matrix of multilinear interpolation weights."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if grid.d == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    if pts.shape[1] != grid.d:
        raise ValidationError(f"points must have {grid.d} columns")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValidationError("points outside the closed unit cube")
    npts = pts.shape[0]
    s = pts * (grid.n + 1)
    idx = np.minimum(np.floor(s).astype(int), grid.n)
    frac = s - idx
    stride = [(grid.n + 2) ** (grid.d - 1 - a) for a in range(grid.d)]
    rows, cols, vals = [], [], []
    for corner in range(2**grid.d):
        w = np.ones(npts)
        flat = np.zeros(npts, dtype=int)
        for a in range(grid.d):
            bit = (corner >> a) & 1
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            flat = flat + (idx[:, a] + bit) * stride[a]
        rows.append(np.arange(npts))
        cols.append(flat)
        vals.append(w)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(npts, grid.size))
    mat.sum_duplicates()
    return mat


def interpolate(u: GridField, points) -> np.ndarray:
    return interpolation_matrix(u.grid, points) @ u.values.ravel()


# -- serialization ---------------------------------------------------------

def field_to_json(u: GridField) -> str:
    return json.dumps({"d": u.grid.d, "n": u.grid.n,
                       "values": [float(v) for v in u.values.ravel()]})


def field_from_json(text: str) -> GridField:
    try:
        obj = json.loads(text)
        grid = Grid(int(obj["d"]), int(obj["n"]))
        return GridField(grid, np.asarray(obj["values"], dtype=float))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed grid-field JSON: {exc}") from exc


def field_to_csv(u: GridField) -> str:
    buf = io.StringIO()
    buf.write(f"# d={u.grid.d},n={u.grid.n}\n")
    for v in u.values.ravel():
        buf.write(repr(float(v)) + "\n")
    return buf.getvalue()


def field_from_csv(text: str) -> GridField:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValidationError("grid-field CSV must start with a '# d=..,n=..' header")
    try:
        header = dict(kv.split("=") for kv in lines[0][1:].strip().split(","))
        grid = Grid(int(header["d"]), int(header["n"]))
        values = [float(row[0]) for row in csv.reader(lines[1:]) if row]
    except (KeyError, ValueError, IndexError) as exc:
        raise ValidationError(f"malformed grid-field CSV: {exc}") from exc
    return GridField(grid, np.asarray(values))
