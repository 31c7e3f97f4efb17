"""Diagnostics for generalized stability estimates and the discrepancy functional.

A stability report compares two (u, f, g) triplets that satisfy their PDE
relation exactly (the second triplet's right-hand side is allowed to differ
from the first), and records the quantities on both sides of the inequality
``|f1 - f2| <= C (term_u + term_g)``.  Nothing is enforced; suites aggregate
the empirical ratios so that the size and grid-stability of C can be checked.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import pde
from .dataset import Dataset
from .errors import NumericalError, ValidationError
from .fixtures import get_fixture
from .frame import cached_frame
from .numerics import Grid, GridField, check_same_grid, discrete_norm, interpolate

PDE_TOL = 1e-8
SUITE_COLUMNS = ("seed", "lhs", "term_u", "term_g", "ratio")


@dataclass(frozen=True)
class Triplet:
    u: GridField
    f: GridField
    g: GridField

    def __post_init__(self):
        check_same_grid(self.u, self.f)
        check_same_grid(self.u, self.g)

    @property
    def grid(self) -> Grid:
        return self.u.grid


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    term_u: float
    term_g: float

    @property
    def ratio(self) -> float:
        denom = self.term_u + self.term_g
        if denom == 0:
            return math.inf if self.lhs > 0 else 0.0
        return self.lhs / denom


def _interior_l2(v: GridField) -> float:
    return discrete_norm(v.interior_only(), "L2")


def _check_relation(name: str, residual: GridField, scale: float):
    r = _interior_l2(residual)
    if r > PDE_TOL * max(1.0, scale):
        raise ValidationError(f"{name}: PDE relation violated (residual {r:.3e})")


def darcy_stability_gap(t1: Triplet, t2: Triplet, f_min: float, g_min: float) -> StabilityReport:
    """Both sides of the Darcy generalized stability inequality.

    Ellipticity, the lower bound on g and the zero boundary condition are
    hypotheses on the reference triplet ``t1`` only.
    """
    if t1.grid != t2.grid:
        raise ValidationError(f"grid mismatch: {t1.grid} vs {t2.grid}")
    grid = t1.grid
    if f_min <= 0 or g_min <= 0:
        raise ValidationError("f_min and g_min must be positive")
    if t1.f.min() < f_min:
        raise ValidationError(f"ellipticity: min f1 = {t1.f.min():.4g} < f_min = {f_min}")
    g1_inner = t1.g.values[grid.interior]
    if g1_inner.min() < g_min:
        raise ValidationError(f"source lower bound: min g1 = {g1_inner.min():.4g} < g_min = {g_min}")
    if np.max(np.abs(t1.u.values[~grid.interior])) > PDE_TOL:
        raise ValidationError("boundary condition: u1 does not vanish on the boundary")
    for name, t in (("triplet 1", t1), ("triplet 2", t2)):
        _check_relation(name, pde.darcy_apply(t.f, t.u) - t.g.interior_only(), _interior_l2(t.g))
    lhs = discrete_norm(t1.f - t2.f, "L2")
    term_u = discrete_norm(t2.f, "C1") * discrete_norm(t1.u - t2.u, "H2")
    term_g = _interior_l2(t1.g - t2.g)
    return StabilityReport(lhs, term_u, term_g)


def schrodinger_potential(u: GridField, h: GridField) -> GridField:
    """f = (Laplacian(u)/2 - h)/u at interior nodes (boundary nodes set to 0)."""
    check_same_grid(u, h)
    grid = u.grid
    if np.any(u.values[grid.interior] == 0):
        raise ValidationError("u vanishes at an interior node")
    lap = pde.laplacian(u).values
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(grid.interior, (0.5 * lap - h.values) / u.values, 0.0)
    return GridField(grid, f)


def schrodinger_stability_gap(t1: Triplet, t2: Triplet, c_min: float) -> StabilityReport:
    """Both sides of the Schrodinger generalized stability inequality; ``g`` holds h."""
    if t1.grid != t2.grid:
        raise ValidationError(f"grid mismatch: {t1.grid} vs {t2.grid}")
    if c_min <= 0:
        raise ValidationError("c_min must be positive")
    for name, t in (("triplet 1", t1), ("triplet 2", t2)):
        if t.u.min() < c_min:
            raise ValidationError(f"positivity: min u of {name} = {t.u.min():.4g} < c_min = {c_min}")
        _check_relation(name, pde.schrodinger_apply(t.f, t.u) - t.g.interior_only(),
                        _interior_l2(t.g))
    lhs = discrete_norm(t1.f - t2.f, "L2")
    term_u = discrete_norm(t1.u - t2.u, "H2")
    term_g = _interior_l2(t1.g - t2.g)
    return StabilityReport(lhs, term_u, term_g)


# -- random perturbation suites --------------------------------------------

_PERTURB_GRID = {1: Grid(1, 255), 2: Grid(2, 63)}


def smooth_perturbation(grid: Grid, rng: np.random.Generator, c1_norm: float,
                        levels: int = 2, zero_boundary: bool = False) -> GridField:
    """Random low-level frame expansion with level-decaying coefficients.

    The expansion is evaluated exactly at the nodes of ``grid``, so the same
    generator state yields the same function on every grid.  It is rescaled
    so that max(|h|, |grad h|) over the reference nodes equals ``c1_norm``.
    """
    frame = cached_frame(_PERTURB_GRID[grid.d], levels)
    coef = rng.standard_normal(frame.p) * 2.0 ** (-2.0 * frame.levels)
    ref = frame.grid.points
    pts = grid.points
    vals = frame.evaluate_basis(pts) @ coef
    scale_parts = [np.abs(frame.evaluate_basis(ref) @ coef)]
    for a in range(grid.d):
        nu = tuple(int(a == b) for b in range(grid.d))
        scale_parts.append(np.abs(frame.evaluate_basis(ref, nu) @ coef))
    if zero_boundary:
        bubble = np.prod(4.0 * pts * (1.0 - pts), axis=1)
        vals = vals * bubble
    scale = max(p.max() for p in scale_parts)
    return GridField(grid, c1_norm * vals / scale)


def darcy_pair(grid: Grid, seed: int, fixture: str = "constant", exact: bool = False) -> tuple:
    """Reference triplet from a fixture and a perturbed second triplet."""
    fx = get_fixture("darcy", fixture)
    rng = np.random.default_rng(seed)
    f1, g1 = fx.fields(grid)
    u1 = pde.darcy_solve(pde.DarcyProblem(f1, g1))
    c1 = rng.uniform(0.05, 0.5)
    h = smooth_perturbation(grid, rng, c1)
    f2 = f1 + h
    u2 = pde.darcy_solve(pde.DarcyProblem(f2, g1))
    if not exact:
        u2 = u2 + smooth_perturbation(grid, rng, c1 * rng.uniform(0.0, 0.05),
                                      zero_boundary=True)
    g2 = pde.darcy_apply(f2, u2)
    return Triplet(u1, f1, g1.interior_only()), Triplet(u2, f2, g2)


def schrodinger_pair(grid: Grid, seed: int, fixture: str = "smooth", exact: bool = False) -> tuple:
    fx = get_fixture("schrodinger", fixture)
    rng = np.random.default_rng(seed)
    f1, gb = fx.fields(grid)
    u1 = pde.schrodinger_solve(pde.SchrodingerProblem(f1, gb))
    c1 = rng.uniform(0.05, 0.4)
    h = smooth_perturbation(grid, rng, c1)
    f2 = f1 + h
    u2 = pde.schrodinger_solve(pde.SchrodingerProblem(f2, gb))
    if not exact:
        u2 = u2 + smooth_perturbation(grid, rng, c1 * rng.uniform(0.0, 0.05),
                                      zero_boundary=True)
    return (Triplet(u1, f1, pde.schrodinger_apply(f1, u1)),
            Triplet(u2, f2, pde.schrodinger_apply(f2, u2)))


def stability_suite(model: str, pairs: int = 100, n: int = 127, d: int = 1, seed: int = 0,
                    f_min: float = 1.0, g_min: float = 1.0, c_min: float = 0.5,
                    exact: bool = False) -> list:
    """Rows ``{seed, lhs, term_u, term_g, ratio}`` for ``pairs`` random perturbations."""
    if pairs < 1:
        raise ValidationError("suite needs at least one pair")
    grid = Grid(d, n)
    rows = []
    for i in range(pairs):
        s = seed + i
        if model == "darcy":
            t1, t2 = darcy_pair(grid, s, "constant" if d == 1 else "bump2d", exact)
            rep = darcy_stability_gap(t1, t2, f_min, g_min)
        elif model == "schrodinger":
            t1, t2 = schrodinger_pair(grid, s, "smooth" if d == 1 else "smooth2d", exact)
            rep = schrodinger_stability_gap(t1, t2, c_min)
        else:
            raise ValidationError(f"unknown model {model!r}")
        rows.append({"seed": s, "lhs": rep.lhs, "term_u": rep.term_u,
                     "term_g": rep.term_g, "ratio": rep.ratio})
    return rows


def check_suite(rows: list, factor: float = 10.0) -> float:
    """Return the maximum ratio; raise if a ratio is non-finite or exceeds
    ``factor`` times the running median of the ratios seen so far."""
    ratios = []
    for row in rows:
        r = row["ratio"]
        if not math.isfinite(r):
            raise NumericalError("non-finite stability ratio", seed=row["seed"])
        ratios.append(r)
        med = float(np.median(ratios))
        if r > factor * med:
            raise NumericalError("stability ratio far above running median",
                                 seed=row["seed"], ratio=r, median=med)
    return max(ratios)


def suite_to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUITE_COLUMNS)
    for row in rows:
        w.writerow([row["seed"]] + [repr(float(row[c])) for c in SUITE_COLUMNS[1:]])
    return buf.getvalue()


# -- boundedness and discrepancy -------------------------------------------

def forward_bounds(model: str, f: GridField, g: GridField) -> dict:
    """Norms of G(f) next to the size of f, for checking forward-map boundedness."""
    if model == "darcy":
        u = pde.darcy_solve(pde.DarcyProblem(f, g))
    elif model == "schrodinger":
        u = pde.schrodinger_solve(pde.SchrodingerProblem(f, g))
    else:
        raise ValidationError(f"unknown model {model!r}")
    return {"u_H2": discrete_norm(u, "H2"), "u_C2": discrete_norm(u, "C2"),
            "f_H2": discrete_norm(f, "H2"), "f_C1": discrete_norm(f, "C1")}


def _values_at(v, X: np.ndarray) -> np.ndarray:
    if isinstance(v, GridField):
        return interpolate(v, X)
    if callable(v):
        return np.asarray(v(X), dtype=float).ravel()
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size != X.shape[0]:
        raise ValidationError(f"{arr.size} values for {X.shape[0]} design points")
    return arr


def discrepancy_tau(u_candidate, penalty_value: float, dataset: Dataset, u0=None) -> float:
    """Empirical squared distance to u0 (or to Y when u0 is absent) plus a penalty.

    ``u_candidate`` and ``u0`` may be grid fields (interpolated at the design
    points), callables on an (N, d) array, or arrays of values at the points.
    """
    if penalty_value < 0:
        raise ValidationError("penalty value must be non-negative")
    cand = _values_at(u_candidate, dataset.X)
    target = dataset.Y if u0 is None else _values_at(u0, dataset.X)
    return float(np.mean((cand - target) ** 2) + penalty_value)
