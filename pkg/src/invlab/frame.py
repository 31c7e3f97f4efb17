"""Hierarchical clamped B-spline frame on [0, 1]^d.

Level ``l`` consists of all clamped B-splines of order ``m`` on a uniform knot
sequence with ``base * 2**l`` intervals, each rescaled to unit L2 norm; in
two dimensions level ``l`` holds the tensor products of level-``l`` splines.
The levels are nested, so the system is redundant: a function in the span has
many coefficient representations.  ``select`` picks the one of minimal
weighted norm (weights ``2**(2 l s)``) by a truncated spectral pseudo-inverse
of the weighted Gram matrix, which favours coarse levels the way a wavelet
selection operator does.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline

from .errors import ValidationError
from .numerics import Grid, GridField

log = logging.getLogger(__name__)

CACHE_VERSION = 1
SELECTION_SMOOTHNESS = 1.0
PINV_RCOND = 1e-10


@dataclass(frozen=True)
class MultiIndex:
    l: int
    k: int  # 1-based position within the level


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    J: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float).ravel()
        if not np.all(np.isfinite(e)):
            raise ValidationError("coefficient vector has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def __add__(self, other: "CoefficientVector"):
        if self.J != other.J:
            raise ValidationError("coefficient vectors at different levels")
        return CoefficientVector(self.J, self.entries + other.entries)

    def __mul__(self, c: float):
        return CoefficientVector(self.J, c * self.entries)

    __rmul__ = __mul__

    def __len__(self):
        return self.entries.size


def _knots(intervals: int, m: int) -> np.ndarray:
    inner = np.linspace(0.0, 1.0, intervals + 1)
    return np.concatenate([np.zeros(m - 1), inner, np.ones(m - 1)])


def level_count_1d(l: int, m: int = 4, base: int = 2) -> int:
    return base * 2**l + m - 1


def level_counts(J: int, d: int = 1, m: int = 4, base: int = 2) -> list:
    """N_l for l = 0..J."""
    return [level_count_1d(l, m, base) ** d for l in range(J + 1)]


def level_weights(J: int, s: float, d: int = 1, m: int = 4, base: int = 2) -> np.ndarray:
    """Diagonal of the level-weight matrix: entry ``2**(2 l s)`` for every index at level l."""
    if s < 0:
        raise ValidationError("level-weight exponent must be non-negative")
    counts = level_counts(J, d, m, base)
    return np.concatenate([np.full(c, 2.0 ** (2 * l * s)) for l, c in enumerate(counts)])


def h_norm(v, s: float, levels: np.ndarray | None = None) -> float:
    """Sequence norm sqrt(sum 2^(2 l s) v_lk^2)."""
    if isinstance(v, CoefficientVector):
        e = v.entries
    else:
        e = np.asarray(v, dtype=float)
    if levels is None:
        raise ValidationError("h_norm needs the level of every entry")
    return float(np.sqrt(np.sum(2.0 ** (2 * levels * s) * e**2)))


def resolution_level(N: int, alpha: float, d: int = 1, c_dim: float = 4.0,
                     smoothness: float | None = None) -> int:
    """Smallest J >= 0 with 2^(J d) >= c_dim * N^(d / (2 s + d)), s = alpha + 1 by default."""
    if N < 2:
        raise ValidationError(f"resolution rule needs N >= 2, got {N}")
    if alpha <= d / 2 + 1:
        warnings.warn(f"alpha={alpha} <= d/2 + 1: outside the regime covered by the rate theory",
                      stacklevel=2)
    s = alpha + 1 if smoothness is None else smoothness
    target = math.log2(c_dim) + d / (2 * s + d) * math.log2(N)
    return max(0, math.ceil(target / d - 1e-9))


class _Spline1D:
    """Unit-L2-normalised clamped B-splines for one level."""

    def __init__(self, intervals: int, m: int):
        self.m = m
        self.t = _knots(intervals, m)
        self.count = intervals + m - 1
        self.spline = BSpline(self.t, np.eye(self.count), m - 1, extrapolate=False)
        # exact L2 norms by Gauss-Legendre on every knot interval
        gx, gw = np.polynomial.legendre.leggauss(m + 1)
        brk = np.linspace(0.0, 1.0, intervals + 1)
        a, b = brk[:-1, None], brk[1:, None]
        xs = (0.5 * (b - a) * gx + 0.5 * (a + b)).ravel()
        ws = (0.5 * (b - a) * gw).ravel()
        vals = self._raw(xs, 0)
        self.scale = 1.0 / np.sqrt(ws @ vals**2)

    def _raw(self, x: np.ndarray, nu: int) -> np.ndarray:
        sp_ = self.spline if nu == 0 else self.spline.derivative(nu)
        out = sp_(np.clip(x, 0.0, 1.0))
        return np.nan_to_num(out)

    def __call__(self, x: np.ndarray, nu: int = 0) -> np.ndarray:
        return self._raw(np.asarray(x, dtype=float), nu) * self.scale


@dataclass(eq=False)
class Frame:
    grid: Grid
    J: int
    m: int
    base: int
    index: list
    levels: np.ndarray
    samples: np.ndarray      # (p, grid.size)
    gradients: np.ndarray    # (d, p, grid.size)
    laplacians: np.ndarray   # (p, grid.size)
    gram: np.ndarray         # (p, p)
    selection: np.ndarray    # (p, grid.size)
    rank: int
    _splines: list = field(default_factory=list, repr=False)

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def p(self) -> int:
        return len(self.index)

    @property
    def counts(self) -> list:
        return level_counts(self.J, self.d, self.m, self.base)

    def level_weights(self, s: float) -> np.ndarray:
        return 2.0 ** (2 * self.levels * s)

    def h_norm(self, v, s: float) -> float:
        return h_norm(v, s, self.levels)

    def coefficients(self, v) -> np.ndarray:
        """Entries of ``v`` padded to this frame's length (coarser vectors allowed)."""
        if isinstance(v, CoefficientVector):
            if v.J > self.J:
                raise ValidationError(f"coefficient level {v.J} exceeds frame level {self.J}")
            e = v.entries
        else:
            e = np.asarray(v, dtype=float).ravel()
        if e.size > self.p:
            raise ValidationError(f"{e.size} coefficients for a frame of size {self.p}")
        if e.size < self.p:
            e = np.concatenate([e, np.zeros(self.p - e.size)])
        return e

    def vector(self, entries) -> CoefficientVector:
        return CoefficientVector(self.J, entries)

    def evaluate_basis(self, points, nu: tuple | None = None) -> np.ndarray:
        """Dense (len(points), p) matrix of basis values (or partial derivatives).

        ``nu`` is a per-axis derivative order, e.g. ``(1, 0)`` for d/dx in 2-D.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] != self.d:
            raise ValidationError(f"points must have {self.d} columns")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValidationError("evaluation points outside the closed unit cube")
        nu = (0,) * self.d if nu is None else tuple(nu)
        blocks = []
        for spl in self._splines:
            b = spl(pts[:, 0], nu[0])
            for a in range(1, self.d):
                other = spl(pts[:, a], nu[a])
                b = (b[:, :, None] * other[:, None, :]).reshape(len(pts), -1)
            blocks.append(b)
        return np.hstack(blocks)

    def evaluate(self, v, points) -> np.ndarray:
        return self.evaluate_basis(points) @ self.coefficients(v)

    def basis_field(self, idx: int) -> GridField:
        return GridField(self.grid, self.samples[idx])

    def position(self, l: int, k: int) -> int:
        """Flat position of MultiIndex (l, k)."""
        offset = sum(self.counts[:l])
        if not 1 <= k <= self.counts[l]:
            raise ValidationError(f"index ({l}, {k}) out of range")
        return offset + k - 1


def _assemble(grid: Grid, J: int, m: int, base: int):
    splines = [_Spline1D(base * 2**l, m) for l in range(J + 1)]
    x = grid.nodes
    d = grid.d
    index, levels, samples, grads, laps = [], [], [], [], []
    for l, spl in enumerate(splines):
        v0, v1, v2 = spl(x, 0), spl(x, 1), spl(x, 2)  # (n+2, c)
        c = spl.count
        if d == 1:
            samples.append(v0.T)
            grads.append(v1.T[None])
            laps.append(v2.T)
            count = c
        else:
            # basis (i, j) -> v0[:, i] (x) v0[:, j]; samples flattened row-major over nodes
            def tens(a, b):
                return np.einsum("xi,yj->ijxy", a, b).reshape(c * c, -1)
            samples.append(tens(v0, v0))
            grads.append(np.stack([tens(v1, v0), tens(v0, v1)]))
            laps.append(tens(v2, v0) + tens(v0, v2))
            count = c * c
        index += [MultiIndex(l, k + 1) for k in range(count)]
        levels.append(np.full(count, l))
    return (splines, index, np.concatenate(levels), np.vstack(samples),
            np.concatenate(grads, axis=1), np.vstack(laps))


def _selection(grid: Grid, samples: np.ndarray, levels: np.ndarray):
    w = grid.weights.ravel()
    gram = (samples * w) @ samples.T
    gram = 0.5 * (gram + gram.T)
    b = 2.0 ** (-levels * SELECTION_SMOOTHNESS)  # W^{-1/2}
    gw = b[:, None] * gram * b[None, :]
    evals, evecs = np.linalg.eigh(gw)
    cutoff = PINV_RCOND * np.trace(gw)
    keep = evals > cutoff
    inv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    selection = (b[:, None] * inv * b[None, :]) @ (samples * w)
    return gram, selection, int(keep.sum())


def build_frame(grid: Grid, J: int, spline_order: int = 4, base: int = 2) -> Frame:
    """Sample the hierarchical spline frame up to level J on ``grid``."""
    if spline_order < 4:
        raise ValidationError(f"spline order must be >= 4, got {spline_order}")
    if J < 0:
        raise ValidationError("J must be non-negative")
    if grid.n + 1 < 2 ** (J + 3):
        raise ValidationError(
            f"grid with n={grid.n} too coarse for level J={J} (needs n + 1 >= {2 ** (J + 3)})")
    splines, index, levels, samples, grads, laps = _assemble(grid, J, spline_order, base)
    gram, selection, rank = _selection(grid, samples, levels)
    log.debug("built frame d=%d n=%d J=%d m=%d: p=%d rank=%d",
              grid.d, grid.n, J, spline_order, len(index), rank)
    return Frame(grid, J, spline_order, base, index, levels, samples, grads, laps,
                 gram, selection, rank, splines)


def select(frame: Frame, f: GridField) -> CoefficientVector:
    if f.grid != frame.grid:
        raise ValidationError(f"grid mismatch: {f.grid} vs frame grid {frame.grid}")
    return CoefficientVector(frame.J, frame.selection @ f.values.ravel())


def synthesize(frame: Frame, v) -> GridField:
    return GridField(frame.grid, frame.coefficients(v) @ frame.samples)


def design_matrix(frame: Frame, points) -> np.ndarray:
    """Phi[i, (l, k)] = phi_lk(X_i), evaluated from the spline representation."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if np.any(pts <= 0.0) or np.any(pts >= 1.0):
        raise ValidationError("design points must lie in the open unit cube")
    return frame.evaluate_basis(pts)


# -- cache -----------------------------------------------------------------

def _header(grid: Grid, J: int, m: int, base: int) -> np.ndarray:
    return np.array([grid.d, grid.n, J, m, base, CACHE_VERSION], dtype=np.int64)


def save_frame(frame: Frame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, header=_header(frame.grid, frame.J, frame.m, frame.base),
                 gram=frame.gram, selection=frame.selection, rank=np.array(frame.rank))


def load_frame(path, grid: Grid, J: int, spline_order: int = 4, base: int = 2) -> Frame | None:
    """Rebuild a frame reusing cached Gram/selection data; None if the header differs."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with np.load(path) as data:
            if not np.array_equal(data["header"], _header(grid, J, spline_order, base)):
                return None
            gram, selection, rank = data["gram"], data["selection"], int(data["rank"])
    except (OSError, KeyError, ValueError):
        return None
    splines, index, levels, samples, grads, laps = _assemble(grid, J, spline_order, base)
    if gram.shape != (len(index), len(index)):
        return None
    return Frame(grid, J, spline_order, base, index, levels, samples, grads, laps,
                 gram, selection, rank, splines)


_MEMO: dict = {}


def cached_frame(grid: Grid, J: int, spline_order: int = 4, base: int = 2) -> Frame:
    """Frame lookup through an in-process memo and the optional INVLAB_CACHE directory."""
    key = (grid, J, spline_order, base)
    if key in _MEMO:
        return _MEMO[key]
    frame = None
    cache_dir = os.environ.get("INVLAB_CACHE")
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"frame_d{grid.d}_n{grid.n}_J{J}_m{spline_order}_b{base}.npz"
        frame = load_frame(path, grid, J, spline_order, base)
    if frame is None:
        frame = build_frame(grid, J, spline_order, base)
        if path is not None:
            save_frame(frame, path)
    _MEMO[key] = frame
    return frame
