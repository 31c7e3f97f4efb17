"""Registry of analytic ground-truth coefficients and data for both models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .numerics import Grid, GridField


@dataclass(frozen=True)
class Fixture:
    name: str
    model: str
    d: int
    f0: Callable
    g: Callable
    f_min: float
    smoothness: str
    description: str

    def fields(self, grid: Grid) -> tuple:
        if grid.d != self.d:
            raise ValidationError(f"fixture {self.name!r} is {self.d}-dimensional")
        return grid.field(self.f0), grid.field(self.g)


def _const(c):
    return lambda *xs: np.full_like(xs[0], c, dtype=float)


_REGISTRY = {}


def _register(fx: Fixture):
    _REGISTRY[(fx.model, fx.name)] = fx


_register(Fixture("constant", "darcy", 1, _const(2.0), _const(1.0), 2.0, "C^inf",
                  "f0 = 2, g = 1"))
_register(Fixture("bump", "darcy", 1,
                  lambda x: 1.0 + 0.5 * np.exp(-(x - 0.5) ** 2 / 0.02),
                  lambda x: 2.0 + np.sin(2 * np.pi * x),
                  1.0 + 0.5 * np.exp(-12.5), "C^inf (narrow)",
                  "f0 = 1 + exp(-(x-1/2)^2/0.02)/2, g = 2 + sin(2 pi x)"))
_register(Fixture("smooth", "darcy", 1,
                  lambda x: 1.5 + 0.5 * np.cos(np.pi * x),
                  _const(4.0), 1.0, "C^inf, one low mode",
                  "f0 = 3/2 + cos(pi x)/2, g = 4"))
_register(Fixture("very_smooth", "darcy", 1,
                  lambda x: 2.0 + 0.25 * np.sin(np.pi * x),
                  _const(4.0), 2.0, "C^inf, one low mode",
                  "f0 = 2 + sin(pi x)/4, g = 4"))
_register(Fixture("bump2d", "darcy", 2,
                  lambda x, y: 1.0 + 0.5 * np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.05),
                  _const(4.0), 1.0, "C^inf",
                  "f0 = 1 + exp(-|x - c|^2/0.05)/2, g = 4"))
_register(Fixture("constant", "schrodinger", 1, _const(1.0), _const(1.0), 1.0, "C^inf",
                  "f0 = 1, boundary value 1"))
_register(Fixture("smooth", "schrodinger", 1,
                  lambda x: 1.0 + 0.5 * np.cos(np.pi * x),
                  _const(1.0), 0.5, "C^inf, one low mode",
                  "f0 = 1 + cos(pi x)/2, boundary value 1"))
_register(Fixture("smooth2d", "schrodinger", 2,
                  lambda x, y: 1.0 + 0.5 * np.sin(np.pi * x) * np.sin(np.pi * y),
                  _const(1.0), 1.0, "C^inf",
                  "f0 = 1 + sin(pi x) sin(pi y)/2, boundary value 1"))


def fixture_names(model: str | None = None) -> list:
    return sorted(f"{m}:{n}" for m, n in _REGISTRY if model is None or m == model)


def get_fixture(model: str, name: str) -> Fixture:
    try:
        return _REGISTRY[(model, name)]
    except KeyError:
        raise ValidationError(
            f"unknown fixture {name!r} for model {model!r}; registry: "
            + ", ".join(fixture_names(model))) from None


def ground_truths(model: str, name: str, grid: Grid | None = None) -> tuple:
    """(f0, g) sampled on ``grid`` (defaults to n = 255 in the fixture's dimension)."""
    fx = get_fixture(model, name)
    grid = grid or Grid(fx.d, 255 if fx.d == 1 else 63)
    f0, g = fx.fields(grid)
    check_constraints(model, f0, g)
    return f0, g


def check_constraints(model: str, f0: GridField, g: GridField):
    if model == "darcy":
        if f0.min() <= 0:
            raise ValidationError(f"Darcy coefficient must be positive, min {f0.min():.3g}")
    elif model == "schrodinger":
        if f0.min() < 0:
            raise ValidationError(f"Schrodinger potential must be non-negative, min {f0.min():.3g}")
        if g.values[~g.grid.interior].min() <= 0:
            raise ValidationError("Schrodinger boundary data must be positive")
    else:
        raise ValidationError(f"unknown model {model!r}")
