"""Synthetic data, Monte-Carlo rate benchmarks and runtime scaling."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import pde
from .dataset import Dataset
from .errors import ValidationError
from .estimators import (derive_hyperparams, estimator_grid, plugin_estimate,
                         psi_flops, runtime_exponent)
from .fixtures import check_constraints, get_fixture, ground_truths
from .frame import cached_frame
from .numerics import Grid, GridField

log = logging.getLogger(__name__)

__all__ = ["Dataset", "simulate", "ground_truths", "forward_truth", "RateConfig",
           "RateTable", "SlopeFit", "rate_benchmark", "runtime_benchmark", "task_seed"]


@lru_cache(maxsize=32)
def forward_truth(model: str, fixture: str, fine_n: int) -> tuple:
    """(u0, f0, g) on the fine data grid, u0 from the finite-difference solver."""
    fx = get_fixture(model, fixture)
    grid = Grid(fx.d, fine_n)
    f0, g = fx.fields(grid)
    check_constraints(model, f0, g)
    if model == "darcy":
        u0 = pde.darcy_solve(pde.DarcyProblem(f0, g))
    else:
        u0 = pde.schrodinger_solve(pde.SchrodingerProblem(f0, g))
    return u0, f0, g


def default_fine_n(d: int, n: int | None = None) -> int:
    n = n if n is not None else (255 if d == 1 else 63)
    return 4 * (n + 1) - 1


def simulate(model: str, fixture: str, N: int, sigma: float = 0.05, seed: int = 0,
             fine_n: int | None = None, estimation_n: int | None = None) -> Dataset:
    """Draw X_i uniformly in the open cube and Y_i = u0(X_i) + sigma * eps_i.

    ``u0`` is solved on a grid with ``fine_n`` intervals minus one, which must
    be at least four times finer than the estimation grid ``estimation_n``.
    """
    if N < 1:
        raise ValidationError(f"N must be positive, got {N}")
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    fx = get_fixture(model, fixture)
    fine_n = default_fine_n(fx.d, estimation_n) if fine_n is None else fine_n
    est_n = estimation_n if estimation_n is not None else (255 if fx.d == 1 else 63)
    if fine_n + 1 < 4 * (est_n + 1):
        raise ValidationError(
            f"data grid n={fine_n} must be at least 4x the estimation grid n={est_n}")
    u0, _, _ = forward_truth(model, fixture, fine_n)
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(N, fx.d))
    while np.any(X <= 0.0):
        bad = np.any(X <= 0.0, axis=1)
        X[bad] = rng.uniform(size=(int(bad.sum()), fx.d))
    eps = rng.standard_normal(N)
    Y = u0.at(X) + sigma * eps
    return Dataset(X, Y, sigma, seed, fine_n, {"model": model, "fixture": fixture})


def task_seed(base_seed: int, N: int, rep: int) -> int:
    return int(np.random.SeedSequence([base_seed, N, rep]).generate_state(1)[0])


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    r2: float
    intercept: float
    conclusive: bool


def fit_slope(x, y, min_r2: float = 0.9) -> SlopeFit:
    """OLS slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(lx, ly)
    r2 = float(res.rvalue**2)
    return SlopeFit(float(res.slope), float(res.stderr), r2, float(res.intercept), r2 >= min_r2)


@dataclass(frozen=True)
class RateConfig:
    model: str = "darcy"
    fixture: str = "smooth"
    N_grid: tuple = (2**9, 2**10, 2**11, 2**12, 2**13, 2**14)
    reps: int = 20
    alpha: int = 3
    d: int = 1
    sigma: float = 0.05
    seed: int = 0
    c_dim: float = 4.0
    n: int | None = None
    fine_n: int | None = None
    jobs: int = 1

    def validate(self, strict: bool = True):
        Ns = list(self.N_grid)
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValidationError("N grid must be strictly increasing")
        if strict:
            if len(Ns) < 4 or Ns[-1] < 8 * Ns[0]:
                raise ValidationError("rate benchmark needs >= 4 sample sizes over >= 3 octaves")
            if self.reps < 10:
                raise ValidationError("rate benchmark needs >= 10 replications")
        n = self.n if self.n is not None else (255 if self.d == 1 else 63)
        fine = self.fine_n if self.fine_n is not None else default_fine_n(self.d, n)
        if fine + 1 < 4 * (n + 1):
            raise ValidationError(
                f"data grid n={fine} must be at least 4x the estimation grid n={n}")


@dataclass
class RateRow:
    N: int
    replications: int
    mse_u: float
    mse_u_se: float
    mse_f: float
    mse_f_se: float
    flops: int
    wall: float


@dataclass
class RateTable:
    model: str
    config: dict
    rows: list
    forward: SlopeFit | None = None
    inverse: SlopeFit | None = None
    theory: dict = field(default_factory=dict)

    COLUMNS = ("N", "replications", "mse_u", "mse_u_se", "mse_f", "mse_f_se", "flops", "wall")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([getattr(r, c) if not isinstance(getattr(r, c), float)
                        else repr(getattr(r, c)) for c in self.COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"model": self.model, "config": self.config,
                "forward": asdict(self.forward) if self.forward else None,
                "inverse": asdict(self.inverse) if self.inverse else None,
                "theory": self.theory}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def theoretical_slopes(model: str, alpha: int, d: int) -> dict:
    s = alpha + 1 if model == "darcy" else alpha + 2
    return {"forward": -2 * s / (2 * s + d), "inverse": -2 * (s - 2) / (2 * s + d),
            "kappa": runtime_exponent(alpha, d)}


def _errors(cfg: RateConfig, N: int, seed: int) -> tuple:
    """One replication: squared L2 errors of u and f on the fine grid, plus flops."""
    fx = get_fixture(cfg.model, cfg.fixture)
    hp = derive_hyperparams(cfg.model, N, cfg.alpha, cfg.d, cfg.c_dim)
    grid = Grid(cfg.d, cfg.n) if cfg.n is not None else estimator_grid(cfg.d, hp.J)
    fine_n = cfg.fine_n if cfg.fine_n is not None else default_fine_n(cfg.d, grid.n)
    data = simulate(cfg.model, cfg.fixture, N, cfg.sigma, seed, fine_n, grid.n)
    _, g = fx.fields(grid)
    frame = cached_frame(grid, hp.J)
    reg, inv = plugin_estimate(data, g, hp, frame)
    u0, f0, _ = forward_truth(cfg.model, cfg.fixture, fine_n)
    fine = u0.grid
    basis = _fine_basis(frame, fine)
    w = fine.weights.ravel()
    du = basis @ reg.eta_hat.entries - u0.values.ravel()
    df = basis @ inv.theta_hat.entries - f0.values.ravel()
    return float(w @ du**2), float(w @ df**2), reg.flops + inv.flops


_FINE_BASIS: dict = {}


def _fine_basis(frame, fine: Grid) -> np.ndarray:
    key = (frame.grid, frame.J, frame.m, fine)
    if key not in _FINE_BASIS:
        _FINE_BASIS[key] = frame.evaluate_basis(fine.points)
    return _FINE_BASIS[key]


def _run_task(args):
    cfg, N, rep = args
    seed = task_seed(cfg.seed, N, rep)
    try:
        return (N, seed) + _errors(cfg, N, seed)
    except Exception as exc:
        raise RuntimeError(f"replication failed for N={N}, seed={seed}: {exc}") from exc


def rate_benchmark(cfg: RateConfig, strict: bool = True) -> RateTable:
    """Monte-Carlo mean squared errors per N and fitted log-log slopes."""
    cfg.validate(strict)
    tasks = [(cfg, N, rep) for N in cfg.N_grid for rep in range(cfg.reps)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    rows = []
    t0 = time.perf_counter()
    for N in cfg.N_grid:
        res = sorted((r for r in results if r[0] == N), key=lambda r: r[1])
        eu = np.array([r[2] for r in res])
        ef = np.array([r[3] for r in res])
        se = (lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else float("nan"))
        rows.append(RateRow(N, len(res), float(eu.mean()), se(eu), float(ef.mean()), se(ef),
                            int(res[0][4]), 0.0))
    wall = time.perf_counter() - t0
    log.debug("aggregated %d replications in %.3fs", len(results), wall)
    Ns = [r.N for r in rows]
    table = RateTable(cfg.model, _config_dict(cfg), rows,
                      fit_slope(Ns, [r.mse_u for r in rows]),
                      fit_slope(Ns, [r.mse_f for r in rows]),
                      theoretical_slopes(cfg.model, cfg.alpha, cfg.d))
    return table


def _config_dict(cfg: RateConfig) -> dict:
    out = asdict(cfg)
    out["N_grid"] = list(cfg.N_grid)
    out.pop("jobs")
    return out


@dataclass
class RuntimeTable:
    model: str
    config: dict
    rows: list  # (N, p, flops, wall)
    flop_slope: SlopeFit
    wall_slope: SlopeFit
    kappa: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("N", "p", "flops", "wall"))
        for N, p, fl, wall in self.rows:
            w.writerow((N, p, fl, repr(wall)))
        return buf.getvalue()

    def summary(self) -> dict:
        return {"model": self.model, "config": self.config, "kappa": self.kappa,
                "flop_slope": asdict(self.flop_slope), "wall_slope": asdict(self.wall_slope),
                "flop_ratios": [b[2] / a[2] for a, b in zip(self.rows, self.rows[1:])]}


def runtime_benchmark(cfg: RateConfig) -> RuntimeTable:
    """Flop counts and wall time of one plug-in fit per N."""
    cfg.validate(strict=False)
    rows = []
    for N in cfg.N_grid:
        hp = derive_hyperparams(cfg.model, N, cfg.alpha, cfg.d, cfg.c_dim)
        grid = Grid(cfg.d, cfg.n) if cfg.n is not None else estimator_grid(cfg.d, hp.J)
        fine_n = cfg.fine_n if cfg.fine_n is not None else default_fine_n(cfg.d, grid.n)
        data = simulate(cfg.model, cfg.fixture, N, cfg.sigma, task_seed(cfg.seed, N, 0),
                        fine_n, grid.n)
        _, g = get_fixture(cfg.model, cfg.fixture).fields(grid)
        frame = cached_frame(grid, hp.J)
        t0 = time.perf_counter()
        reg, inv = plugin_estimate(data, g, hp, frame)
        rows.append((N, frame.p, reg.flops + inv.flops, time.perf_counter() - t0))
    Ns = [r[0] for r in rows]
    return RuntimeTable(cfg.model, _config_dict(cfg), rows,
                        fit_slope(Ns, [r[2] for r in rows], 0.0),
                        fit_slope(Ns, [r[3] for r in rows], 0.0),
                        runtime_exponent(cfg.alpha, cfg.d))


__all__ += ["RuntimeTable", "fit_slope", "theoretical_slopes", "psi_flops", "GridField"]
