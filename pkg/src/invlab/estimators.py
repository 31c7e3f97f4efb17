"""Penalized M-estimators for the Darcy and Schrodinger inverse problems.

The plug-in estimator is two ridge-type least-squares problems in frame
coordinates: a penalized regression for ``u`` from point data, followed by a
linear least-squares fit of the coefficient ``f`` to the PDE residual of the
fitted ``u``.  No forward solve is ever performed here; the PDE enters only
through the differential operator applied to frame elements.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from . import pde
from .dataset import Dataset
from .errors import NumericalError, ValidationError
from .frame import (CoefficientVector, Frame, cached_frame, design_matrix,
                    resolution_level, select)
from .numerics import Grid, GridField, discrete_norm

log = logging.getLogger(__name__)

MODELS = ("darcy", "schrodinger")
NORMAL_RTOL = 1e-10


@dataclass(frozen=True)
class Hyperparameters:
    model: str
    alpha: int
    d: int
    N: int
    lam: float
    mu: float
    nu: float
    J: int
    c_dim: float

    @property
    def u_order(self) -> int:
        """Sobolev order penalizing u in the regression step."""
        return self.alpha + (1 if self.model == "darcy" else 2)

    @property
    def kappa(self) -> float:
        return runtime_exponent(self.alpha, self.d)


def runtime_exponent(alpha: float, d: int) -> float:
    return 1.0 + 2.0 * d / (2 * (alpha + 1) + d)


def derive_hyperparams(model: str, N: int, alpha: int, d: int = 1,
                       c_dim: float = 4.0) -> Hyperparameters:
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; expected one of {MODELS}")
    if N < 2:
        raise ValidationError(f"sample size must be at least 2, got {N}")
    if alpha < 2:
        raise ValidationError(f"smoothness alpha must be >= 2, got {alpha}")
    if int(d) != d or d < 1:
        raise ValidationError(f"dimension must be a positive integer, got {d}")
    s = alpha + 1 if model == "darcy" else alpha + 2
    denom = 2 * s + d
    lam = N ** (-2.0 / denom)
    mu = N ** (-s / denom)
    nu = N ** (-(s - 2) / denom)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        J = resolution_level(N, alpha, d, c_dim, smoothness=s)
    if alpha <= d / 2 + 1:
        warnings.warn(f"alpha={alpha} <= d/2 + 1: outside the regime covered by the rate theory",
                      stacklevel=2)
    return Hyperparameters(model, alpha, d, N, lam, mu, nu, J, c_dim)


@dataclass(frozen=True, eq=False)
class RegressionFit:
    eta_hat: CoefficientVector
    u_hat: GridField
    empirical_rss: float
    penalty: float
    objective: float
    exponent: float
    flops: int
    wall_time: float


@dataclass(frozen=True, eq=False)
class InversionFit:
    theta_hat: CoefficientVector
    f_hat: GridField
    pde_residual: float
    objective: float
    flops: int
    wall_time: float


def estimator_grid(d: int, J: int) -> Grid:
    """Default estimation grid: n = 255 in 1-D, 63 in 2-D, refined if J needs it."""
    n = 255 if d == 1 else 63
    while n + 1 < 2 ** (J + 3):
        n = 2 * n + 1
    return Grid(d, n)


def _backward_residual(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> float:
    """Normwise relative residual |Ax - b| / (|A| |x| + |b|)."""
    denom = np.linalg.norm(A, 2) * np.linalg.norm(x) + np.linalg.norm(b)
    return float(np.linalg.norm(A @ x - b) / denom) if denom > 0 else 0.0


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve of symmetric positive-definite normal equations."""
    A = 0.5 * (A + A.T)
    try:
        x = sla.cho_solve(sla.cho_factor(A, lower=True), b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("normal equations not positive definite",
                             condition=float(np.linalg.cond(A))) from exc
    res = _backward_residual(A, x, b)
    if res > NORMAL_RTOL:
        raise NumericalError("normal-equation residual above tolerance", residual=res,
                             condition=float(np.linalg.cond(A)))
    return x


def ridge_solve(M: np.ndarray, y: np.ndarray, reg: np.ndarray) -> np.ndarray:
    """argmin |M x - y|^2 + x' diag(reg) x.

    Cholesky on the normal equations first; if they are numerically singular
    the stacked least-squares problem is solved by QR instead.
    """
    A = M.T @ M + np.diag(reg)
    b = M.T @ y
    try:
        return solve_spd(A, b)
    except NumericalError:
        pass
    stacked = np.vstack([M, np.diag(np.sqrt(reg))])
    rhs = np.concatenate([y, np.zeros(reg.size)])
    x = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
    res = _backward_residual(A, x, b)
    if res > NORMAL_RTOL:
        raise NumericalError("normal-equation residual above tolerance", residual=res,
                             condition=float(np.linalg.cond(A)))
    return x


def _check_frame(frame: Frame, hp: Hyperparameters):
    if frame.d != hp.d:
        raise ValidationError(f"frame dimension {frame.d} != hyperparameter dimension {hp.d}")


def fit_regression(dataset: Dataset, frame: Frame, hp: Hyperparameters,
                   exponent: float | None = None, mu: float | None = None) -> RegressionFit:
    """Minimize (1/N)|Y - Phi eta|^2 + mu^2 eta' Lambda^s eta."""
    _check_frame(frame, hp)
    if dataset.d != frame.d:
        raise ValidationError("dataset and frame dimensions differ")
    N = dataset.N
    if N < 1:
        raise ValidationError("regression needs at least one observation")
    s = hp.u_order if exponent is None else exponent
    mu = hp.mu if mu is None else mu
    t0 = time.perf_counter()
    Phi = design_matrix(frame, dataset.X)
    w = frame.level_weights(s)
    eta = ridge_solve(Phi, dataset.Y, N * mu**2 * w)
    fitted = Phi @ eta
    rss = float(np.sum((dataset.Y - fitted) ** 2) / N)
    pen = float(eta @ (w * eta))
    p = frame.p
    flops = N * p * p + N * p + p**3 // 3
    return RegressionFit(frame.vector(eta), GridField(frame.grid, eta @ frame.samples),
                         rss, pen, rss + mu**2 * pen, s, int(flops),
                         time.perf_counter() - t0)


# -- operator images of frame elements -------------------------------------

def _field_derivatives(frame: Frame, u) -> tuple:
    """(values, gradient, laplacian) of a frame expansion on the grid."""
    c = frame.coefficients(u)
    vals = c @ frame.samples
    grad = np.stack([c @ frame.gradients[a] for a in range(frame.d)])
    lap = c @ frame.laplacians
    return vals, grad, lap


def operator_columns(frame: Frame, u, model: str) -> tuple:
    """Pointwise images needed for the inversion step.

    Returns ``(cols, base)`` with ``cols[k] = L_{phi_k} u - L_0 u`` and
    ``base = L_0 u`` sampled at every grid node.  ``u`` is a coefficient
    vector; derivatives of frame elements and of ``u`` are exact.
    """
    vals, grad, lap = _field_derivatives(frame, u)
    if model == "darcy":
        cols = np.einsum("apx,ax->px", frame.gradients, grad) + frame.samples * lap
        return cols, np.zeros_like(vals)
    if model == "schrodinger":
        return -frame.samples * vals, 0.5 * lap
    raise ValidationError(f"unknown model {model!r}")


def build_psi(frame: Frame, u_hat, model: str = "darcy") -> np.ndarray:
    """Psi with column k equal to S(L_{phi_k} u - L_0 u).

    ``u_hat`` may be a coefficient vector (exact product-rule derivatives) or a
    grid field, in which case the finite-difference operators of
    :mod:`invlab.pde` are applied to every frame element.
    """
    if isinstance(u_hat, GridField):
        if u_hat.grid != frame.grid:
            raise ValidationError(f"grid mismatch: {u_hat.grid} vs frame grid {frame.grid}")
        cols = np.empty_like(frame.samples)
        zero = frame.grid.zeros()
        for k in range(frame.p):
            phi = frame.basis_field(k)
            if model == "darcy":
                cols[k] = pde.darcy_apply(phi, u_hat).values.ravel()
            elif model == "schrodinger":
                cols[k] = (pde.schrodinger_apply(phi, u_hat)
                           - pde.schrodinger_apply(zero, u_hat)).values.ravel()
            else:
                raise ValidationError(f"unknown model {model!r}")
    else:
        cols, _ = operator_columns(frame, u_hat, model)
    return frame.selection @ cols.T


def inversion_target(frame: Frame, u_hat, g: GridField | None, model: str) -> CoefficientVector:
    """gamma = S(g - L_0 u); the Schrodinger interior target is zero."""
    if isinstance(u_hat, GridField):
        base = (0.5 * pde.laplacian(u_hat).values.ravel() if model == "schrodinger"
                else np.zeros(frame.grid.size))
    else:
        _, base = operator_columns(frame, u_hat, model)
    target = np.zeros(frame.grid.size)
    if model == "darcy":
        if g is None:
            raise ValidationError("Darcy inversion needs the source term g")
        if g.grid != frame.grid:
            raise ValidationError(f"grid mismatch: {g.grid} vs frame grid {frame.grid}")
        target = g.values.ravel()
    return frame.vector(frame.selection @ (target - base))


def pde_residual(model: str, f: GridField, u: GridField, g: GridField | None) -> float:
    """Discrete L2 norm of L_f u - g over interior nodes."""
    if model == "darcy":
        r = pde.darcy_apply(f, u) - (g.interior_only() if g is not None else 0.0)
    else:
        r = pde.schrodinger_apply(f, u)
    return discrete_norm(r.interior_only(), "L2")


def fit_inversion(frame: Frame, psi: np.ndarray, target_gamma, hp: Hyperparameters,
                  u_hat: GridField | None = None, g: GridField | None = None,
                  exponent: float | None = None, nu: float | None = None) -> InversionFit:
    """Minimize |Psi theta - gamma|^2 + nu^2 theta' Lambda^alpha theta."""
    _check_frame(frame, hp)
    nu = hp.nu if nu is None else nu
    if nu <= 0:
        raise ValidationError("inversion regularization nu must be positive")
    s = hp.alpha if exponent is None else exponent
    gamma = frame.coefficients(target_gamma)
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (frame.p, frame.p):
        raise ValidationError(f"Psi has shape {psi.shape}, expected {(frame.p, frame.p)}")
    t0 = time.perf_counter()
    w = frame.level_weights(s)
    theta = ridge_solve(psi, gamma, nu**2 * w)
    f_hat = GridField(frame.grid, theta @ frame.samples)
    r = psi @ theta - gamma
    obj = float(r @ r + nu**2 * theta @ (w * theta))
    res = pde_residual(hp.model, f_hat, u_hat, g) if u_hat is not None else float("nan")
    p = frame.p
    flops = p**3 + p * p + p**3 // 3
    return InversionFit(frame.vector(theta), f_hat, res, obj, int(flops),
                        time.perf_counter() - t0)


def psi_flops(frame: Frame) -> int:
    """Cost of forming the operator images and applying the selection matrix."""
    p, size = frame.p, frame.grid.size
    return int(p * p * size + (2 * frame.d + 2) * p * size)


def plugin_estimate(dataset: Dataset, g: GridField | None, hp: Hyperparameters,
                    frame: Frame | None = None) -> tuple:
    """Two-stage estimate: penalized regression for u, then least-squares inversion for f."""
    if dataset.N != hp.N:
        raise ValidationError(f"dataset has N={dataset.N} but hyperparameters use N={hp.N}")
    if frame is None:
        grid = g.grid if g is not None else estimator_grid(hp.d, hp.J)
        frame = cached_frame(grid, hp.J)
    if frame.J != hp.J:
        raise ValidationError(f"frame level {frame.J} != resolution level {hp.J}")
    reg = fit_regression(dataset, frame, hp)
    t0 = time.perf_counter()
    psi = build_psi(frame, reg.eta_hat, hp.model)
    gamma = inversion_target(frame, reg.eta_hat, g, hp.model)
    t_psi = time.perf_counter() - t0
    inv = fit_inversion(frame, psi, gamma, hp, reg.u_hat, g)
    inv = InversionFit(inv.theta_hat, inv.f_hat, inv.pde_residual, inv.objective,
                       inv.flops + psi_flops(frame), inv.wall_time + t_psi)
    return reg, inv


# -- joint PDE-penalized estimator -----------------------------------------

def _residual_weights(grid: Grid) -> np.ndarray:
    return (grid.weights * grid.interior).ravel()


def _u_operator(frame: Frame, theta, model: str) -> np.ndarray:
    """Matrix M with M @ eta = L_{f_theta} u_eta at every node."""
    fv, fgrad, _ = _field_derivatives(frame, theta)
    if model == "darcy":
        M = np.einsum("ax,apx->px", fgrad, frame.gradients) + fv * frame.laplacians
    else:
        M = 0.5 * frame.laplacians - fv * frame.samples
    return M.T


def _f_operator(frame: Frame, eta, model: str) -> tuple:
    cols, base = operator_columns(frame, eta, model)
    return cols.T, base


@dataclass(frozen=True, eq=False)
class JointObjective:
    """Objective of the PDE-penalized M-estimator in frame coordinates."""
    frame: Frame
    Phi: np.ndarray
    Y: np.ndarray
    target: np.ndarray
    model: str
    lam: float
    mu: float
    u_order: float
    f_order: float

    def parts(self, eta, theta) -> dict:
        q = _residual_weights(self.frame.grid)
        fit = float(np.mean((self.Y - self.Phi @ eta) ** 2))
        r = _u_operator(self.frame, theta, self.model) @ eta - self.target
        pde_term = float(np.sum(q * r * r))
        pen = float(eta @ (self.frame.level_weights(self.u_order) * eta)
                    + theta @ (self.frame.level_weights(self.f_order) * theta))
        return {"fit": fit, "pde": pde_term, "penalty": pen,
                "total": fit + self.lam**2 * pde_term + self.mu**2 * pen}

    def __call__(self, eta, theta) -> float:
        return self.parts(eta, theta)["total"]

    def u_step(self, theta) -> np.ndarray:
        q = _residual_weights(self.frame.grid)
        N = self.Y.size
        M = _u_operator(self.frame, theta, self.model)
        A = (self.Phi.T @ self.Phi / N + self.lam**2 * (M.T * q) @ M
             + self.mu**2 * np.diag(self.frame.level_weights(self.u_order)))
        b = self.Phi.T @ self.Y / N + self.lam**2 * (M.T * q) @ self.target
        return solve_spd(A, b)

    def f_step(self, eta) -> np.ndarray:
        q = _residual_weights(self.frame.grid)
        P, base = _f_operator(self.frame, eta, self.model)
        A = (self.lam**2 * (P.T * q) @ P
             + self.mu**2 * np.diag(self.frame.level_weights(self.f_order)))
        b = self.lam**2 * (P.T * q) @ (self.target - base)
        return solve_spd(A, b)


def joint_objective(dataset: Dataset, g: GridField | None, hp: Hyperparameters,
                    frame: Frame, lam: float | None = None) -> JointObjective:
    target = np.zeros(frame.grid.size)
    if hp.model == "darcy":
        if g is None:
            raise ValidationError("Darcy joint estimator needs the source term g")
        target = g.values.ravel().astype(float)
    return JointObjective(frame, design_matrix(frame, dataset.X), dataset.Y, target, hp.model,
                          hp.lam if lam is None else lam, hp.mu, hp.u_order, hp.alpha)


def joint_pde_penalized(dataset: Dataset, g: GridField | None, hp: Hyperparameters,
                        iters: int = 50, tol: float = 1e-10, frame: Frame | None = None,
                        f_init: float = 1.0, lam: float | None = None) -> tuple:
    """Alternating exact minimization of the joint objective over u and f.

    Returns ``(u_hat, f_hat, trace)`` where ``trace`` holds the objective at the
    initial point and after every half-step.
    """
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if frame is None:
        grid = g.grid if g is not None else estimator_grid(hp.d, hp.J)
        frame = cached_frame(grid, hp.J)
    obj = joint_objective(dataset, g, hp, frame, lam)
    eta = fit_regression(dataset, frame, hp).eta_hat.entries
    theta = select(frame, frame.grid.field(f_init)).entries
    trace = [obj(eta, theta)]

    def record(value):
        prev = trace[-1]
        if value > prev + 1e-12 * max(1.0, abs(prev)):
            raise NumericalError("joint objective increased during block minimization",
                                 previous=prev, current=value)
        trace.append(value)

    for it in range(iters):
        start = trace[-1]
        eta = obj.u_step(theta)
        record(obj(eta, theta))
        theta = obj.f_step(eta)
        record(obj(eta, theta))
        if start - trace[-1] <= tol * max(abs(start), 1e-300):
            break
    log.debug("joint estimator stopped after %d sweeps, objective %.6g", it + 1, trace[-1])
    u_hat = GridField(frame.grid, eta @ frame.samples)
    f_hat = GridField(frame.grid, theta @ frame.samples)
    return u_hat, f_hat, trace


# -- adaptive estimator ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdaptiveResult:
    beta_hat: int
    regression: RegressionFit
    inversion: InversionFit
    scores: dict
    frame: Frame


def adaptive_mu(N: int, beta: float, d: int) -> float:
    return N ** (-beta / (2 * beta + d))


def adaptive_estimate(dataset: Dataset, g: GridField | None, beta_min: int, beta_max: int,
                      A: float = 1.0, alpha_min: int = 2, c_dim: float = 4.0,
                      model: str = "darcy") -> AdaptiveResult:
    """Select the smoothness beta by penalized empirical risk, then invert once."""
    if beta_max < beta_min:
        raise ValidationError(f"empty smoothness range [{beta_min}, {beta_max}]")
    if beta_min < 2:
        raise ValidationError("beta_min must be at least 2")
    if A <= 0:
        raise ValidationError("offset A must be positive")
    N, d = dataset.N, dataset.d
    base_grid = g.grid if g is not None else None
    scores, fits = {}, {}
    for beta in range(beta_min, beta_max + 1):
        mu = adaptive_mu(N, beta, d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            J = resolution_level(N, beta, d, c_dim, smoothness=beta)
        grid = base_grid or estimator_grid(d, J)
        frame = cached_frame(grid, J)
        hp = Hyperparameters(model, alpha_min, d, N, float("nan"), mu, float("nan"), J, c_dim)
        fit = fit_regression(dataset, frame, hp, exponent=beta, mu=mu)
        scores[beta] = fit.empirical_rss + mu**2 * (fit.penalty + A**2)
        fits[beta] = (fit, frame, hp)
    best = min(scores.values())
    beta_hat = max(b for b, v in scores.items() if v <= best)
    fit, frame, hp = fits[beta_hat]
    nu = N ** (-(beta_hat - 2) / (2 * beta_hat + d))
    psi = build_psi(frame, fit.eta_hat, model)
    gamma = inversion_target(frame, fit.eta_hat, g, model)
    inv = fit_inversion(frame, psi, gamma, hp, fit.u_hat, g, exponent=alpha_min, nu=nu)
    return AdaptiveResult(beta_hat, fit, inv, scores, frame)


# -- reports ---------------------------------------------------------------

def fit_report(hp: Hyperparameters, reg: RegressionFit, inv: InversionFit | None,
               seed=None, **extra) -> dict:
    out = {"hyperparameters": asdict(hp), "seed": seed,
           "regression": {"empirical_rss": reg.empirical_rss, "penalty": reg.penalty,
                          "objective": reg.objective, "exponent": reg.exponent,
                          "flops": reg.flops, "wall_time": reg.wall_time,
                          "u_hat_L2": discrete_norm(reg.u_hat, "L2")}}
    if inv is not None:
        out["inversion"] = {"pde_residual": inv.pde_residual, "objective": inv.objective,
                            "flops": inv.flops, "wall_time": inv.wall_time,
                            "f_hat_L2": discrete_norm(inv.f_hat, "L2"),
                            "f_hat_min": inv.f_hat.min()}
        out["total_flops"] = reg.flops + inv.flops
    out.update(extra)
    return json.loads(json.dumps(out, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    raise TypeError(f"not serializable: {type(obj)}")
