"""Gaussian-prior posterior for the Darcy coefficient, warm start and ULA.

The coefficient is parametrized as ``f = link(sum_k theta_k e_k)`` with
``e_k`` the Dirichlet-Laplacian eigenfunctions and a shifted softplus link,
so every ``theta`` gives a uniformly elliptic coefficient.  Log-posterior
gradients use the adjoint-state method: one forward and one adjoint solve
sharing a single factorization.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from . import pde
from .dataset import Dataset
from .errors import NumericalError, ValidationError
from .numerics import Grid, GridField, interpolation_matrix

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True, eq=False)
class EigenBasis:
    grid: Grid
    D: int
    values: np.ndarray   # (D, grid.size)
    lam: np.ndarray      # (D,)
    modes: tuple         # frequency tuple per basis function

    def e(self, k: int) -> GridField:
        """k-th eigenfunction, 1-based."""
        if not 1 <= k <= self.D:
            raise ValidationError(f"eigenfunction index {k} outside 1..{self.D}")
        return GridField(self.grid, self.values[k - 1])

    def expand(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) @ self.values


def eigen_basis(grid: Grid, D: int) -> EigenBasis:
    """Dirichlet-Laplacian eigenpairs on the unit cube, sorted by eigenvalue."""
    if D < 1:
        raise ValidationError("basis size D must be positive")
    if grid.d == 1:
        modes = [(k,) for k in range(1, D + 1)]
    else:
        kmax = int(np.ceil(np.sqrt(D))) + 1
        cand = [(j, k) for j in range(1, kmax + D) for k in range(1, kmax + D)]
        modes = sorted(cand, key=lambda m: sum(c * c for c in m))[:D]
    if max(max(m) for m in modes) > grid.n:
        raise ValidationError(f"grid with n={grid.n} cannot resolve {D} eigenfunctions")
    vals = []
    for m in modes:
        v = np.ones(grid.shape)
        for axis, c in enumerate(m):
            v = v * np.sqrt(2.0) * np.sin(c * np.pi * grid.mesh[axis])
        vals.append(v.ravel())
    lam = np.array([np.pi**2 * sum(c * c for c in m) for m in modes])
    return EigenBasis(grid, D, np.array(vals), lam, tuple(modes))


@dataclass(frozen=True, eq=False)
class PriorSpec:
    D: int
    alpha: float
    N: int
    sigma_diag: np.ndarray

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.sigma_diag


def prior_spec(basis: EigenBasis, alpha: float, N: int) -> PriorSpec:
    """Rescaled Gaussian prior with covariance N^(-d/(2 alpha + d)) diag(lam_k^(-alpha))."""
    d = basis.grid.d
    scale = max(N, 1) ** (-d / (2 * alpha + d))
    return PriorSpec(basis.D, alpha, N, scale * basis.lam ** (-float(alpha)))


@dataclass(frozen=True)
class LinkFunction:
    """Shifted softplus f = f_min + log(1 + exp(z))."""
    f_min: float = 0.1

    def __call__(self, z):
        return self.f_min + np.logaddexp(0.0, z)

    def derivative(self, z):
        return expit(z)

    def invert(self, f):
        y = np.asarray(f, dtype=float) - self.f_min
        if np.any(y <= 0):
            raise ValidationError("link inverse needs values above the floor")
        # log(expm1(y)) written to avoid overflow for large y
        return y + np.log(-np.expm1(-y))


def warm_start(f_hat: GridField, basis: EigenBasis, link: LinkFunction,
               clamp_margin: float = 0.05, D: int | None = None) -> np.ndarray:
    """Coefficients of link^{-1}(f_hat) in the eigenbasis, after clamping f_hat above the floor."""
    D = basis.D if D is None else D
    if D > basis.D:
        raise ValidationError(f"D={D} exceeds basis size {basis.D}")
    if f_hat.grid != basis.grid:
        raise ValidationError(f"grid mismatch: {f_hat.grid} vs {basis.grid}")
    if clamp_margin <= 0:
        raise ValidationError("clamp margin must be positive")
    clamped = np.maximum(f_hat.values.ravel(), link.f_min + clamp_margin)
    z = link.invert(clamped)
    w = basis.grid.weights.ravel()
    return basis.values[:D] @ (w * z)


class DarcyPosterior:
    """log pi(theta | data) up to a constant, with adjoint or finite-difference gradient."""

    def __init__(self, dataset: Dataset, g: GridField, basis: EigenBasis, link: LinkFunction,
                 prior: PriorSpec, noise: float | None = None):
        if g.grid != basis.grid:
            raise ValidationError("source term and eigenbasis live on different grids")
        if dataset.N and dataset.d != basis.grid.d:
            raise ValidationError("dataset and grid dimensions differ")
        if prior.D != basis.D:
            raise ValidationError("prior and basis sizes differ")
        noise = dataset.sigma if noise is None else noise
        if dataset.N and noise <= 0:
            raise ValidationError("likelihood needs a positive noise level")
        self.dataset, self.g, self.basis, self.link, self.prior = dataset, g, basis, link, prior
        self.noise = noise
        self.grid = basis.grid
        self._P = interpolation_matrix(self.grid, dataset.X) if dataset.N else None

    def coefficient(self, theta) -> GridField:
        return GridField(self.grid, self.link(self.basis.expand(theta)))

    def forward(self, theta) -> tuple:
        f = self.coefficient(theta)
        factor, inner = pde.darcy_factor(f)
        u = np.zeros(self.grid.size)
        u[inner] = -factor.solve(self.g.values.ravel()[inner])
        return f, GridField(self.grid, u), factor, inner

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        val = -0.5 * float(theta @ (self.prior.precision * theta))
        if self._P is not None:
            _, u, _, _ = self.forward(theta)
            r = self.dataset.Y - self._P @ u.values.ravel()
            val += -0.5 * float(r @ r) / self.noise**2
        return val

    def value_and_grad(self, theta, mode: str = "adjoint") -> tuple:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be finite")
        if mode == "finite-difference":
            return self.value(theta), self._fd_grad(theta)
        if mode != "adjoint":
            raise ValidationError(f"unknown gradient mode {mode!r}")
        val = -0.5 * float(theta @ (self.prior.precision * theta))
        grad = -self.prior.precision * theta
        if self._P is None:
            return val, grad
        z = self.basis.expand(theta)
        f, u, factor, inner = self.forward(theta)
        r = self.dataset.Y - self._P @ u.values.ravel()
        val += -0.5 * float(r @ r) / self.noise**2
        adj = factor.solve((self._P.T @ r)[inner]) / self.noise**2
        dlink = self.link.derivative(z)
        for k in range(self.basis.D):
            df = GridField(self.grid, dlink * self.basis.values[k])
            grad[k] += adj @ pde.darcy_apply(df, u).values.ravel()[inner]
        return val, grad

    def _fd_grad(self, theta) -> np.ndarray:
        grad = np.empty_like(theta)
        for j in range(theta.size):
            h = 1e-5 * (1.0 + abs(theta[j]))
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            grad[j] = (self.value(tp) - self.value(tm)) / (2 * h)
        return grad

    def __call__(self, theta):
        return self.value_and_grad(theta)


def log_posterior_grad(theta, dataset: Dataset, g: GridField, basis: EigenBasis,
                       link: LinkFunction, prior: PriorSpec,
                       gradient_mode: str = "adjoint") -> tuple:
    return DarcyPosterior(dataset, g, basis, link, prior).value_and_grad(theta, gradient_mode)


def curvature_estimate(target: Callable, theta, iters: int = 20, eps: float = 1e-4,
                       seed: int = 0) -> float:
    """Largest eigenvalue of the negative log-density Hessian by power iteration."""
    theta = np.asarray(theta, dtype=float)
    v = np.random.default_rng(seed).standard_normal(theta.shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        hv = -(target(theta + eps * v)[1] - target(theta - eps * v)[1]) / (2 * eps)
        est = float(np.linalg.norm(hv))
        if est == 0:
            break
        v = hv / est
    return est


@dataclass(frozen=True)
class UlaConfig:
    steps: int = 10_000
    delta: float | None = None
    seed: int = 0
    burn_in_frac: float = 0.2
    step_fraction: float = 0.5


@dataclass(frozen=True, eq=False)
class UlaChain:
    theta_samples: np.ndarray
    delta: float
    burn_in: int
    seed: int
    gradient_mode: str = "adjoint"
    meta: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.theta_samples.shape[-1]


def ula_run(theta_init, target: Callable, config: UlaConfig = UlaConfig(),
            gradient_mode: str = "adjoint") -> UlaChain:
    """theta <- theta + delta * grad log pi(theta) + sqrt(2 delta) xi.

    ``target(theta)`` returns ``(log density, gradient)``; ``theta_init`` may
    carry leading batch dimensions when the target is vectorized.
    """
    if config.steps < 1:
        raise ValidationError("chain needs at least one step")
    theta = np.array(theta_init, dtype=float)
    delta = config.delta
    if delta is None:
        L = curvature_estimate(target, theta, seed=config.seed)
        if not L > 0:
            raise NumericalError("could not estimate a positive curvature for the step size")
        delta = config.step_fraction / L
    if delta <= 0:
        raise ValidationError("step size must be positive")
    rng = np.random.default_rng(config.seed)
    out = np.empty((config.steps,) + theta.shape)
    scale = np.sqrt(2.0 * delta)
    for i in range(config.steps):
        _, grad = target(theta)
        theta = theta + delta * grad + scale * rng.standard_normal(theta.shape)
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_NORM:
            raise NumericalError("Langevin chain diverged", step=i, delta=delta,
                                 norm=float(np.linalg.norm(theta)))
        out[i] = theta
    burn = int(config.burn_in_frac * config.steps)
    return UlaChain(out, float(delta), burn, config.seed, gradient_mode)


def posterior_mean(chain: UlaChain | np.ndarray, burn_in: int | None = None) -> np.ndarray:
    samples = chain.theta_samples if isinstance(chain, UlaChain) else np.asarray(chain, float)
    if burn_in is None:
        burn_in = chain.burn_in if isinstance(chain, UlaChain) else 0
    if not 0 <= burn_in < samples.shape[0]:
        raise ValidationError(f"burn-in {burn_in} leaves an empty averaging window")
    return samples[burn_in:].mean(axis=0)


def batch_means_stderr(samples: np.ndarray, batches: int = 20) -> np.ndarray:
    """Monte-Carlo standard error of the mean by non-overlapping batch means."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0] // batches * batches
    if n < batches or batches < 2:
        raise ValidationError("not enough samples for batch means")
    means = samples[:n].reshape((batches, n // batches) + samples.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def chain_to_csv(chain: UlaChain) -> str:
    buf = io.StringIO()
    buf.write(f"# D={chain.D},delta={chain.delta!r},seed={chain.seed},burn_in={chain.burn_in}\n")
    buf.write(",".join(f"theta_{k + 1}" for k in range(chain.D)) + "\n")
    for row in chain.theta_samples.reshape(chain.theta_samples.shape[0], -1):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def chain_summary(chain: UlaChain, **extra) -> dict:
    post = chain.theta_samples[chain.burn_in:]
    return {"D": chain.D, "delta": chain.delta, "seed": chain.seed, "burn_in": chain.burn_in,
            "steps": int(chain.theta_samples.shape[0]),
            "gradient_mode": chain.gradient_mode,
            "posterior_mean": posterior_mean(chain).tolist(),
            "stderr": batch_means_stderr(post).tolist(), **extra}


def summary_to_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
