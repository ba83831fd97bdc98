"""Gaussian-process model for the unobserved flow width.

The width on the quadrature grid is multivariate normal with a Matern
(nu = 3/2) covariance plus a nugget on the diagonal.  The mean function is
derived from the physics with A = 0 and a plug-in width candidate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla

from .core import FlowlineGrid, PhysicalConstants, Series, ValidationError, linear_interp
from .dynamics import DynamicsParams, cumulative_flux
from .smoothing import SurfaceFields

SQRT3 = math.sqrt(3.0)
JITTER_START = 1e-8
JITTER_CAP = 1e-2


class FactorizationError(np.linalg.LinAlgError):
    """Covariance could not be made positive definite within the jitter cap."""


@dataclass(frozen=True)
class WidthHyperparams:
    sigma2_omega: float
    phi: float = 40_000.0
    tau2: float = 0.0
    nu: float = 1.5

    def __post_init__(self):
        if not self.sigma2_omega > 0:
            raise ValidationError("sigma2_omega must be positive")
        if not self.phi > 0:
            raise ValidationError("phi must be positive")
        if not self.tau2 >= 0:
            raise ValidationError("tau2 must be nonnegative")
        if self.nu != 1.5:
            raise ValidationError("only the nu = 1.5 Matern covariance is supported")

    def replace(self, **kw) -> "WidthHyperparams":
        vals = dict(sigma2_omega=self.sigma2_omega, phi=self.phi, tau2=self.tau2)
        vals.update(kw)
        return WidthHyperparams(**vals)


@dataclass(frozen=True, eq=False)
class WidthModel:
    hyper: WidthHyperparams
    quad_x: np.ndarray
    mean_at_quad: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quad_x, dtype=float)
        m = np.asarray(self.mean_at_quad, dtype=float)
        if q.shape != m.shape:
            raise ValidationError("mean function must be given on quad_x")
        if np.any(m <= 0):
            raise ValidationError("width mean function must be positive")
        object.__setattr__(self, "quad_x", q)
        object.__setattr__(self, "mean_at_quad", m)

    def mean_at(self, locations) -> np.ndarray:
        return np.interp(np.asarray(locations, dtype=float), self.quad_x, self.mean_at_quad)

    def with_hyper(self, **kw) -> "WidthModel":
        return WidthModel(self.hyper.replace(**kw), self.quad_x, self.mean_at_quad)


def matern_correlation(d):
    """Matern 3/2 correlation at scaled distance d / phi (no nugget)."""
    r = SQRT3 * np.abs(d)
    return (1.0 + r) * np.exp(-r)


def matern32_cov(d, hyper: WidthHyperparams):
    """Covariance at separation d; the nugget applies only at d == 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValidationError("distance must be nonnegative")
    cov = hyper.sigma2_omega * matern_correlation(d / hyper.phi)
    return np.where(d == 0, hyper.sigma2_omega + hyper.tau2, cov)


def _raw_cov(locations, hyper: WidthHyperparams) -> np.ndarray:
    x = np.asarray(locations, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValidationError("locations must be finite")
    d = np.abs(x[:, None] - x[None, :])
    # Nugget goes on the diagonal by index, so coincident distinct points stay correlated.
    cov = hyper.sigma2_omega * matern_correlation(d / hyper.phi)
    cov[np.diag_indices_from(cov)] += hyper.tau2
    return cov


def cov_cholesky(locations, hyper: WidthHyperparams, jitter: float = 0.0):
    """Lower Cholesky factor, escalating diagonal jitter if needed.

    Returns ``(L, jitter_used)``.
    """
    cov = _raw_cov(locations, hyper)
    n = cov.shape[0]
    candidates = [jitter]
    j = JITTER_START * hyper.sigma2_omega
    while j <= JITTER_CAP * hyper.sigma2_omega * (1 + 1e-12):
        if j > jitter:
            candidates.append(j)
        j *= 10.0
    for jit in candidates:
        try:
            L = np.linalg.cholesky(cov + jit * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        return L, jit
    raise FactorizationError("covariance not positive definite even with maximum jitter")


def build_cov_matrix(locations, hyper: WidthHyperparams, jitter: float = 0.0) -> np.ndarray:
    """Covariance matrix with whatever jitter was needed for a Cholesky to succeed."""
    _, jit = cov_cholesky(locations, hyper, jitter)
    cov = _raw_cov(locations, hyper)
    cov[np.diag_indices_from(cov)] += jit
    return cov


def width_mean_function(
    grid: FlowlineGrid,
    fields: SurfaceFields,
    h_obs,
    candidate: Union[Series, np.ndarray],
    c: PhysicalConstants = PhysicalConstants(),
    floor: float = 1.0,
    C0: float = 0.0,
) -> np.ndarray:
    """Width implied at the thickness observations when A = 0, on quad_x.

    The flux is integrated with the candidate width, then each observation
    gives omega_j = F_j / (v_s_j H_j).  These are interpolated linearly
    (clamped at the ends) and floored at ``floor`` meters.
    """
    fields.check_grid(grid)
    h_obs = np.asarray(h_obs, dtype=float)
    if isinstance(candidate, tuple):
        cx = np.asarray(candidate[0], dtype=float)
        if cx[0] > grid.quad_x[0] or cx[-1] < grid.obs_x[-1]:
            raise ValidationError("width candidate does not cover the flowline")
        omega_c = linear_interp(candidate, grid.quad_x)
    else:
        omega_c = np.asarray(candidate, dtype=float)
    v = fields.v_s_at_obs
    if np.any(v <= 0) or np.any(h_obs <= 0):
        raise ValidationError("velocity and thickness must be positive at the observations")
    F = cumulative_flux(grid, fields.a_at_quad, fields.tau_at_quad, omega_c, DynamicsParams(0.0, 1.0, C0)).flux_at_obs
    omega_obs = F / (v * h_obs)
    if grid.n_obs == 1:
        mean = np.full(grid.n_quad, omega_obs[0])
    else:
        mean = np.interp(grid.quad_x, grid.obs_x, omega_obs)
    return np.maximum(mean, floor)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_width_prior(model: WidthModel, locations=None, rng_seed=0, size: Optional[int] = None) -> np.ndarray:
    """Draw widths from the GP prior; ``size`` adds a leading sample axis."""
    x = model.quad_x if locations is None else np.asarray(locations, dtype=float)
    L, _ = cov_cholesky(x, model.hyper)
    rng = _as_rng(rng_seed)
    shape = (x.size,) if size is None else (size, x.size)
    z = rng.standard_normal(shape)
    return model.mean_at(x) + z @ L.T


def width_log_density(omega, model: WidthModel, locations=None) -> float:
    """Multivariate normal log-density of a width vector."""
    x = model.quad_x if locations is None else np.asarray(locations, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != x.shape:
        raise ValidationError("width vector does not match the locations")
    L, _ = cov_cholesky(x, model.hyper)
    r = sla.solve_triangular(L, omega - model.mean_at(x), lower=True)
    return float(-0.5 * r @ r - np.log(np.diag(L)).sum() - 0.5 * x.size * math.log(2 * math.pi))


def conditional_predict(omega_at_quad, model: WidthModel, new_locations):
    """GP conditional mean and variance at new locations given the quad values."""
    new = np.asarray(new_locations, dtype=float).ravel()
    omega = np.asarray(omega_at_quad, dtype=float)
    L, _ = cov_cholesky(model.quad_x, model.hyper)
    h = model.hyper
    cross = h.sigma2_omega * matern_correlation((new[:, None] - model.quad_x[None, :]) / h.phi)
    w = sla.cho_solve((L, True), cross.T)
    mean = model.mean_at(new) + w.T @ (omega - model.mean_at_quad)
    var = h.sigma2_omega + h.tau2 - np.einsum("ij,ji->i", cross, w)
    return mean, np.maximum(var, 0.0)


class WidthPriorFactor:
    """Eigen-factorized prior for repeated (sigma2, tau2) updates at fixed phi.

    With R the correlation matrix, Sigma = Q diag(sigma2 lam + tau2) Q^T,
    and B = Q diag(d) (d the square roots) satisfies B B^T = Sigma.  The
    whitened coordinates are z = B^{-1} (omega - mean).
    """

    def __init__(self, model: WidthModel):
        self.model = model
        x = model.quad_x
        self.corr = matern_correlation((x[:, None] - x[None, :]) / model.hyper.phi)
        lam, Q = np.linalg.eigh(self.corr)
        self.lam = np.maximum(lam, 0.0)
        self.Q = Q
        self.mean = model.mean_at_quad
        self.m = x.size

    def scales(self, sigma2: float, tau2: float) -> np.ndarray:
        d2 = sigma2 * self.lam + tau2
        if d2.min() <= JITTER_START * sigma2 * 1e-4:
            j = JITTER_START * sigma2
            while d2.min() + j <= JITTER_START * sigma2 * 1e-4 and j < JITTER_CAP * sigma2:
                j *= 10.0
            d2 = d2 + j
        return np.sqrt(d2)

    def to_white(self, omega, d) -> np.ndarray:
        return (self.Q.T @ (np.asarray(omega) - self.mean)) / d

    def from_white(self, z, d) -> np.ndarray:
        return self.mean + self.Q @ (d * z)

    def log_density_white(self, z, d) -> float:
        """Log-density of omega (not z) expressed through its whitened coordinates."""
        return float(-0.5 * z @ z - np.log(d).sum() - 0.5 * self.m * math.log(2 * math.pi))

    def log_density(self, omega, sigma2: float, tau2: float) -> float:
        d = self.scales(sigma2, tau2)
        return self.log_density_white(self.to_white(omega, d), d)
