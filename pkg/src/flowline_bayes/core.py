"""Shared flowline types, physical constants and interpolation helpers.

Locations are arc length along the glacier centerline in meters, measured
from the ice divide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


Series = tuple[np.ndarray, np.ndarray]


def as_series(locations, values, name: str = "series") -> Series:
    """Coerce a (locations, values) pair into two float arrays and check it."""
    x = np.asarray(locations, dtype=float).ravel()
    y = np.asarray(values, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"{name}: {x.size} locations but {y.size} values")
    if x.size == 0:
        raise ValidationError(f"{name}: empty series")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError(f"{name}: non-finite entries")
    if np.any(np.diff(x) <= 0):
        raise ValidationError(f"{name}: locations must be strictly ascending")
    return x, y


@dataclass(frozen=True)
class PhysicalConstants:
    rho: float = 917.0  # kg m^-3
    g: float = 9.81  # m s^-2

    def __post_init__(self):
        if not (self.rho > 0 and self.g > 0):
            raise ValidationError("rho and g must be strictly positive")

    @property
    def rho_g(self) -> float:
        return self.rho * self.g


@dataclass(frozen=True, eq=False)
class FlowlineGrid:
    """Observation locations plus the quadrature grid used for flux sums.

    ``quad_x`` starts at the divide and must cover every observation
    location.  Non-uniform quadrature grids are allowed.
    """

    obs_x: np.ndarray
    quad_x: np.ndarray
    domain_length: float

    def __post_init__(self):
        obs = np.asarray(self.obs_x, dtype=float).ravel()
        quad = np.asarray(self.quad_x, dtype=float).ravel()
        object.__setattr__(self, "obs_x", obs)
        object.__setattr__(self, "quad_x", quad)
        if not self.domain_length > 0:
            raise ValidationError("domain_length must be positive")
        if quad.size < 2:
            raise ValidationError("quadrature grid needs at least 2 points")
        if obs.size == 0:
            raise ValidationError("at least one observation location is required")
        for name, arr in (("obs_x", obs), ("quad_x", quad)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
            if np.any(np.diff(arr) <= 0):
                raise ValidationError(f"{name} must be strictly ascending")
        if obs[0] < 0 or obs[-1] > self.domain_length:
            raise ValidationError("observation locations must lie in [0, domain_length]")
        if quad[0] != 0.0:
            raise ValidationError("quad_x must start at the divide (x = 0)")
        if obs[0] < quad[0] or obs[-1] > quad[-1]:
            raise ValidationError("quadrature grid does not cover the observations")

    @property
    def n_obs(self) -> int:
        return self.obs_x.size

    @property
    def n_quad(self) -> int:
        return self.quad_x.size

    @cached_property
    def spacing(self) -> np.ndarray:
        """Interval lengths between consecutive quadrature points."""
        return np.diff(self.quad_x)

    @cached_property
    def obs_interval(self) -> np.ndarray:
        """Index I with quad_x[I] <= obs_x[j] <= quad_x[I+1] (I < n_quad - 1)."""
        idx = np.searchsorted(self.quad_x, self.obs_x, side="right") - 1
        return np.clip(idx, 0, self.n_quad - 2)

    @cached_property
    def obs_fraction(self) -> np.ndarray:
        """Position of each obs point within its quadrature interval, in [0, 1]."""
        i = self.obs_interval
        return (self.obs_x - self.quad_x[i]) / self.spacing[i]

    def at_obs(self, values_on_quad: np.ndarray) -> np.ndarray:
        """Linearly interpolate a quad-grid field to the observation points."""
        v = np.asarray(values_on_quad, dtype=float)
        i = self.obs_interval
        t = self.obs_fraction
        return v[..., i] * (1.0 - t) + v[..., i + 1] * t

    def with_obs(self, obs_x) -> "FlowlineGrid":
        """Same quadrature grid, different observation (prediction) points."""
        return FlowlineGrid(np.asarray(obs_x, dtype=float), self.quad_x, self.domain_length)


@dataclass(frozen=True)
class ObservationSet:
    """Raw surface and thickness observations, each as (locations, values)."""

    thickness: Series
    velocity: Series
    elevation: Series
    accumulation: Series
    thinning: Series
    width_candidates: Mapping[str, Series] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("thickness", "velocity", "elevation", "accumulation", "thinning"):
            object.__setattr__(self, name, as_series(*getattr(self, name), name=name))
        widths = {k: as_series(*v, name=f"width[{k}]") for k, v in self.width_candidates.items()}
        object.__setattr__(self, "width_candidates", widths)
        if np.any(self.thickness[1] <= 0):
            raise ValidationError("thickness observations must be strictly positive")

    def narrowest_width(self) -> tuple[str, Series]:
        """Candidate with the smallest mean width."""
        if not self.width_candidates:
            raise ValidationError("no width candidates supplied")
        name = min(self.width_candidates, key=lambda k: float(np.mean(self.width_candidates[k][1])))
        return name, self.width_candidates[name]


def build_grid(domain_length: float, quad_spacing: float, obs_locations: Sequence[float]) -> FlowlineGrid:
    """Uniform quadrature grid from the divide that covers domain and observations."""
    if not quad_spacing > 0:
        raise ValidationError("quad_spacing must be positive")
    obs = np.asarray(obs_locations, dtype=float).ravel()
    if obs.size and (np.any(np.diff(obs) <= 0) or obs[0] < 0 or obs[-1] > domain_length):
        raise ValidationError("observation locations must be ascending within [0, domain_length]")
    far = max(float(domain_length), float(obs.max()) if obs.size else 0.0)
    n_int = max(1, math.ceil(far / quad_spacing - 1e-9))
    quad = np.arange(n_int + 1, dtype=float) * quad_spacing
    return FlowlineGrid(obs, quad, float(domain_length))


def linear_interp(series: Series, targets) -> np.ndarray:
    """Piecewise-linear interpolation, clamped to the end values outside the series."""
    x, y = as_series(*series)
    if x.size < 2:
        raise ValidationError("linear_interp needs at least 2 points")
    return np.interp(np.asarray(targets, dtype=float), x, y)
