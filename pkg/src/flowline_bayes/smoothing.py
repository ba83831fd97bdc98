"""Pre-smoothing of surface observations and slope estimation.

Smoothed inputs are treated as the true velocity, slope, accumulation and
thinning processes when solving for thickness.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Optional

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .core import FlowlineGrid, ObservationSet, Series, ValidationError, as_series, linear_interp


@dataclass(frozen=True)
class SmootherSpec:
    """How to smooth one input series.

    ``lam=None`` with the spline kind selects the penalty by generalized
    cross-validation.  For the moving average the integer part of ``lam``
    is the (odd) window length in samples.
    """

    kind: Literal["spline", "moving-average"] = "spline"
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("spline", "moving-average"):
            raise ValidationError(f"unknown smoother kind {self.kind!r}")
        if self.lam is not None and not self.lam >= 0:
            raise ValidationError("smoothing penalty must be nonnegative")
        if self.kind == "moving-average":
            if self.lam is None:
                raise ValidationError("moving-average needs a window in lam")
            w = int(self.lam)
            if w < 1 or w % 2 == 0:
                raise ValidationError("moving-average window must be an odd positive integer")

    @property
    def window(self) -> int:
        return int(self.lam)


@dataclass(frozen=True, eq=False)
class SurfaceFields:
    """Input processes at their evaluation points.

    Velocity and slope live on ``grid.obs_x``; accumulation and thinning on
    ``grid.quad_x``.
    """

    v_s_at_obs: np.ndarray
    s_at_obs: np.ndarray
    a_at_quad: np.ndarray
    tau_at_quad: np.ndarray

    def __post_init__(self):
        for name in ("v_s_at_obs", "s_at_obs", "a_at_quad", "tau_at_quad"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite values")
            object.__setattr__(self, name, arr)
        if self.v_s_at_obs.shape != self.s_at_obs.shape:
            raise ValidationError("velocity and slope must share the observation points")
        if self.a_at_quad.shape != self.tau_at_quad.shape:
            raise ValidationError("accumulation and thinning must share the quadrature points")
        if np.any(self.v_s_at_obs < 0):
            raise ValidationError("surface velocity must be nonnegative")

    def check_grid(self, grid: FlowlineGrid) -> None:
        if self.v_s_at_obs.size != grid.n_obs or self.a_at_quad.size != grid.n_quad:
            raise ValidationError("surface fields do not match the grid")


def _moving_average(y: np.ndarray, window: int) -> np.ndarray:
    # Centered window, truncated at the ends so constants and lines in the
    # interior are preserved.
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(y)))
    idx = np.arange(y.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, y.size)
    return (csum[hi] - csum[lo]) / (hi - lo)


def smooth_series(raw: Series, spec: SmootherSpec = SmootherSpec()) -> Series:
    """Smooth a series in place of its values; locations are unchanged."""
    x, y = as_series(*raw)
    if spec.kind == "moving-average":
        return x, _moving_average(y, spec.window)
    if x.size < 4:
        raise ValidationError("smoothing spline needs at least 4 points")
    if np.ptp(y) == 0.0:
        return x, y.copy()
    # Rescale x to O(1) so GCV's penalty search is well conditioned; the
    # penalty is mapped back so an explicit lam keeps its meaning in data units.
    scale = float(x[-1] - x[0])
    xs = (x - x[0]) / scale
    lam = None if spec.lam is None else spec.lam / scale**3
    spline = make_smoothing_spline(xs, y, lam=lam)
    return x, spline(xs)


def central_difference_slope(elevation: Series) -> Series:
    """dE/dx by central differences, one-sided at the two ends."""
    x, e = as_series(*elevation, name="elevation")
    if x.size < 3:
        raise ValidationError("slope needs at least 3 elevation points")
    slope = np.empty_like(e)
    slope[1:-1] = (e[2:] - e[:-2]) / (x[2:] - x[:-2])
    slope[0] = (e[1] - e[0]) / (x[1] - x[0])
    slope[-1] = (e[-1] - e[-2]) / (x[-1] - x[-2])
    return x, slope


@dataclass(frozen=True)
class SmoothedInputs:
    """Smoothed input series, ready to be evaluated at any location set."""

    velocity: Series
    slope: Series
    accumulation: Series
    thinning: Series

    def fields(self, grid: FlowlineGrid) -> SurfaceFields:
        # Spline overshoot near a slow divide can dip just below zero.
        return SurfaceFields(
            v_s_at_obs=np.maximum(linear_interp(self.velocity, grid.obs_x), 0.0),
            s_at_obs=linear_interp(self.slope, grid.obs_x),
            a_at_quad=linear_interp(self.accumulation, grid.quad_x),
            tau_at_quad=linear_interp(self.thinning, grid.quad_x),
        )


_SERIES = ("velocity", "elevation", "accumulation", "thinning")

#: Pass as ``specs`` to use the raw inputs unchanged.
NO_SMOOTHING: Mapping[str, Optional[SmootherSpec]] = {name: None for name in _SERIES}


def smooth_inputs(
    obs: ObservationSet,
    specs: Optional[Mapping[str, Optional[SmootherSpec]]] = None,
    resmooth_slope: Optional[SmootherSpec] = None,
) -> SmoothedInputs:
    """Smooth each input series, then differentiate elevation to slope.

    ``specs`` maps series name to a spec; a missing key (or ``specs=None``)
    gets the default GCV spline and an explicit ``None`` value leaves that
    series unsmoothed.
    """
    out = {}
    for name in _SERIES:
        raw = getattr(obs, name)
        spec = SmootherSpec() if specs is None else specs.get(name, SmootherSpec())
        # Short coarse series (e.g. 55 km accumulation grids) cannot carry a spline.
        if spec is not None and not (spec.kind == "spline" and raw[0].size < 4):
            raw = smooth_series(raw, spec)
        out[name] = raw
    for name in ("velocity", "accumulation", "thinning"):
        if out[name][0].size < 2:
            x, y = out[name]
            out[name] = (np.array([x[0], x[0] + 1.0]), np.array([y[0], y[0]]))
    slope = central_difference_slope(out["elevation"])
    if resmooth_slope is not None:
        slope = smooth_series(slope, resmooth_slope)
    return SmoothedInputs(out["velocity"], slope, out["accumulation"], out["thinning"])


def prepare_surface_fields(
    obs: ObservationSet,
    grid: FlowlineGrid,
    specs: Optional[Mapping[str, Optional[SmootherSpec]]] = None,
    resmooth_slope: Optional[SmootherSpec] = None,
) -> SurfaceFields:
    """Smooth the raw inputs and evaluate them on ``grid``."""
    return smooth_inputs(obs, specs, resmooth_slope).fields(grid)
