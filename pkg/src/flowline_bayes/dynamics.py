"""Flowline mass conservation with a shallow-ice velocity correction.

Depth-averaged velocity is the observed surface velocity minus the SIA
deformation difference,

    v_bar = v_s - (A / 20) (rho g |s|)^3 h^4,

and flux v_bar * h * omega is integrated from the divide.  At each
observation point the thickness is a root of the quintic

    p(h) = F - v_s omega h + (A / 20) (rho g |s|)^3 omega h^5.

For h >= 0 the quintic is convex with a single critical point
h* = (v_s / (5 k))^(1/4), so its nonnegative roots are bracketed by
[0, h*] (the "shallow" root) and [h*, h_max] (the "deep" root).  Newton's
method started from the outer end of either bracket converges monotonically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional, Sequence

import numpy as np

from .core import FlowlineGrid, PhysicalConstants, Series, ValidationError, linear_interp
from .smoothing import SurfaceFields

DEFAULT_H_MAX = 10_000.0
_MAX_NEWTON = 200


@dataclass(frozen=True)
class DynamicsParams:
    A: float
    h0: float
    C0: float = 0.0

    def __post_init__(self):
        if not self.A >= 0:
            raise ValidationError("A must be nonnegative")
        if not self.h0 > 0:
            raise ValidationError("h0 must be positive")
        if not self.C0 >= 0:
            raise ValidationError("C0 must be nonnegative")


@dataclass(frozen=True)
class FluxProfile:
    flux_at_obs: np.ndarray


Strategy = Literal["nearest-to-reference", "max-real-positive", "continuity"]


@dataclass(frozen=True, eq=False)
class RootSelection:
    """Which root to keep when the quintic has two nonnegative roots."""

    strategy: Strategy = "continuity"
    reference: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.strategy not in ("nearest-to-reference", "max-real-positive", "continuity"):
            raise ValidationError(f"unknown root selection {self.strategy!r}")
        if self.strategy == "nearest-to-reference" and self.reference is None:
            raise ValidationError("nearest-to-reference selection needs a reference")
        if self.reference is not None:
            object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))


def deformation_coefficient(s, A, c: PhysicalConstants = PhysicalConstants()):
    """(A / 20) (rho g |s|)^3, the factor multiplying h^4 in the correction."""
    return A / 20.0 * (c.rho_g * np.abs(s)) ** 3


def sia_correction(v_s, s, h, A, c: PhysicalConstants = PhysicalConstants()):
    """Depth-averaged velocity from surface velocity."""
    return v_s - deformation_coefficient(s, A, c) * np.asarray(h, dtype=float) ** 4


def segment_flux(grid: FlowlineGrid, a, tau, omega) -> np.ndarray:
    """Per-interval (a - tau) * omega * dx using interval-average values.

    ``omega`` may carry leading batch dimensions.
    """
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n = grid.n_quad
    if a.shape[-1] != n or tau.shape[-1] != n or omega.shape[-1] != n:
        raise ValidationError("accumulation, thinning and width must live on quad_x")
    net = a - tau
    net_half = 0.5 * (net[..., 1:] + net[..., :-1])
    w_half = 0.5 * (omega[..., 1:] + omega[..., :-1])
    return net_half * w_half * grid.spacing


def _flux_from_segments(grid: FlowlineGrid, seg: np.ndarray, C0: float) -> np.ndarray:
    cum = np.concatenate([np.zeros(seg.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    i = grid.obs_interval
    # The interval holding x_j only contributes the part upstream of x_j.
    return C0 + cum[..., i] + seg[..., i] * grid.obs_fraction


def cumulative_flux(grid: FlowlineGrid, a, tau, omega, params: DynamicsParams) -> FluxProfile:
    """Flux at every observation point: C0 plus the quadrature of (a - tau) omega."""
    seg = segment_flux(grid, a, tau, omega)
    return FluxProfile(_flux_from_segments(grid, seg, params.C0))


# -- quintic ---------------------------------------------------------------


def _poly(h, F, b, c5):
    return F - b * h + c5 * h**5


def _newton(h, F, b, c5, lo, hi):
    """Vectorized safeguarded Newton inside [lo, hi]; monotone for our brackets."""
    h = np.clip(h, lo, hi)
    for _ in range(_MAX_NEWTON):
        p = F - b * h + c5 * h**5
        dp = 5.0 * c5 * h**4 - b
        with np.errstate(divide="ignore", invalid="ignore"):
            step = p / dp
        step[~np.isfinite(step)] = 0.0
        new = np.clip(h - step, lo, hi)
        if np.all(np.abs(new - h) <= 1e-13 * np.maximum(np.abs(h), 1.0)):
            return new
        h = new
    return h


@dataclass(frozen=True)
class QuinticBrackets:
    """Shallow root (or NaN) plus what is needed to find the deep root lazily."""

    shallow: np.ndarray
    hstar: np.ndarray
    has_deep: np.ndarray
    F: np.ndarray
    b: np.ndarray
    c5: np.ndarray
    h_max: float

    def deep(self, mask=None) -> np.ndarray:
        """Deep roots for the entries selected by ``mask`` (NaN where absent)."""
        mask = np.ones(self.F.shape, dtype=bool) if mask is None else mask
        out = np.full(self.F.shape, np.nan)
        sel = mask & self.has_deep
        if sel.any():
            F, b, c5 = self.F[sel], self.b[sel], self.c5[sel]
            lo = self.hstar[sel]
            hi = np.full(lo.shape, self.h_max)
            out[sel] = _newton(hi.copy(), F, b, c5, lo, hi)
        return out


def quintic_brackets(F, b, c5, h_max: float = DEFAULT_H_MAX) -> QuinticBrackets:
    """Locate the nonnegative roots of F - b h + c5 h^5 on [0, h_max].

    ``b`` is v_s * omega and ``c5`` is the deformation coefficient times
    omega; all arguments broadcast.
    """
    F, b, c5 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (F, b, c5)))
    F, b, c5 = F.copy(), b.copy(), c5.copy()
    shallow = np.full(F.shape, np.nan)
    has_deep = np.zeros(F.shape, dtype=bool)
    hstar = np.zeros(F.shape)

    linear = c5 <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        h_lin = F / b
    ok_lin = linear & (b > 0) & (h_lin >= 0) & (h_lin <= h_max)
    shallow[ok_lin] = h_lin[ok_lin]
    ok_zero = linear & (b <= 0) & (F == 0)
    shallow[ok_zero] = 0.0

    quint = ~linear
    if quint.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            hs = np.where(b > 0, (np.maximum(b, 0) / (5.0 * c5)) ** 0.25, 0.0)
        hs = np.where(quint, np.minimum(hs, h_max), 0.0)
        hstar[quint] = hs[quint]
        p_star = _poly(hs, F, b, c5)
        p_max = _poly(h_max, F, b, c5)
        need_shallow = quint & (F >= 0) & (p_star <= 0)
        if need_shallow.any():
            m = need_shallow
            # The undeformed solution F / b lies left of the shallow root,
            # where Newton on a convex decreasing function moves monotonically right.
            with np.errstate(divide="ignore", invalid="ignore"):
                start = np.where(b[m] > 0, F[m] / b[m], 0.0)
            shallow[m] = _newton(start, F[m], b[m], c5[m], np.zeros(start.shape), hs[m])
        has_deep = quint & (p_star <= 0) & (p_max >= 0) & (hs < h_max)
        # A double root at h* is reported once, as the shallow root.
        has_deep &= ~(need_shallow & (p_star == 0))
    return QuinticBrackets(shallow, hstar, has_deep, F, b, c5, float(h_max))


def quintic_roots(F, b, c5, h_max: float = DEFAULT_H_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Both nonnegative roots (shallow, deep); NaN where a root does not exist."""
    br = quintic_brackets(F, b, c5, h_max)
    return br.shallow, br.deep()


def quintic_residual(h, F, b, c5):
    return _poly(np.asarray(h, dtype=float), F, b, c5)


def _nearest(shallow, deep, ref):
    use_deep = np.isnan(shallow) | (np.abs(deep - ref) < np.abs(shallow - ref))
    return np.where(use_deep & ~np.isnan(deep), deep, shallow)


def select_roots(br: QuinticBrackets, sel: RootSelection, h0=None) -> np.ndarray:
    """Pick one root per point.  Arrays may be (n,) or (batch, n).

    Continuity walks the points left to right using the previous selected
    thickness as the reference; the first point uses ``h0``.
    """
    shallow = br.shallow
    if sel.strategy == "max-real-positive":
        deep = br.deep()
        return np.where(np.isnan(deep), shallow, deep)
    if sel.strategy == "nearest-to-reference":
        ref = np.broadcast_to(sel.reference, shallow.shape)
        # The deep root is >= h*, so it can only win where the reference
        # sits closer to h* than to the shallow root.
        maybe = br.has_deep & (np.isnan(shallow) | (br.hstar - ref < np.abs(shallow - ref)))
        deep = br.deep(maybe)
        return _nearest(shallow, deep, ref)

    if h0 is None:
        raise ValidationError("continuity selection needs h0")
    h0 = np.broadcast_to(np.asarray(h0, dtype=float), shallow.shape[:-1])
    # Fast path: every point keeps its shallow root.
    refs = np.concatenate([h0[..., None], shallow[..., :-1]], axis=-1)
    safe = ~np.isnan(shallow) & (~br.has_deep | (br.hstar - refs >= np.abs(shallow - refs)))
    if safe.all():
        return shallow.copy()
    deep = br.deep()
    if shallow.ndim == 1:
        # Plain floats are much cheaper than 0-d arrays in this short loop.
        out = []
        ref = float(h0)
        for s_j, d_j in zip(shallow.tolist(), deep.tolist()):
            if s_j != s_j or (d_j == d_j and abs(d_j - ref) < abs(s_j - ref)):
                s_j = d_j
            out.append(s_j)
            if s_j == s_j:
                ref = s_j
        return np.array(out)
    out = np.empty(shallow.shape)
    ref = h0.copy()
    for j in range(shallow.shape[-1]):
        pick = _nearest(shallow[..., j], deep[..., j], ref)
        out[..., j] = pick
        ref = np.where(np.isnan(pick), ref, pick)
    return out


def solve_thickness(
    F: float,
    v_s: float,
    s: float,
    omega: float,
    A: float,
    c: PhysicalConstants = PhysicalConstants(),
    sel: Optional[RootSelection] = None,
    h_max: float = DEFAULT_H_MAX,
) -> float:
    """Thickness at one point, or NaN when no nonnegative root exists.

    Without ``sel`` the root nearest the undeformed solution F / (v_s omega)
    is returned.  Continuity selection needs a reference here, since there
    is no previous point to borrow one from.
    """
    if not omega > 0:
        raise ValidationError("width must be positive")
    k = deformation_coefficient(s, A, c)
    br = quintic_brackets(np.atleast_1d(F), np.atleast_1d(v_s * omega), np.atleast_1d(k * omega), h_max)
    if sel is None:
        ref = F / (v_s * omega) if v_s > 0 else 0.0
        sel = RootSelection("nearest-to-reference", np.atleast_1d(ref))
    elif sel.strategy == "continuity":
        sel = RootSelection("nearest-to-reference", sel.reference)
    return float(select_roots(br, sel)[0])


# -- forward model -----------------------------------------------------------


def forward_model(
    grid: FlowlineGrid,
    fields: SurfaceFields,
    omega_quad,
    params: DynamicsParams,
    sel: RootSelection = RootSelection(),
    c: PhysicalConstants = PhysicalConstants(),
    h_max: float = DEFAULT_H_MAX,
) -> np.ndarray:
    """Thickness on ``grid.obs_x``; NaN marks points without a solution."""
    fields.check_grid(grid)
    omega_quad = np.asarray(omega_quad, dtype=float)
    F = cumulative_flux(grid, fields.a_at_quad, fields.tau_at_quad, omega_quad, params).flux_at_obs
    return thickness_from_flux(grid, fields, omega_quad, F, params.A, params.h0, sel, c, h_max)


def thickness_from_flux(grid, fields, omega_quad, F, A, h0, sel, c, h_max=DEFAULT_H_MAX):
    """Solve the quintic at every obs point given precomputed fluxes.

    ``omega_quad``, ``F``, ``A`` and ``h0`` may carry a leading batch axis.
    """
    omega_obs = grid.at_obs(omega_quad)
    A = np.asarray(A, dtype=float)
    k = deformation_coefficient(fields.s_at_obs, A[..., None] if A.ndim else A, c)
    br = quintic_brackets(F, fields.v_s_at_obs * omega_obs, k * omega_obs, h_max)
    return select_roots(br, sel, h0)


def synthetic_velocity(
    grid: FlowlineGrid,
    h_true,
    s,
    a,
    tau,
    omega_quad,
    params: DynamicsParams,
    c: PhysicalConstants = PhysicalConstants(),
) -> np.ndarray:
    """Surface velocity on ``grid.obs_x`` that makes ``h_true`` an exact solution."""
    h = np.asarray(h_true, dtype=float)
    if h.shape != grid.obs_x.shape or np.any(h <= 0):
        raise ValidationError("true thickness must be positive on every obs point")
    omega_obs = grid.at_obs(omega_quad)
    if np.any(omega_obs <= 0):
        raise ValidationError("width must be positive at the observation points")
    F = cumulative_flux(grid, a, tau, omega_quad, params).flux_at_obs
    v_s = F / (h * omega_obs) + deformation_coefficient(s, params.A, c) * h**4
    if np.any(v_s < 0):
        raise ValidationError("configuration implies negative surface velocity")
    return v_s


@dataclass
class NaiveResult:
    """Thickness profiles keyed by (width name, A) plus unsolved locations."""

    x: np.ndarray
    profiles: dict[tuple[str, float], np.ndarray]

    def gaps(self) -> dict[tuple[str, float], np.ndarray]:
        return {k: self.x[np.isnan(v)] for k, v in self.profiles.items()}


def naive_inversion(
    grid: FlowlineGrid,
    fields: SurfaceFields,
    widths: Mapping[str, Series | np.ndarray],
    A_values: Sequence[float],
    h_obs,
    C0: float = 0.0,
    c: PhysicalConstants = PhysicalConstants(),
    h_max: float = DEFAULT_H_MAX,
) -> NaiveResult:
    """Deterministic inversion with plug-in widths, keeping the root nearest ``h_obs``.

    Widths may be given as (locations, values) series or directly on quad_x.
    """
    if len(A_values) == 0:
        raise ValidationError("at least one A value is required")
    h_obs = np.asarray(h_obs, dtype=float)
    sel = RootSelection("nearest-to-reference", h_obs)
    profiles = {}
    for name, w in widths.items():
        omega = linear_interp(w, grid.quad_x) if isinstance(w, tuple) else np.asarray(w, dtype=float)
        for A in A_values:
            params = DynamicsParams(A=float(A), h0=float(h_obs[0]), C0=C0)
            profiles[(name, float(A))] = forward_model(grid, fields, omega, params, sel, c, h_max)
    return NaiveResult(grid.obs_x.copy(), profiles)
