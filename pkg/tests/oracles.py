"""Slow, independent reference implementations used only by the tests."""
from __future__ import annotations

import math

import numpy as np


def quintic_roots_bisection(F, b, c5, h_max=10_000.0, n_scan=4000, iters=200):
    """All roots of F - b h + c5 h^5 on [0, h_max] by sign scan plus bisection."""
    p = lambda h: F - b * h + c5 * h**5  # noqa: E731
    grid = np.linspace(0.0, h_max, n_scan + 1)
    # The turning point as a node splits close root pairs into separate cells.
    if c5 > 0 and b > 0:
        grid = np.union1d(grid, [min((b / (5 * c5)) ** 0.25, h_max)])
    n_scan = grid.size - 1
    vals = p(grid)
    roots = []
    for i in range(n_scan):
        lo, hi = grid[i], grid[i + 1]
        flo, fhi = vals[i], vals[i + 1]
        if flo == 0:
            roots.append(lo)
            continue
        if flo * fhi > 0:
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = p(mid)
            if fm == 0 or hi - lo <= 1e-15 * max(hi, 1.0):
                break
            if flo * fm < 0:
                hi = mid
            else:
                lo, flo = mid, fm
        roots.append(0.5 * (lo + hi))
    if vals[-1] == 0:
        roots.append(h_max)
    # Tangency near the critical point can be missed by the scan; check it.
    if c5 > 0 and b > 0:
        hs = (b / (5 * c5)) ** 0.25
        if hs <= h_max and abs(p(hs)) <= 1e-9 * max(abs(F), 1.0) and not any(abs(r - hs) < 1e-3 * hs for r in roots):
            roots.append(hs)
    return sorted(roots)


def flux_refined(x_quad, a, tau, omega, x_obs, refine=64):
    """Flux by trapezoid integration of the piecewise-linear-average integrand.

    Each quadrature interval uses (a - tau)_half * omega_half, so a refined
    midpoint sum over the interval must equal the one-term rule exactly; the
    refinement checks the partial-interval bookkeeping.
    """
    net = np.asarray(a) - np.asarray(tau)
    out = []
    for xj in x_obs:
        total = 0.0
        for i in range(len(x_quad) - 1):
            x0, x1 = x_quad[i], x_quad[i + 1]
            if x0 >= xj:
                break
            upper = min(x1, xj)
            integrand = 0.5 * (net[i] + net[i + 1]) * 0.5 * (omega[i] + omega[i + 1])
            sub = np.linspace(x0, upper, refine + 1)
            total += integrand * float(np.sum(np.diff(sub)))
        out.append(total)
    return np.array(out)


def matern32_dense(x, sigma2, phi, tau2):
    out = np.empty((len(x), len(x)))
    for i, xi in enumerate(x):
        for j, xj in enumerate(x):
            r = math.sqrt(3.0) * abs(xi - xj) / phi
            out[i, j] = sigma2 * (1 + r) * math.exp(-r) + (tau2 if i == j else 0.0)
    return out


def mvn_logpdf_dense(y, mean, cov):
    """Log-density via slogdet and a dense solve."""
    r = np.asarray(y) - np.asarray(mean)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * r @ np.linalg.solve(cov, r) - 0.5 * logdet - 0.5 * len(r) * math.log(2 * math.pi))


def smoothing_spline_dense(x, y, lam):
    """Penalized regression f = (I + lam Q R^-1 Q^T)^-1 y for a natural cubic spline."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.diff(x)
    Q = np.zeros((n, n - 2))
    R = np.zeros((n - 2, n - 2))
    for j in range(1, n - 1):
        Q[j - 1, j - 1] = 1 / h[j - 1]
        Q[j, j - 1] = -1 / h[j - 1] - 1 / h[j]
        Q[j + 1, j - 1] = 1 / h[j]
        R[j - 1, j - 1] = (h[j - 1] + h[j]) / 3
        if j < n - 2:
            R[j - 1, j] = R[j, j - 1] = h[j] / 6
    K = Q @ np.linalg.solve(R, Q.T)
    return np.linalg.solve(np.eye(n) + lam * K, np.asarray(y, dtype=float))


def ks_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a))
    b = np.sort(np.asarray(b))
    allv = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, allv, side="right") / a.size
    cdf_b = np.searchsorted(b, allv, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def width_coverage_bruteforce(draws, truth, level=0.95):
    """Per-point loop over columns with an explicit sort."""
    draws = np.asarray(draws)
    hits = 0
    for j in range(draws.shape[1]):
        col = np.sort(draws[:, j])
        lo = np.quantile(col, (1 - level) / 2)
        hi = np.quantile(col, (1 + level) / 2)
        hits += lo <= truth[j] <= hi
    return hits / draws.shape[1]
