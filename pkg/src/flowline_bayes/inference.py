"""Metropolis-Hastings inference for the hierarchical thickness model.

Unknowns are the rheologic coefficient A, the divide thickness h0, the
thickness error variance sigma2_H, the width GP variance and nugget, and
the width vector on the quadrature grid.  Blocks are updated in turn with
random walks on transformed scales:

* A: logit of A / A_max,
* h0, sigma2_H: log,
* (sigma2_omega, tau2): joint log random walk with the whitened width
  held fixed (a non-centered move; the width changes with the scales),
* omega: random walk in whitened coordinates, omega' = omega + eps B eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import FlowlineGrid, PhysicalConstants, ValidationError
from .dynamics import (
    DEFAULT_H_MAX,
    RootSelection,
    deformation_coefficient,
    quintic_brackets,
    segment_flux,
    select_roots,
    _flux_from_segments,
)
from .gp_width import WidthModel, WidthPriorFactor
from .smoothing import SurfaceFields

LOG_2PI = math.log(2.0 * math.pi)
BLOCKS = ("A", "h0", "sigma2_H", "width_hyper", "omega")
SCALARS = ("A", "h0", "sigma2_H", "sigma2_omega", "tau2")


# -- priors ------------------------------------------------------------------


@dataclass(frozen=True)
class InverseGamma:
    """Density proportional to x^-(shape+1) exp(-scale / x)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValidationError("inverse-gamma shape and scale must be positive")

    def logpdf(self, x: float) -> float:
        if not x > 0:
            return -math.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(x) - b / x

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)

    @property
    def mode(self) -> float:
        return self.scale / (self.shape + 1)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mean, sd^2) restricted to x > lower."""

    mean: float
    sd: float
    lower: float = 0.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValidationError("sd must be positive")

    @property
    def _log_mass(self) -> float:
        return math.log(ndtr((self.mean - self.lower) / self.sd))

    def logpdf(self, x: float) -> float:
        if not x > self.lower:
            return -math.inf
        u = (x - self.mean) / self.sd
        return -0.5 * u * u - math.log(self.sd) - 0.5 * LOG_2PI - self._log_mass

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(0)
        while out.size < n:
            draw = rng.normal(self.mean, self.sd, size=2 * n)
            out = np.concatenate([out, draw[draw > self.lower]])
        out = out[:n]
        return float(out[0]) if size is None else out.reshape(size)


@dataclass(frozen=True)
class PriorSpec:
    """Priors for every sampled unknown.

    ``h0=None`` is resolved against the data to a normal centered on the
    first thickness observation with a 500 m standard deviation, truncated
    at zero.  Setting ``fixed_sigma2_H`` removes sigma2_H from sampling.
    """

    A_range: tuple[float, float] = (0.0, 1e-16)
    sigma2_omega: InverseGamma = InverseGamma(2.0, 1e8)
    tau2: InverseGamma = InverseGamma(2.0, 1e4)
    sigma2_H: InverseGamma = InverseGamma(2.0, 1e6)
    h0: Optional[TruncatedNormal] = None
    fixed_sigma2_H: Optional[float] = None

    def __post_init__(self):
        lo, hi = self.A_range
        if not (0 <= lo < hi):
            raise ValidationError("A_range must satisfy 0 <= lower < upper")
        if self.fixed_sigma2_H is not None and not self.fixed_sigma2_H > 0:
            raise ValidationError("fixed sigma2_H must be positive")

    def resolved(self, h_obs) -> "PriorSpec":
        if self.h0 is not None:
            return self
        return replace(self, h0=TruncatedNormal(float(np.asarray(h_obs)[0]), 500.0, 0.0))

    def log_A(self, A: float) -> float:
        lo, hi = self.A_range
        return -math.log(hi - lo) if lo <= A <= hi else -math.inf


# -- states and problems --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParameterState:
    A: float
    h0: float
    sigma2_H: float
    sigma2_omega: float
    tau2: float
    omega_quad: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega_quad", np.asarray(self.omega_quad, dtype=float))


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Everything the likelihood needs besides the sampled parameters.

    ``grid.obs_x`` are the thickness observation locations and ``fields``
    are evaluated on that grid.
    """

    grid: FlowlineGrid
    fields: SurfaceFields
    h_obs: np.ndarray
    width_model: WidthModel
    constants: PhysicalConstants = PhysicalConstants()
    C0: float = 0.0
    h_max: float = DEFAULT_H_MAX
    selection: str = "continuity"

    def __post_init__(self):
        h = np.asarray(self.h_obs, dtype=float)
        object.__setattr__(self, "h_obs", h)
        self.fields.check_grid(self.grid)
        if h.shape != self.grid.obs_x.shape:
            raise ValidationError("thickness observations must match grid.obs_x")
        if self.width_model.quad_x.shape != self.grid.quad_x.shape or not np.allclose(
            self.width_model.quad_x, self.grid.quad_x
        ):
            raise ValidationError("width model must live on the quadrature grid")

    def root_selection(self) -> RootSelection:
        if self.selection == "nearest-to-reference":
            return RootSelection("nearest-to-reference", self.h_obs)
        return RootSelection(self.selection)

    def thickness(self, A, h0, omega_quad) -> np.ndarray:
        """Model thickness at the observation points (NaN where unsolvable)."""
        seg = segment_flux(self.grid, self.fields.a_at_quad, self.fields.tau_at_quad, omega_quad)
        F = _flux_from_segments(self.grid, seg, self.C0)
        omega_obs = self.grid.at_obs(omega_quad)
        k = deformation_coefficient(self.fields.s_at_obs, A, self.constants)
        br = quintic_brackets(F, self.fields.v_s_at_obs * omega_obs, k * omega_obs, self.h_max)
        return select_roots(br, self.root_selection(), h0)


def _gauss_loglik(sse: float, n: int, sigma2: float) -> float:
    return -0.5 * n * (LOG_2PI + math.log(sigma2)) - 0.5 * sse / sigma2


def log_likelihood(state: ParameterState, problem: FitProblem) -> float:
    """Independent normal errors around the forward-model thickness."""
    h = problem.thickness(state.A, state.h0, state.omega_quad)
    if np.any(np.isnan(h)):
        return -math.inf
    r = problem.h_obs - h
    return _gauss_loglik(float(r @ r), r.size, state.sigma2_H)


def log_prior(state: ParameterState, prior: PriorSpec, problem: FitProblem, factor: Optional[WidthPriorFactor] = None) -> float:
    """Sum of the component log-priors, -inf outside the support."""
    prior = prior.resolved(problem.h_obs)
    if np.any(state.omega_quad <= 0) or not (state.sigma2_omega > 0 and state.tau2 > 0):
        return -math.inf
    lp = prior.log_A(state.A) + prior.h0.logpdf(state.h0)
    if prior.fixed_sigma2_H is None:
        lp += prior.sigma2_H.logpdf(state.sigma2_H)
    lp += prior.sigma2_omega.logpdf(state.sigma2_omega) + prior.tau2.logpdf(state.tau2)
    if not math.isfinite(lp):
        return -math.inf
    factor = factor or WidthPriorFactor(problem.width_model)
    return lp + factor.log_density(state.omega_quad, state.sigma2_omega, state.tau2)


def log_posterior(state, prior, problem, factor=None) -> float:
    lp = log_prior(state, prior, problem, factor)
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(state, problem)


def metropolis_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Accept with probability min(1, exp(log_ratio))."""
    if log_ratio >= 0:
        return True
    if not log_ratio > -math.inf:
        return False
    return math.log(rng.random()) < log_ratio


# -- chains ------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 20_000
    n_chains: int = 3
    seed: int = 0
    burn_in: float = 0.5
    n_keep: int = 1000
    step_sizes: dict = field(default_factory=dict)
    adapt: bool = True
    adapt_every: int = 50

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ValidationError("n_iterations must be nonnegative")
        if self.n_chains < 1:
            raise ValidationError("need at least one chain")
        if not 0 <= self.burn_in < 1:
            raise ValidationError("burn_in must be a fraction in [0, 1)")
        if self.n_keep < 1:
            raise ValidationError("n_keep must be positive")
        unknown = set(self.step_sizes) - set(BLOCKS)
        if unknown:
            raise ValidationError(f"unknown proposal blocks {sorted(unknown)}")

    @property
    def n_burn(self) -> int:
        return int(self.n_iterations * self.burn_in)

    @property
    def thin(self) -> int:
        return max(1, (self.n_iterations - self.n_burn) // self.n_keep)

    def kept_iterations(self) -> np.ndarray:
        """Zero-based iteration indices that are stored."""
        idx = np.arange(self.n_burn, self.n_iterations)
        idx = idx[(idx - self.n_burn) % self.thin == self.thin - 1]
        return idx[-self.n_keep:] if idx.size > self.n_keep else idx


_TARGET_RATE = {"A": 0.44, "h0": 0.44, "sigma2_H": 0.44, "width_hyper": 0.35, "omega": 0.234}


def _default_steps(m: int) -> dict:
    return {"A": 1.5, "h0": 0.2, "sigma2_H": 0.8, "width_hyper": 0.5, "omega": 1.2 / math.sqrt(m)}


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _expit(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


class MetropolisSampler:
    """One Markov chain over the posterior, advanced block by block.

    ``flat_likelihood=True`` replaces the likelihood with a constant so the
    chain targets the prior (used to validate the sampler).
    """

    def __init__(
        self,
        problem: FitProblem,
        prior: PriorSpec,
        init: ParameterState,
        rng: np.random.Generator,
        steps: Optional[dict] = None,
        flat_likelihood: bool = False,
        factor: Optional[WidthPriorFactor] = None,
    ):
        self.problem = problem
        self.prior = prior.resolved(problem.h_obs)
        self.rng = rng
        self.flat = flat_likelihood
        self.factor = factor or WidthPriorFactor(problem.width_model)
        self.steps = {**_default_steps(self.factor.m), **(steps or {})}
        self.A_lo, self.A_hi = self.prior.A_range
        g = problem.grid
        net = problem.fields.a_at_quad - problem.fields.tau_at_quad
        self._net_dx = 0.5 * (net[1:] + net[:-1]) * g.spacing
        self._k_unit = deformation_coefficient(problem.fields.s_at_obs, 1.0, problem.constants)
        self._sel = problem.root_selection()
        self.n_obs = problem.h_obs.size
        self.proposed = dict.fromkeys(BLOCKS, 0)
        self.accepted = dict.fromkeys(BLOCKS, 0)
        self._set_state(init)

    # state management

    def _set_state(self, s: ParameterState):
        self.A, self.h0 = float(s.A), float(s.h0)
        fixed = self.prior.fixed_sigma2_H
        self.sigma2_H = float(fixed if fixed is not None else s.sigma2_H)
        self.sigma2_omega, self.tau2 = float(s.sigma2_omega), float(s.tau2)
        self.omega = np.array(s.omega_quad, dtype=float)
        self.d = self.factor.scales(self.sigma2_omega, self.tau2)
        self.z = self.factor.to_white(self.omega, self.d)
        self.br, self.sse = self._solve(self.A, self.omega, self.h0)

    @property
    def state(self) -> ParameterState:
        return ParameterState(self.A, self.h0, self.sigma2_H, self.sigma2_omega, self.tau2, self.omega.copy())

    def _brackets(self, A, omega):
        p = self.problem
        F = p.C0 + _flux_from_segments(p.grid, self._net_dx * (0.5 * (omega[1:] + omega[:-1])), 0.0)
        omega_obs = p.grid.at_obs(omega)
        return quintic_brackets(F, p.fields.v_s_at_obs * omega_obs, A * self._k_unit * omega_obs, p.h_max)

    def _sse(self, br, h0) -> float:
        h = select_roots(br, self._sel, h0)
        if np.any(np.isnan(h)):
            return math.inf
        r = self.problem.h_obs - h
        return float(r @ r)

    def _solve(self, A, omega, h0):
        if self.flat:
            return None, 0.0
        br = self._brackets(A, omega)
        return br, self._sse(br, h0)

    def _loglik(self, sse: float, sigma2_H: float) -> float:
        if self.flat:
            return 0.0
        if not math.isfinite(sse):
            return -math.inf
        return _gauss_loglik(sse, self.n_obs, sigma2_H)

    def log_prior(self) -> float:
        return log_prior(self.state, self.prior, self.problem, self.factor)

    def log_likelihood(self) -> float:
        return self._loglik(self.sse, self.sigma2_H)

    def log_posterior(self) -> float:
        return self.log_prior() + self.log_likelihood()

    # block updates; each returns True when the proposal was accepted

    def mh_step(self, block: str) -> bool:
        if block == "sigma2_H" and self.prior.fixed_sigma2_H is not None:
            return False
        self.proposed[block] += 1
        ok = getattr(self, f"_step_{block}")(self.steps[block])
        self.accepted[block] += ok
        return ok

    def _step_A(self, eps):
        span = self.A_hi - self.A_lo
        p = (self.A - self.A_lo) / span
        if not 0 < p < 1:
            p = min(max(p, 1e-12), 1 - 1e-12)
        u_new = _logit(p) + eps * self.rng.standard_normal()
        p_new = _expit(u_new)
        if not 0 < p_new < 1:
            return False
        A_new = self.A_lo + span * p_new
        br, sse = self._solve(A_new, self.omega, self.h0)
        log_r = self._loglik(sse, self.sigma2_H) - self._loglik(self.sse, self.sigma2_H)
        log_r += math.log(p_new) + math.log1p(-p_new) - math.log(p) - math.log1p(-p)
        if metropolis_accept(log_r, self.rng):
            self.A, self.br, self.sse = A_new, br, sse
            return True
        return False

    def _step_h0(self, eps):
        h_new = self.h0 * math.exp(eps * self.rng.standard_normal())
        sse = 0.0 if self.flat else self._sse(self.br, h_new)
        log_r = self._loglik(sse, self.sigma2_H) - self._loglik(self.sse, self.sigma2_H)
        log_r += self.prior.h0.logpdf(h_new) - self.prior.h0.logpdf(self.h0)
        log_r += math.log(h_new) - math.log(self.h0)
        if metropolis_accept(log_r, self.rng):
            self.h0, self.sse = h_new, sse
            return True
        return False

    def _step_sigma2_H(self, eps):
        s_new = self.sigma2_H * math.exp(eps * self.rng.standard_normal())
        log_r = self._loglik(self.sse, s_new) - self._loglik(self.sse, self.sigma2_H)
        log_r += self.prior.sigma2_H.logpdf(s_new) - self.prior.sigma2_H.logpdf(self.sigma2_H)
        log_r += math.log(s_new) - math.log(self.sigma2_H)
        if metropolis_accept(log_r, self.rng):
            self.sigma2_H = s_new
            return True
        return False

    def _step_width_hyper(self, eps):
        # Whitened widths stay fixed.  In omega coordinates the change in the
        # GP log-density (-log|B'| + log|B|) cancels the Jacobian of
        # omega -> omega' (+log|B'| - log|B|), leaving the terms below.
        e1, e2 = eps * self.rng.standard_normal(2)
        s2w, t2 = self.sigma2_omega * math.exp(e1), self.tau2 * math.exp(e2)
        d = self.factor.scales(s2w, t2)
        omega = self.factor.from_white(self.z, d)
        if np.any(omega <= 0):
            return False
        pr = self.prior
        log_r = pr.sigma2_omega.logpdf(s2w) - pr.sigma2_omega.logpdf(self.sigma2_omega)
        log_r += pr.tau2.logpdf(t2) - pr.tau2.logpdf(self.tau2) + e1 + e2
        br, sse = self._solve(self.A, omega, self.h0)
        log_r += self._loglik(sse, self.sigma2_H) - self._loglik(self.sse, self.sigma2_H)
        if metropolis_accept(log_r, self.rng):
            self.sigma2_omega, self.tau2, self.d, self.omega = s2w, t2, d, omega
            self.br, self.sse = br, sse
            return True
        return False

    def _step_omega(self, eps):
        z = self.z + eps * self.rng.standard_normal(self.z.size)
        omega = self.factor.from_white(z, self.d)
        if np.any(omega <= 0):
            return False
        log_r = -0.5 * (z @ z - self.z @ self.z)
        br, sse = self._solve(self.A, omega, self.h0)
        log_r += self._loglik(sse, self.sigma2_H) - self._loglik(self.sse, self.sigma2_H)
        if metropolis_accept(log_r, self.rng):
            self.z, self.omega, self.br, self.sse = z, omega, br, sse
            return True
        return False

    def sweep(self):
        for block in BLOCKS:
            self.mh_step(block)


@dataclass
class PosteriorSamples:
    """Retained draws, indexed [chain, draw] (omega adds a quad-point axis)."""

    A: np.ndarray
    h0: np.ndarray
    sigma2_H: np.ndarray
    sigma2_omega: np.ndarray
    tau2: np.ndarray
    omega: np.ndarray
    acceptance: list[dict] = field(default_factory=list)
    iterations: Optional[np.ndarray] = None

    @property
    def n_chains(self) -> int:
        return self.A.shape[0]

    @property
    def n_draws(self) -> int:
        return self.A.shape[1]

    def flat(self, name: str) -> np.ndarray:
        v = getattr(self, name)
        return v.reshape((-1,) + v.shape[2:])

    def states(self):
        for c in range(self.n_chains):
            for i in range(self.n_draws):
                yield ParameterState(*(float(getattr(self, k)[c, i]) for k in SCALARS), self.omega[c, i])

    @classmethod
    def concat(cls, chains: Sequence["PosteriorSamples"]) -> "PosteriorSamples":
        cat = lambda k: np.concatenate([getattr(c, k) for c in chains], axis=0)  # noqa: E731
        return cls(
            *(cat(k) for k in SCALARS + ("omega",)),
            acceptance=[a for c in chains for a in c.acceptance],
            iterations=chains[0].iterations if chains else None,
        )


def _adapt(sampler: MetropolisSampler, window: dict, k: int):
    gain = 3.0 / math.sqrt(k + 1.0)
    for b in BLOCKS:
        n_prop = sampler.proposed[b] - window[b][0]
        if n_prop == 0:
            continue
        rate = (sampler.accepted[b] - window[b][1]) / n_prop
        sampler.steps[b] *= math.exp(gain * (rate - _TARGET_RATE[b]))


def run_chain(
    init: ParameterState,
    config: ChainConfig,
    problem: FitProblem,
    prior: PriorSpec,
    rng: np.random.Generator,
    flat_likelihood: bool = False,
    factor: Optional[WidthPriorFactor] = None,
    callback: Optional[Callable[[int, MetropolisSampler], None]] = None,
) -> PosteriorSamples:
    """Run one chain; step sizes adapt during burn-in only."""
    sampler = MetropolisSampler(problem, prior, init, rng, config.step_sizes, flat_likelihood, factor)
    if not math.isfinite(sampler.log_posterior()):
        raise ValidationError("initial state has zero posterior density")
    keep = config.kept_iterations()
    keep_set = set(keep.tolist())
    n = keep.size
    m = sampler.factor.m
    out = {k: np.empty(n) for k in SCALARS}
    omega = np.empty((n, m))
    window = {b: (0, 0) for b in BLOCKS}
    row = 0
    for it in range(config.n_iterations):
        if it == config.n_burn:
            # Freeze adaptation and start counting acceptance afresh.
            sampler.proposed = dict.fromkeys(BLOCKS, 0)
            sampler.accepted = dict.fromkeys(BLOCKS, 0)
        sampler.sweep()
        if config.adapt and it < config.n_burn and (it + 1) % config.adapt_every == 0:
            _adapt(sampler, window, (it + 1) // config.adapt_every)
            window = {b: (sampler.proposed[b], sampler.accepted[b]) for b in BLOCKS}
        if it in keep_set:
            for k in SCALARS:
                out[k][row] = getattr(sampler, k)
            omega[row] = sampler.omega
            row += 1
        if callback is not None:
            callback(it, sampler)
    rates = {b: (sampler.accepted[b] / sampler.proposed[b]) if sampler.proposed[b] else float("nan") for b in BLOCKS}
    rates["steps"] = dict(sampler.steps)
    return PosteriorSamples(
        *(out[k][None] for k in SCALARS), omega=omega[None], acceptance=[rates], iterations=keep
    )


def draw_initial_state(
    problem: FitProblem,
    prior: PriorSpec,
    rng: np.random.Generator,
    factor: Optional[WidthPriorFactor] = None,
    require_likelihood: bool = True,
    max_tries: int = 10_000,
) -> ParameterState:
    """Prior draw with finite posterior density (retried until feasible)."""
    prior = prior.resolved(problem.h_obs)
    factor = factor or WidthPriorFactor(problem.width_model)
    lo, hi = prior.A_range
    for _ in range(max_tries):
        s2w = float(prior.sigma2_omega.sample(rng))
        t2 = float(prior.tau2.sample(rng))
        d = factor.scales(s2w, t2)
        omega = factor.from_white(rng.standard_normal(factor.m), d)
        s2h = prior.fixed_sigma2_H if prior.fixed_sigma2_H is not None else float(prior.sigma2_H.sample(rng))
        state = ParameterState(
            A=float(rng.uniform(lo, hi)),
            h0=float(prior.h0.sample(rng)),
            sigma2_H=s2h,
            sigma2_omega=s2w,
            tau2=t2,
            omega_quad=omega,
        )
        if np.any(omega <= 0):
            continue
        if not require_likelihood or math.isfinite(log_likelihood(state, problem)):
            return state
    raise ValidationError("could not draw a feasible initial state from the prior")


def chain_seeds(seed: int, n_chains: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_chains)


def run_chains(
    problem: FitProblem,
    prior: PriorSpec,
    config: ChainConfig,
    flat_likelihood: bool = False,
    inits: Optional[Sequence[ParameterState]] = None,
) -> PosteriorSamples:
    """Independent chains from dispersed prior draws, one seed stream each."""
    factor = WidthPriorFactor(problem.width_model)
    results = []
    for i, ss in enumerate(chain_seeds(config.seed, config.n_chains)):
        init_ss, run_ss = ss.spawn(2)
        if inits is not None:
            init = inits[i]
        else:
            init = draw_initial_state(
                problem, prior, np.random.default_rng(init_ss), factor, require_likelihood=not flat_likelihood
            )
        results.append(
            run_chain(init, config, problem, prior, np.random.default_rng(run_ss), flat_likelihood, factor)
        )
    return PosteriorSamples.concat(results)


# -- prediction -------------------------------------------------------------


@dataclass
class ThicknessPrediction:
    x: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    mean_noisy: np.ndarray
    lo_noisy: np.ndarray
    hi_noisy: np.ndarray
    n_dropped: np.ndarray
    n_states: int

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def thickness_draws(samples: PosteriorSamples, problem: FitProblem) -> np.ndarray:
    """Forward-model thickness for every retained state, shape (n_states, n_points)."""
    A = samples.flat("A")
    h0 = samples.flat("h0")
    omega = samples.flat("omega")
    p = problem
    seg = segment_flux(p.grid, p.fields.a_at_quad, p.fields.tau_at_quad, omega)
    F = _flux_from_segments(p.grid, seg, p.C0)
    omega_obs = p.grid.at_obs(omega)
    k = deformation_coefficient(p.fields.s_at_obs[None, :], A[:, None], p.constants)
    br = quintic_brackets(F, p.fields.v_s_at_obs * omega_obs, k * omega_obs, p.h_max)
    return select_roots(br, p.root_selection(), h0)


def predict_thickness(
    samples: PosteriorSamples,
    problem: FitProblem,
    seed: int = 0,
    noise_draws: int = 10,
    level: float = 0.95,
) -> ThicknessPrediction:
    """Posterior mean and pointwise credible band of thickness.

    ``problem.grid.obs_x`` are the prediction locations.  The noisy band
    adds N(0, sigma2_H) draws per state.  States without a solution at a
    point are left out there and counted.
    """
    if samples.n_draws == 0:
        raise ValidationError("no posterior samples")
    h = thickness_draws(samples, problem)
    n_states, n_pts = h.shape
    bad = np.isnan(h)
    n_dropped = bad.sum(axis=0)
    if np.any(n_dropped > 0.5 * n_states):
        raise ValidationError("more than half of the states have no solution at some prediction point")
    q = [(1 - level) / 2, (1 + level) / 2]
    hm = np.ma.masked_invalid(h)
    mean = hm.mean(axis=0).filled(np.nan)
    lo, hi = np.nanquantile(h, q, axis=0)
    rng = np.random.default_rng(seed)
    sd = np.sqrt(samples.flat("sigma2_H"))
    noise = rng.standard_normal((noise_draws, n_states, 1)) * sd[None, :, None]
    noisy = (h[None] + noise).reshape(-1, n_pts)
    lo_n, hi_n = np.nanquantile(noisy, q, axis=0)
    mean_n = np.nanmean(noisy, axis=0)
    return ThicknessPrediction(problem.grid.obs_x.copy(), mean, lo, hi, mean_n, lo_n, hi_n, n_dropped, n_states)


# -- diagnostics --------------------------------------------------------------


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n] / n
    return ac


def split_rhat_ess(chains) -> tuple[float, float]:
    """Split potential scale reduction and effective sample size.

    ``chains`` is (n_chains, n_draws).  ESS uses Geyer's initial monotone
    sequence on the combined autocorrelation.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValidationError("expected an (n_chains, n_draws) array")
    half = x.shape[1] // 2
    if half < 2:
        return float("nan"), float("nan")
    s = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    m, n = s.shape
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return float("nan"), float("nan")
    var_plus = (n - 1) / n * W + B / n
    rhat = math.sqrt(var_plus / W)
    acov = np.array([_autocov(c) for c in s])
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum adjacent pairs while positive, enforcing monotonicity.
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    ess = m * n / max(tau, 1.0 / math.log10(max(m * n, 10)))
    return rhat, float(ess)


def chain_diagnostics(samples: PosteriorSamples) -> dict[str, dict[str, float]]:
    """Split R-hat and ESS for each scalar parameter."""
    if samples.n_chains < 2:
        raise ValidationError("diagnostics need at least two chains")
    out = {}
    for k in SCALARS:
        arr = getattr(samples, k)
        if np.ptp(arr) == 0:
            continue
        rhat, ess = split_rhat_ess(arr)
        out[k] = {"rhat": rhat, "ess": ess}
    return out


def diagnostics_from_arrays(chains: Sequence[np.ndarray]) -> dict[str, float]:
    lengths = {len(c) for c in chains}
    if len(lengths) != 1:
        raise ValidationError("chains must have equal length")
    rhat, ess = split_rhat_ess(np.vstack(chains))
    return {"rhat": rhat, "ess": ess}


def summarize(values, level: float = 0.95) -> dict[str, float]:
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2])
    return {"mean": float(v.mean()), "lo": float(lo), "hi": float(hi)}
