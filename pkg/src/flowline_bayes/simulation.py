"""Synthetic-truth experiments: simulate data, fit, and score coverage."""
from __future__ import annotations

import json
import math
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    FlowlineGrid,
    ObservationSet,
    PhysicalConstants,
    Series,
    ValidationError,
    as_series,
    build_grid,
    linear_interp,
)
from .dynamics import DynamicsParams, synthetic_velocity
from .gp_width import WidthHyperparams, WidthModel, width_mean_function
from .inference import (
    ChainConfig,
    FitProblem,
    PosteriorSamples,
    PriorSpec,
    ThicknessPrediction,
    chain_diagnostics,
    predict_thickness,
    run_chains,
    summarize,
)
from .smoothing import SurfaceFields, central_difference_slope

BUILTIN_VERSION = "analytic-v1"
PROFILE_SERIES = ("thickness", "width", "elevation", "accumulation", "thinning")


@dataclass(frozen=True, eq=False)
class TruthProfile:
    """True glacier state as (locations, values) series.

    ``thickness`` locations are the points where predictions are scored.
    The other series must cover the whole quadrature grid.
    """

    domain_length: float
    thickness: Series
    width: Series
    elevation: Series
    accumulation: Series
    thinning: Series
    version: str = "csv"

    def __post_init__(self):
        if not self.domain_length > 0:
            raise ValidationError("domain_length must be positive")
        for name in PROFILE_SERIES:
            object.__setattr__(self, name, as_series(*getattr(self, name), name=name))
        if np.any(self.thickness[1] <= 0) or np.any(self.width[1] <= 0):
            raise ValidationError("true thickness and width must be positive")
        if self.thickness[0][-1] > self.domain_length:
            raise ValidationError("thickness points extend past the domain")

    @property
    def prediction_x(self) -> np.ndarray:
        return self.thickness[0]

    def thickness_at(self, x) -> np.ndarray:
        return linear_interp(self.thickness, x)

    def slope(self) -> Series:
        return central_difference_slope(self.elevation)

    def width_candidates(self) -> dict[str, Series]:
        """The true width plus two wider alternatives."""
        x, w = self.width
        return {"narrowest": (x, w), "medium": (x, 1.25 * w), "wide": (x, 1.5 * w)}

    def equals(self, other: "TruthProfile") -> bool:
        if self.domain_length != other.domain_length:
            return False
        return all(
            np.array_equal(getattr(self, n)[i], getattr(other, n)[i]) for n in PROFILE_SERIES for i in (0, 1)
        )


def _builtin_profile() -> TruthProfile:
    L = 272_800.0
    x_field = np.arange(0.0, 274_000.0, 1000.0)
    x_h = np.arange(1000.0, 273_000.0, 1000.0)
    u = x_h / L
    h = 2600.0 - 1300.0 * u**1.5
    for centre, depth, width in ((130e3, 600.0, 9e3), (200e3, 550.0, 7e3), (250e3, 650.0, 6e3)):
        h -= depth * np.exp(-0.5 * ((x_h - centre) / width) ** 2)
    uf = x_field / L
    omega = 35e3 + 55e3 * np.exp(-x_field / 110e3)
    # Slope magnitude 1e-4 + 0.006 (x / L)^1.5: nearly flat at the divide, where
    # the surface velocity is tiny, steepening toward the terminus.
    elev = 2500.0 - (1e-4 * x_field + 0.006 * L * uf**2.5 / 2.5)
    acc = 0.45 - 0.15 * uf
    thin = 0.02 + 0.5 * uf**3
    return TruthProfile(L, (x_h, h), (x_field, omega), (x_field, elev), (x_field, acc), (x_field, thin), BUILTIN_VERSION)


def read_profile_dir(path: Union[str, Path]) -> TruthProfile:
    """Profile from ``profile.json`` plus one ``<name>.csv`` per series."""
    from .io import read_series_csv

    path = Path(path)
    meta_file = path / "profile.json"
    if not meta_file.exists():
        raise ValidationError(f"{meta_file} not found")
    meta = json.loads(meta_file.read_text())
    if "domain_length" not in meta:
        raise ValidationError("profile.json lacks domain_length")
    series = {name: read_series_csv(path / f"{name}.csv") for name in PROFILE_SERIES}
    return TruthProfile(float(meta["domain_length"]), version=str(meta.get("version", "csv")), **series)


def dump_profile(profile: TruthProfile, path: Union[str, Path]) -> Path:
    from .io import write_series_csv

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in PROFILE_SERIES:
        write_series_csv(path / f"{name}.csv", getattr(profile, name))
    meta = {"domain_length": profile.domain_length, "version": profile.version}
    (path / "profile.json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def make_truth_profile(source: Optional[Union[str, Path]] = None) -> TruthProfile:
    """Built-in analytic glacier (``None`` or ``"builtin"``) or a profile directory."""
    if source is None or str(source) == "builtin":
        return _builtin_profile()
    return read_profile_dir(source)


# -- experiments -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    n_train: int
    noise_sd: float
    true_A: float = 1e-18
    seed: int = 0
    chain: ChainConfig = field(default_factory=ChainConfig)
    quad_spacing: float = 1000.0
    prior: PriorSpec = field(default_factory=PriorSpec)
    phi: float = 40_000.0

    def __post_init__(self):
        if self.n_train < 2:
            raise ValidationError("n_train must be at least 2")
        if not self.noise_sd > 0:
            raise ValidationError("noise_sd must be positive")
        if not self.true_A >= 0:
            raise ValidationError("true_A must be nonnegative")

    def seed_sequence(self) -> np.random.SeedSequence:
        """Seed stream keyed by (master seed, n_train, noise_sd)."""
        return np.random.SeedSequence([int(self.seed), int(self.n_train), int(round(self.noise_sd * 1000))])

    def label(self) -> str:
        return f"n{self.n_train}_sd{self.noise_sd:g}"


def training_locations(domain_length: float, n_train: int) -> np.ndarray:
    """Equally spaced interior points k L / (n + 1), k = 1..n."""
    return domain_length * np.arange(1, n_train + 1) / (n_train + 1)


@dataclass(frozen=True, eq=False)
class SyntheticData:
    observations: ObservationSet
    truth: TruthProfile
    train_x: np.ndarray
    h_true_train: np.ndarray


def _fields_for(truth: TruthProfile, grid: FlowlineGrid, velocity: Series) -> SurfaceFields:
    return SurfaceFields(
        v_s_at_obs=linear_interp(velocity, grid.obs_x),
        s_at_obs=linear_interp(truth.slope(), grid.obs_x),
        a_at_quad=linear_interp(truth.accumulation, grid.quad_x),
        tau_at_quad=linear_interp(truth.thinning, grid.quad_x),
    )


def generate_observations(
    truth: TruthProfile,
    spec: ExperimentSpec,
    rng: Optional[np.random.Generator] = None,
    noise_sd: Optional[float] = None,
    c: PhysicalConstants = PhysicalConstants(),
) -> SyntheticData:
    """Noisy thickness at equally spaced training points plus exact surface inputs.

    Surface velocity is synthesized at the training and prediction points so
    the true thickness solves the forward model there with ``spec.true_A``.
    ``noise_sd`` overrides ``spec.noise_sd`` (zero gives noise-free data).
    """
    sd = spec.noise_sd if noise_sd is None else float(noise_sd)
    if sd < 0:
        raise ValidationError("noise_sd must be nonnegative")
    if rng is None:
        rng = np.random.default_rng(spec.seed_sequence().spawn(2)[0])
    train_x = training_locations(truth.domain_length, spec.n_train)
    vel_x = np.union1d(train_x, truth.prediction_x)
    grid = build_grid(truth.domain_length, spec.quad_spacing, vel_x)
    omega = linear_interp(truth.width, grid.quad_x)
    h_vel = truth.thickness_at(vel_x)
    v = synthetic_velocity(
        grid,
        h_vel,
        linear_interp(truth.slope(), vel_x),
        linear_interp(truth.accumulation, grid.quad_x),
        linear_interp(truth.thinning, grid.quad_x),
        omega,
        DynamicsParams(spec.true_A, float(h_vel[0])),
        c,
    )
    h_train = truth.thickness_at(train_x)
    noisy = h_train + sd * rng.standard_normal(train_x.size)
    if np.any(noisy <= 0):
        raise ValidationError("noise drove a thickness observation nonpositive")
    obs = ObservationSet(
        thickness=(train_x, noisy),
        velocity=(vel_x, v),
        elevation=truth.elevation,
        accumulation=truth.accumulation,
        thinning=truth.thinning,
        width_candidates=truth.width_candidates(),
    )
    return SyntheticData(obs, truth, train_x, h_train)


def build_fit_problem(
    data: SyntheticData,
    spec: ExperimentSpec,
    c: PhysicalConstants = PhysicalConstants(),
) -> FitProblem:
    """Likelihood setup on the training points with the narrowest-width mean."""
    obs = data.observations
    x, h = obs.thickness
    grid = build_grid(data.truth.domain_length, spec.quad_spacing, x)
    fields = _fields_for(data.truth, grid, obs.velocity)
    _, candidate = obs.narrowest_width()
    mean = width_mean_function(grid, fields, h, candidate, c)
    model = WidthModel(WidthHyperparams(sigma2_omega=1e8, phi=spec.phi, tau2=1e4), grid.quad_x, mean)
    return FitProblem(grid, fields, h, model, c)


def prediction_problem(fit: FitProblem, truth: TruthProfile, velocity: Series) -> FitProblem:
    """Same model evaluated at the truth profile's prediction points."""
    grid = fit.grid.with_obs(truth.prediction_x)
    fields = _fields_for(truth, grid, velocity)
    h_ref = truth.thickness_at(grid.obs_x)
    return replace(fit, grid=grid, fields=fields, h_obs=h_ref)


def width_coverage(samples: Union[PosteriorSamples, np.ndarray], width_true, level: float = 0.95) -> float:
    """Fraction of quadrature points whose true width lies in the pointwise band."""
    omega = samples.flat("omega") if isinstance(samples, PosteriorSamples) else np.asarray(samples, dtype=float)
    omega = np.atleast_2d(omega)
    if omega.shape[0] == 0:
        raise ValidationError("no posterior samples")
    truth = np.asarray(width_true, dtype=float)
    if truth.shape != omega.shape[1:]:
        raise ValidationError("true width must be on the sample grid")
    lo, hi = np.quantile(omega, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return float(np.mean((truth >= lo) & (truth <= hi)))


def band_coverage(truth, lo, hi) -> float:
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((truth >= lo) & (truth <= hi)))


def ci_width_slope(x, lo, hi) -> float:
    """Least-squares slope of band width against location."""
    return float(np.polyfit(np.asarray(x, dtype=float), np.asarray(hi) - np.asarray(lo), 1)[0])


@dataclass
class ExperimentResult:
    n_train: int
    noise_sd: float
    seed: int
    A: dict = field(default_factory=dict)
    sigma2_H: dict = field(default_factory=dict)
    width_coverage: float = math.nan
    thickness_coverage: float = math.nan
    thickness_coverage_noisy: float = math.nan
    ci_width_slope: float = math.nan
    observation_coverage: float = math.nan
    acceptance: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    runtime_s: float = math.nan
    error: Optional[str] = None
    prediction: Optional[ThicknessPrediction] = field(default=None, repr=False)
    samples: Optional[PosteriorSamples] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> dict:
        """JSON-ready summary without the array payloads."""
        d = asdict(self)
        d.pop("prediction")
        d.pop("samples")
        return d


def run_experiment(
    spec: ExperimentSpec,
    truth: Optional[TruthProfile] = None,
    keep_samples: bool = True,
) -> ExperimentResult:
    """Simulate, fit and score one cell of the study."""
    truth = truth or make_truth_profile()
    t0 = time.perf_counter()
    data_ss, chain_ss, pred_ss = spec.seed_sequence().spawn(3)
    data = generate_observations(truth, spec, np.random.default_rng(data_ss))
    fit = build_fit_problem(data, spec)
    chain = replace(spec.chain, seed=int(chain_ss.generate_state(1)[0]))
    samples = run_chains(fit, spec.prior, chain)
    pred_problem = prediction_problem(fit, truth, data.observations.velocity)
    pred = predict_thickness(samples, pred_problem, seed=int(pred_ss.generate_state(1)[0]))
    h_true = truth.thickness_at(pred.x)
    # Band at the training points, scored against the noisy observations.
    obs_pred = predict_thickness(samples, fit, seed=int(pred_ss.generate_state(2)[1]))
    result = ExperimentResult(
        n_train=spec.n_train,
        noise_sd=spec.noise_sd,
        seed=spec.seed,
        A=summarize(samples.flat("A")),
        sigma2_H=summarize(samples.flat("sigma2_H")),
        width_coverage=width_coverage(samples, linear_interp(truth.width, fit.grid.quad_x)),
        thickness_coverage=band_coverage(h_true, pred.lo, pred.hi),
        thickness_coverage_noisy=band_coverage(h_true, pred.lo_noisy, pred.hi_noisy),
        ci_width_slope=ci_width_slope(pred.x, pred.lo, pred.hi),
        observation_coverage=band_coverage(fit.h_obs, obs_pred.lo_noisy, obs_pred.hi_noisy),
        acceptance=samples.acceptance,
        diagnostics=chain_diagnostics(samples) if samples.n_chains > 1 else {},
        runtime_s=time.perf_counter() - t0,
        prediction=pred,
        samples=samples if keep_samples else None,
    )
    return result


def run_experiment_grid(
    specs: Sequence[ExperimentSpec],
    truth: Optional[TruthProfile] = None,
    keep_samples: bool = False,
) -> list[ExperimentResult]:
    """Run every cell; a failing cell is recorded with its error and the grid continues."""
    truth = truth or make_truth_profile()
    results = []
    for spec in specs:
        try:
            results.append(run_experiment(spec, truth, keep_samples))
        except Exception as exc:  # noqa: BLE001 - recorded per cell by design
            results.append(
                ExperimentResult(
                    spec.n_train,
                    spec.noise_sd,
                    spec.seed,
                    error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}",
                )
            )
    return results


def study_grid(
    n_train: Sequence[int] = (5, 10, 25),
    noise_sd: Sequence[float] = (10.0, 50.0, 100.0),
    **kw,
) -> list[ExperimentSpec]:
    return [ExperimentSpec(n, sd, **kw) for sd in noise_sd for n in n_train]
