import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flowline_bayes.core import ObservationSet, build_grid
from flowline_bayes.inference import ChainConfig
from flowline_bayes.simulation import ExperimentSpec, build_fit_problem, generate_observations, make_truth_profile


@pytest.fixture(scope="session")
def truth():
    return make_truth_profile()


@pytest.fixture(scope="session")
def synthetic(truth):
    spec = ExperimentSpec(10, 50.0, seed=3, chain=ChainConfig(n_iterations=400, n_chains=2, n_keep=100))
    return spec, generate_observations(truth, spec)


@pytest.fixture(scope="session")
def fit_problem(synthetic):
    spec, data = synthetic
    return build_fit_problem(data, spec)


def toy_observations(n=40, length=200_000.0, seed=0):
    """Smooth, noisy surface series on a regular grid."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, length, n)
    u = x / length
    return ObservationSet(
        thickness=(x[2:-2:4], 2000.0 - 800.0 * u[2:-2:4]),
        velocity=(x, 5.0 + 200.0 * u**2 + rng.normal(0, 2.0, n)),
        elevation=(x, 2000.0 - 800.0 * u**2 + rng.normal(0, 1.0, n)),
        accumulation=(x, 0.4 - 0.1 * u + rng.normal(0, 0.01, n)),
        thinning=(x, 0.1 + 0.5 * u**3 + rng.normal(0, 0.01, n)),
        width_candidates={"a": (x, 60e3 - 20e3 * u), "b": (x, 80e3 - 20e3 * u)},
    )


@pytest.fixture
def toy_obs():
    return toy_observations()


@pytest.fixture
def toy_grid(toy_obs):
    return build_grid(200_000.0, 2000.0, toy_obs.thickness[0])


def pytest_terminal_summary(terminalreporter):
    report = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(report):
        terminalreporter.write_line(report[key])
