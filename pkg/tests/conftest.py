"""Pytest configuration and fixtures."""

import numpy as np
import pytest

from src.models.cohort import Cohort
from src.models.synthetic import SynthConfig
from src.services.cohort_loader import export_cohort
from src.services.synthetic import generate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run slow acceptance experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def make_cohort():
    """Build a cohort from column lists; ids are p0, p1, ..."""

    def _make(times, events, treatment, covariates=None, scores=None, centers=None, feature_names=None):
        n = len(times)
        if covariates is None:
            covariates = np.zeros((n, 0))
        covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
        names = feature_names or [f"x{j + 1}" for j in range(covariates.shape[1])]
        return Cohort.from_arrays(
            ids=[f"p{i}" for i in range(n)],
            times=times,
            events=events,
            treatment=treatment,
            covariates=covariates,
            feature_names=names,
            external_scores=scores,
            centers=centers,
        )

    return _make


@pytest.fixture
def small_cohort(make_cohort):
    """Twelve hand-written patients, two covariates, both arms."""
    return make_cohort(
        times=[2.0, 5.0, 3.5, 8.0, 1.0, 6.5, 4.0, 9.0, 7.0, 2.5, 5.5, 10.0],
        events=[1, 0, 1, 1, 1, 0, 1, 0, 1, 1, 0, 0],
        treatment=[1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0],
        covariates=[
            [0.1, 1.0], [0.4, 0.0], [-0.3, 1.0], [0.8, 0.0], [1.2, 1.0], [-0.5, 0.0],
            [0.0, 1.0], [0.6, 0.0], [-1.1, 1.0], [0.3, 0.0], [0.9, 1.0], [-0.2, 0.0],
        ],
        scores=[0.6, 0.3, 0.5, 0.2, 0.9, 0.1, 0.4, 0.2, 0.3, 0.7, 0.5, 0.1],
    )


@pytest.fixture(scope="session")
def synth_cohort():
    """Confounded synthetic cohort (hidden factor drives treatment and hazard)."""
    return generate(SynthConfig(n=300, seed=3))


@pytest.fixture(scope="session")
def rct_synth():
    """Randomized synthetic cohort."""
    return generate(SynthConfig(n=300, rct_mode=True, seed=4))


@pytest.fixture(scope="session")
def multicenter_synth():
    """Three-center synthetic cohort."""
    return generate(SynthConfig(n=600, centers=3, seed=5))


@pytest.fixture
def small_grid():
    """One configuration per method; external scores keep runs fast."""
    return {
        "k_grid": [5],
        "include_score_grid": [False],
        "n_bins_grid": [3],
        "moments_grid": [1],
        "clip_grid": [0.05],
        "score_sources": ["external"],
    }


@pytest.fixture
def cohort_csv(tmp_path, synth_cohort):
    """The confounded synthetic cohort written as CSV."""
    return export_cohort(synth_cohort.cohort, tmp_path / "cohort.csv")
