from __future__ import annotations

import numpy as np
import pytest

from poroscale.biot import FrequencySpec, reference_region
from poroscale.config import load_config
from poroscale.fields import spectral_derivatives
from poroscale.forward import GridSpec, SourceSpec, solve_biot_spectral
from poroscale.residuals import build_factor_table, precompute_gram


@pytest.fixture(scope="session")
def regions():
    return reference_region(1), reference_region(2)


@pytest.fixture(scope="session")
def default_config():
    return load_config()


@pytest.fixture(scope="session")
def fields(default_config, regions):
    """Noiseless training fields of both regions on the default grid and frequency."""
    ph = default_config.physics
    grid = GridSpec(ph.L, ph.n)
    src = SourceSpec(ph.D, ph.varsigma, (0.0, 0.0))
    return [solve_biot_spectral(p, FrequencySpec(ph.omega), src, grid) for p in regions]


@pytest.fixture(scope="session")
def caches(fields):
    table = build_factor_table(fields[0].omega)
    return table, [precompute_gram(spectral_derivatives(f), table) for f in fields]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
