import pytest

from Multiplexing.experiments import McSettings
from Multiplexing.netparams import LinkGeometry, NetworkParams


@pytest.fixture
def default_params() -> NetworkParams:
    return NetworkParams()


@pytest.fixture
def geom_50() -> LinkGeometry:
    return LinkGeometry.from_km(50)


@pytest.fixture
def lossless() -> NetworkParams:
    """eta = 1 at every distance."""
    return NetworkParams(p_out=1.0, p_fc=1.0, alpha_db_per_km=0.0)


@pytest.fixture
def quick_mc() -> McSettings:
    return McSettings(replications=2, successes=200, seed=11, workers=1)


@pytest.fixture
def agreement_mc() -> McSettings:
    return McSettings(replications=4, successes=2500, seed=2024, workers=1)
