import math

import pytest

from Multiplexing.errors import DomainError
from Multiplexing.netparams import KM, LinkGeometry, NetworkParams, dashed_line_distance, eta, km_to_m, s_to_us, t_c


def test_communication_time_at_50_km_is_250_us(default_params, geom_50):
    assert t_c(default_params, geom_50) == 250e-6


def test_eta_combines_coupling_and_half_the_fiber(default_params, geom_50):
    expected = 0.3 * 0.3 * 10 ** (-0.2 * 50 / 20)
    assert eta(default_params, geom_50) == pytest.approx(expected, rel=1e-12)
    assert eta(default_params, geom_50) == pytest.approx(0.0284605, rel=1e-5)


def test_eta_is_one_without_losses(lossless):
    assert eta(lossless, LinkGeometry.from_km(123)) == 1.0


def test_dashed_line_sits_at_40_km(default_params):
    assert dashed_line_distance(default_params) / KM == pytest.approx(40.0)


def test_unit_helpers():
    assert km_to_m(50) == 50_000.0
    assert s_to_us(250e-6) == pytest.approx(250.0)
    assert LinkGeometry.from_km(12.5).d_km == pytest.approx(12.5)


@pytest.mark.parametrize("distance", [0.0, -1.0, math.inf, math.nan])
def test_geometry_rejects_non_positive_or_non_finite_distance(distance):
    with pytest.raises(DomainError):
        LinkGeometry(distance)


@pytest.mark.parametrize(
    "overrides",
    [
        {"p_out": 0.0},
        {"p_out": 1.2},
        {"p_fc": -0.1},
        {"alpha_db_per_km": -0.2},
        {"t_eg": 0.0},
        {"t_sg": -1e-6},
        {"c_fiber": 0.0},
        {"p_out": math.nan},
    ],
)
def test_params_reject_out_of_range_values(overrides):
    with pytest.raises(DomainError):
        NetworkParams(**overrides)


def test_domain_error_is_a_value_error():
    with pytest.raises(ValueError):
        NetworkParams(p_fc=2.0)
