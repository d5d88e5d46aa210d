import math

import pytest

from Multiplexing.analytic import (
    DISTILLATION_SUCCESS,
    Protocol,
    crossover_distance,
    expected_local_successes,
    n_effective,
    n_max_mbk,
    n_max_mepl,
    rate_for,
    rate_mbk,
    rate_mepl,
    rate_mps,
)
from Multiplexing.errors import DomainError, ProtocolConstraintError, UnbracketedRootError
from Multiplexing.netparams import KM, LinkGeometry, NetworkParams, eta, t_c
from Multiplexing.protocols import ProtocolConfig

MEPL_N2 = ProtocolConfig(Protocol.MEPL, n_qubits=2)
MPS_HIGH = ProtocolConfig(Protocol.MPS, p_em=0.1)
MPS_LOW = ProtocolConfig(Protocol.MPS, p_em=0.01)


## -------------------------------------------------------------------------------------------------------------- ##
## Reference values at 50 km

def test_mbk_two_qubits_at_50_km(default_params, geom_50):
    result = rate_mbk(default_params, geom_50, 2)
    assert result.rate == pytest.approx(3.24, rel=1e-9)
    assert result.n_effective == 2
    assert result.attempt_rate == pytest.approx(8000.0)


def test_mepl_two_and_three_qubits_at_50_km(default_params, geom_50):
    assert rate_mepl(default_params, geom_50, 2).rate == pytest.approx(9.48683, rel=1e-5)
    assert rate_mepl(default_params, geom_50, 3).rate == pytest.approx(17.076, rel=1e-3)


@pytest.mark.parametrize("p_em, expected", [(0.1, 20.25), (0.01, 2.025)])
def test_mps_at_50_km(default_params, geom_50, p_em, expected):
    assert rate_mps(default_params, geom_50, p_em).rate == pytest.approx(expected, rel=1e-9)


def test_mps_is_independent_of_qubit_count(default_params, geom_50):
    a = rate_for(default_params, geom_50, ProtocolConfig(Protocol.MPS, n_qubits=1, p_em=0.1))
    b = rate_for(default_params, geom_50, ProtocolConfig(Protocol.MPS, n_qubits=7, p_em=0.1))
    assert a == b
    assert a.n_effective == 1


def test_mepl_two_qubits_beats_serial_epl_bound(default_params, geom_50):
    serial = eta(default_params, geom_50) / (16 * t_c(default_params, geom_50))
    assert rate_mepl(default_params, geom_50, 2).rate > serial


def test_mepl_uses_distillation_success_of_one_eighth(lossless):
    geom = LinkGeometry.from_km(10)
    expected = (2 / 3) * DISTILLATION_SUCCESS / t_c(lossless, geom)
    assert rate_mepl(lossless, geom, 2).rate == pytest.approx(expected, rel=1e-12)


## -------------------------------------------------------------------------------------------------------------- ##
## Qubit budgets

@pytest.mark.parametrize(
    "t_sg_us, mbk, mepl",
    [(200, 2, 3), (50, 5, 6), (25, 10, 11), (250, 1, 2), (1000, 1, 2)],
)
def test_n_max_at_50_km(geom_50, t_sg_us, mbk, mepl):
    params = NetworkParams(t_sg=t_sg_us * 1e-6)
    assert n_max_mbk(params, geom_50) == mbk
    assert n_max_mepl(params, geom_50) == mepl


def test_mbk_saturates_beyond_n_max(default_params, geom_50):
    saturated = rate_mbk(default_params, geom_50, 2).rate
    for n in (3, 5, 20):
        assert rate_mbk(default_params, geom_50, n).rate == saturated


def test_mbk_rate_ratio_follows_min_n_n_max(default_params):
    geom = LinkGeometry.from_km(150)
    n_max = n_max_mbk(default_params, geom)
    single = rate_mbk(default_params, geom, 1).rate
    for n in range(1, n_max + 3):
        assert rate_mbk(default_params, geom, n).rate / single == pytest.approx(min(n, n_max))


def test_mepl_is_non_decreasing_and_flat_past_n_max(geom_50):
    params = NetworkParams(t_sg=25e-6)
    rates = [rate_mepl(params, geom_50, n).rate for n in range(2, 15)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert rates[11 - 2] == rates[-1]


def test_mbk_single_qubit_is_standard_bk(default_params, geom_50):
    expected = eta(default_params, geom_50) ** 2 / 2 / t_c(default_params, geom_50)
    assert rate_mbk(default_params, geom_50, 1).rate == pytest.approx(expected, rel=1e-12)


def test_n_effective_dispatch(default_params, geom_50):
    assert n_effective(default_params, geom_50, Protocol.MBK, 9) == 2
    assert n_effective(default_params, geom_50, "mepl", 9) == 3
    assert n_effective(default_params, geom_50, Protocol.MPS, 9) == 1


## -------------------------------------------------------------------------------------------------------------- ##
## Errors

def test_mbk_needs_a_qubit(default_params, geom_50):
    with pytest.raises(ProtocolConstraintError):
        rate_mbk(default_params, geom_50, 0)


def test_mepl_needs_two_qubits(default_params, geom_50):
    with pytest.raises(ProtocolConstraintError, match="at least two qubits"):
        rate_mepl(default_params, geom_50, 1)


@pytest.mark.parametrize("p_em", [0.0, -0.1, 1.5])
def test_mps_rejects_p_em_outside_unit_interval(default_params, geom_50, p_em):
    with pytest.raises(DomainError):
        rate_mps(default_params, geom_50, p_em)


def test_protocol_parse():
    assert Protocol.parse("MePL") is Protocol.MEPL
    assert Protocol.parse(Protocol.MPS) is Protocol.MPS
    with pytest.raises(DomainError, match="unknown protocol"):
        Protocol.parse("epl")


## -------------------------------------------------------------------------------------------------------------- ##
## Expected local successes

def test_expected_local_successes_at_50_km(default_params, geom_50):
    assert expected_local_successes(default_params, geom_50, 0.1) == pytest.approx(0.35576, rel=1e-4)


def test_expected_local_successes_scales_linearly_with_p_em(default_params):
    geom = LinkGeometry.from_km(80)
    assert expected_local_successes(default_params, geom, 0.1) == pytest.approx(10 * expected_local_successes(default_params, geom, 0.01))


def test_expected_local_successes_peak_stays_below_one(default_params):
    # d * 10^(-alpha d / 20) peaks at d = 20 / (alpha ln 10)
    peak_km = 20 / (default_params.alpha_db_per_km * math.log(10))
    peak = expected_local_successes(default_params, LinkGeometry.from_km(peak_km), 0.1)
    assert peak_km == pytest.approx(43.43, abs=0.01)
    assert peak == pytest.approx(0.3595, rel=1e-3)
    assert peak < 1


## -------------------------------------------------------------------------------------------------------------- ##
## Crossovers

def test_mepl_crosses_high_rate_mps(default_params):
    distance = crossover_distance(default_params, MEPL_N2, MPS_HIGH)
    assert 100 * KM <= distance <= 130 * KM
    assert distance / KM == pytest.approx(121.5, abs=1.0)

    geom = LinkGeometry(distance)
    a, b = rate_for(default_params, geom, MEPL_N2).rate, rate_for(default_params, geom, MPS_HIGH).rate
    assert a == pytest.approx(b, rel=1e-5)


def test_mps_wins_below_crossover_and_loses_beyond(default_params):
    distance = crossover_distance(default_params, MEPL_N2, MPS_HIGH)
    near, far = LinkGeometry(distance / 2), LinkGeometry(distance * 1.5)
    assert rate_for(default_params, near, MPS_HIGH).rate > rate_for(default_params, near, MEPL_N2).rate
    assert rate_for(default_params, far, MPS_HIGH).rate < rate_for(default_params, far, MEPL_N2).rate


def test_no_crossover_against_low_rate_mps(default_params):
    assert crossover_distance(default_params, MEPL_N2, MPS_LOW) is None


def test_strict_crossover_raises_without_sign_change(default_params):
    with pytest.raises(UnbracketedRootError):
        crossover_distance(default_params, MEPL_N2, MPS_LOW, strict=True)


def test_identical_configs_have_no_crossover(default_params):
    assert crossover_distance(default_params, MEPL_N2, MEPL_N2) is None


def test_crossover_rejects_inverted_bracket(default_params):
    with pytest.raises(DomainError):
        crossover_distance(default_params, MEPL_N2, MPS_HIGH, bracket=(300 * KM, 10 * KM))


def test_crossover_reports_rates_that_underflow(default_params):
    # eta^2 is below the smallest double at 20000 km, so the MPS rate is exactly zero
    assert rate_mps(default_params, LinkGeometry.from_km(20000), 0.1).rate == 0.0
    with pytest.raises(DomainError, match="underflows"):
        crossover_distance(default_params, MEPL_N2, MPS_HIGH, bracket=(10 * KM, 20000 * KM))


def test_mepl_beats_low_rate_mps_from_25_km(default_params):
    for d_km in (25, 50, 100, 150, 200):
        geom = LinkGeometry.from_km(d_km)
        assert rate_for(default_params, geom, MEPL_N2).rate > rate_for(default_params, geom, MPS_LOW).rate
