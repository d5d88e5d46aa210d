"""
Closed-form entanglement rates for the three protocols.

These are the oracle for the Monte Carlo simulator and the fast path for
sweeps. All constant factors are taken exactly:
    - mBK:  R = (1/2) n eta^2 / t_c                      (BSM succeeds with 1/2)
    - mEPL: R = n(n-1)/(2n-1) * eta / (8 t_c)           (distillation succeeds with 1/8)
    - MPS:  R = p_em eta^2 / (4 t_eg)                   (both local BSMs in one round)

The unmultiplexed EPL scheme run serially (no pipelining of the two stages)
is bounded by eta / (16 t_c); the N = 2 value of the mEPL formula,
eta / (12 t_c), is higher because the second stage starts while the first
state is already stored.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional, Tuple

from scipy import optimize

from Multiplexing.errors import DomainError, ProtocolConstraintError, UnbracketedRootError
from Multiplexing.netparams import KM, LinkGeometry, NetworkParams, eta, t_c

if TYPE_CHECKING:
    from Multiplexing.protocols import ProtocolConfig

logger = logging.getLogger(__name__)

## Probability that the entanglement distillation step succeeds
DISTILLATION_SUCCESS = 1 / 8

## Default bracket for crossover searches, meters
CROSSOVER_BRACKET = (10 * KM, 300 * KM)


class Protocol(str, Enum):
    MBK = "mbk"
    MEPL = "mepl"
    MPS = "mps"

    @classmethod
    def parse(cls, value) -> "Protocol":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError as e:
            options = ", ".join(p.value for p in cls)
            raise DomainError(f"unknown protocol {value!r} (expected one of: {options})") from e


@dataclass(frozen=True)
class ProtocolRate:
    protocol: Protocol
    rate: float
    attempt_rate: float
    n_effective: int


## -------------------------------------------------------------------------------------------------------------- ##
## Per-attempt probabilities (shared with the protocol state machines)

def p_attempt_mbk(efficiency: float) -> float:
    """Two-photon coincidence followed by a linear-optics BSM."""
    return efficiency ** 2 / 2


def p_raw_mepl(efficiency: float) -> float:
    """Single-click raw state: one photon has to make it to the midpoint."""
    return efficiency


def p_local_mps(efficiency: float) -> float:
    """Local BSM at one node, conditional on the source having emitted a pair."""
    return efficiency / 2


def _ratio_ceil(numerator: float, denominator: float) -> int:
    # 250e-6 / 25e-6 evaluates to 10.000000000000002; round off float noise before ceil
    return math.ceil(round(numerator / denominator, 9))


def _check_p_em(p_em: float) -> None:
    if not (isinstance(p_em, (int, float)) and 0 < p_em <= 1):
        raise DomainError(f"p_em must lie in (0, 1], got {p_em!r}")


## -------------------------------------------------------------------------------------------------------------- ##
## Qubit budgets

def n_max_mbk(params: NetworkParams, geom: LinkGeometry) -> int:
    """Largest useful qubit count for mBK: ceil(t_c / t_sg), at least 1."""
    return max(1, _ratio_ceil(t_c(params, geom), params.t_sg))


def n_max_mepl(params: NetworkParams, geom: LinkGeometry) -> int:
    """One more than mBK, since one memory is pinned by the stored raw state."""
    return n_max_mbk(params, geom) + 1


def n_effective(params: NetworkParams, geom: LinkGeometry, protocol: Protocol, n_qubits: int) -> int:
    protocol = Protocol.parse(protocol)
    if protocol is Protocol.MPS:
        return 1
    if protocol is Protocol.MEPL:
        return min(n_qubits, n_max_mepl(params, geom))
    return min(n_qubits, n_max_mbk(params, geom))


## -------------------------------------------------------------------------------------------------------------- ##
## Rates

def rate_mbk(params: NetworkParams, geom: LinkGeometry, N: int) -> ProtocolRate:
    """
    Multiplexed Barrett-Kok rate.

    The swap-gate bound enters through N_max = ceil(t_c/t_sg): a node can cycle
    at most that many qubits per communication window, so
        attempt_rate = min(N, N_max) / t_c
    N = 1 is the standard BK scheme (no swap, one attempt per t_c).
    """
    if N < 1:
        raise ProtocolConstraintError(f"mBK needs at least one qubit per node, got N={N}")

    n_eff = min(N, n_max_mbk(params, geom))
    attempt_rate = n_eff / t_c(params, geom)
    rate = attempt_rate * p_attempt_mbk(eta(params, geom))

    return ProtocolRate(Protocol.MBK, rate, attempt_rate, n_eff)


def rate_mepl(params: NetworkParams, geom: LinkGeometry, N: int) -> ProtocolRate:
    """
    Multiplexed extreme-photon-loss rate.

    Stage 1 uses n qubits (time t_c / (eta n)), stage 2 the remaining n - 1
    while one memory holds the first raw state (time t_c / (eta (n - 1))).
    Qubits beyond N_max = ceil(t_c/t_sg) + 1 are not used.
    """
    if N < 2:
        raise ProtocolConstraintError(f"mEPL requires at least two qubits per node, got N={N}")

    n = min(N, n_max_mepl(params, geom))
    comm_time = t_c(params, geom)
    efficiency = eta(params, geom)

    rate = (n * (n - 1) / (2 * n - 1)) * efficiency * DISTILLATION_SUCCESS / comm_time

    # Two raw attempts streams (stage 1 with n qubits, stage 2 with n - 1), averaged
    # over the time spent in each
    attempt_rate = 2 * n * (n - 1) / ((2 * n - 1) * comm_time)

    return ProtocolRate(Protocol.MEPL, rate, attempt_rate, n)


def rate_mps(params: NetworkParams, geom: LinkGeometry, p_em: float) -> ProtocolRate:
    """Midpoint-source rate in the low-n regime: one qubit, one round per t_eg."""
    _check_p_em(p_em)

    efficiency = eta(params, geom)
    attempt_rate = 1 / params.t_eg
    rate = p_em * p_local_mps(efficiency) ** 2 * attempt_rate

    return ProtocolRate(Protocol.MPS, rate, attempt_rate, 1)


def expected_local_successes(params: NetworkParams, geom: LinkGeometry, p_em: float) -> float:
    """
    n = p_BSM t_c / t_eg with p_BSM = p_em eta / 2: successful local BSMs at one
    node per communication time. n << 1 means a single qubit per node suffices.
    """
    _check_p_em(p_em)
    return p_em * p_local_mps(eta(params, geom)) * t_c(params, geom) / params.t_eg


def rate_for(params: NetworkParams, geom: LinkGeometry, config: "ProtocolConfig") -> ProtocolRate:
    """Dispatch on config.protocol (mBK/mEPL use n_qubits, MPS uses p_em)."""
    protocol = Protocol.parse(config.protocol)

    if protocol is Protocol.MBK:
        return rate_mbk(params, geom, config.n_qubits)
    if protocol is Protocol.MEPL:
        return rate_mepl(params, geom, config.n_qubits)
    return rate_mps(params, geom, config.p_em)


## -------------------------------------------------------------------------------------------------------------- ##
## Crossover analysis

def crossover_distance(
    params: NetworkParams,
    config_a: "ProtocolConfig",
    config_b: "ProtocolConfig",
    bracket: Tuple[float, float] = CROSSOVER_BRACKET,
    rtol: float = 1e-6,
    strict: bool = False,
) -> Optional[float]:
    """
    Distance (m) at which the analytic rates of two configurations are equal.

    Bisection on log(rate_a) - log(rate_b) over `bracket` with relative
    tolerance `rtol` on the distance. Returns None when the difference does
    not change sign in the bracket (or vanishes identically); with
    strict=True that case raises UnbracketedRootError instead.
    """
    lo, hi = bracket
    if not (0 < lo < hi):
        raise DomainError(f"crossover bracket must satisfy 0 < lo < hi, got {bracket}")

    def log_ratio(d: float) -> float:
        geom = LinkGeometry(d)
        rate_a, rate_b = rate_for(params, geom, config_a).rate, rate_for(params, geom, config_b).rate
        if rate_a <= 0 or rate_b <= 0:
            raise DomainError(f"rate underflows to zero at {d / KM:g} km; narrow the crossover bracket")
        return math.log(rate_a) - math.log(rate_b)

    f_lo, f_hi = log_ratio(lo), log_ratio(hi)

    if f_lo == 0 and f_hi == 0:
        root = None
    elif f_lo == 0:
        root = lo
    elif f_hi == 0:
        root = hi
    elif f_lo * f_hi > 0:
        root = None
    else:
        root = optimize.bisect(log_ratio, lo, hi, rtol=rtol, xtol=1e-9)

    if root is None:
        message = f"no crossover between {config_a.label} and {config_b.label} in [{lo / KM:g}, {hi / KM:g}] km"
        if strict:
            raise UnbracketedRootError(message)
        logger.info(message)
        return None

    logger.info("crossover %s vs %s at %.3f km", config_a.label, config_b.label, root / KM)
    return float(root)
