import math
from dataclasses import dataclass

from Multiplexing.errors import DomainError

## Unit helpers (CLI and config speak km / us, everything else is SI)
KM = 1_000.0
US = 1e-6


def km_to_m(distance_km: float) -> float:
    return float(distance_km) * KM


def s_to_us(duration_s: float) -> float:
    return float(duration_s) / US


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise DomainError(message)


@dataclass(frozen=True)
class NetworkParams:
    """
    Hardware and fiber parameters of a two-node link.

    Defaults are the anticipated near-term values for NV-centre nodes:
        - p_out = 0.3 (cavity-enhanced outcoupling)
        - p_fc = 0.3 (frequency conversion to telecom)
        - alpha = 0.2 dB/km (standard telecom fiber)
        - t_eg = 1 us, t_sg = 200 us
        - c_fiber = 2e8 m/s, which puts t_c at 250 us for 50 km
    """

    p_out: float = 0.3
    p_fc: float = 0.3
    alpha_db_per_km: float = 0.2
    t_eg: float = 1e-6
    t_sg: float = 200e-6
    c_fiber: float = 2e8

    def __post_init__(self):
        for name in ("p_out", "p_fc", "alpha_db_per_km", "t_eg", "t_sg", "c_fiber"):
            value = getattr(self, name)
            _require(isinstance(value, (int, float)) and math.isfinite(value), f"{name} must be a finite number, got {value!r}")

        _require(0 < self.p_out <= 1, f"p_out must lie in (0, 1], got {self.p_out}")
        _require(0 < self.p_fc <= 1, f"p_fc must lie in (0, 1], got {self.p_fc}")
        _require(self.alpha_db_per_km >= 0, f"alpha_db_per_km must be >= 0, got {self.alpha_db_per_km}")
        _require(self.t_eg > 0, f"t_eg must be > 0, got {self.t_eg}")
        _require(self.t_sg > 0, f"t_sg must be > 0, got {self.t_sg}")
        _require(self.c_fiber > 0, f"c_fiber must be > 0, got {self.c_fiber}")


@dataclass(frozen=True)
class LinkGeometry:
    """Node separation d in meters; the midpoint station sits at d/2."""

    d: float

    def __post_init__(self):
        _require(
            isinstance(self.d, (int, float)) and math.isfinite(self.d) and self.d > 0,
            f"distance must be a finite positive number of meters, got {self.d!r}",
        )

    @classmethod
    def from_km(cls, distance_km: float) -> "LinkGeometry":
        return cls(km_to_m(distance_km))

    @property
    def d_km(self) -> float:
        return self.d / KM


def eta(params: NetworkParams, geom: LinkGeometry) -> float:
    """
    Lumped single-photon transmission efficiency:
        p_out * p_fc * 10^(-alpha * d_km / 20)

    The fiber term covers d/2 of fiber (node to midpoint), hence the 20 rather
    than 10 in the exponent.
    """
    return params.p_out * params.p_fc * 10 ** (-params.alpha_db_per_km * geom.d_km / 20)


def t_c(params: NetworkParams, geom: LinkGeometry) -> float:
    """Quantum + classical communication time of one attempt round, d / c."""
    return geom.d / params.c_fiber


def dashed_line_distance(params: NetworkParams) -> float:
    """Distance (m) at which t_c equals t_sg; below it a single qubit is optimal."""
    return params.t_sg * params.c_fiber
