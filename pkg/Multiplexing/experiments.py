"""
Parameter sweeps pairing analytic curves with Monte Carlo points.

Every sweep is a set of curves (one ProtocolConfig each, optionally with
its own NetworkParams) evaluated over one axis, either distance or qubits
per node. Monte Carlo work is flattened into one pool of
(point, curve, replication) tasks. Curve j draws from base seed
seed + 1000*j at every point, so neighbouring points share random numbers
and curves stay smooth along the axis.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from Multiplexing.analytic import (
    CROSSOVER_BRACKET,
    Protocol,
    ProtocolRate,
    crossover_distance,
    expected_local_successes,
    n_max_mbk,
    n_max_mepl,
    rate_for,
)
from Multiplexing.errors import DomainError, ModelError, ReplicationError
from Multiplexing.netparams import KM, US, LinkGeometry, NetworkParams, dashed_line_distance, eta, s_to_us, t_c
from Multiplexing.protocols import MachineFactory, ProtocolConfig, derived_tallies
from Multiplexing.simkernel import RateEstimate, ReplicationTask, StopRule, execute, replicate, summarize_replications

logger = logging.getLogger(__name__)

## Seed offset between curves of one sweep
CURVE_SEED_STRIDE = 1000

FIG4_DISTANCES_KM = tuple(np.geomspace(10, 200, 20))
FIG5_P_EM = (0.01, 0.1)
FIG5_FINE_GRID_KM = tuple(float(d) for d in np.arange(1, 301))
FIG6_DISTANCE_KM = 50.0
FIG6_T_SG = (200 * US, 50 * US, 25 * US)


@dataclass(frozen=True)
class McSettings:
    """Replication settings; duration (s) replaces the success target when set."""

    replications: int = 20
    successes: int = 2000
    duration: Optional[float] = None
    seed: Optional[int] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError(f"replications must be >= 1, got {self.replications}")
        if self.successes < 1:
            raise DomainError(f"successes must be >= 1, got {self.successes}")
        if self.seed is not None and self.seed < 0:
            raise DomainError(f"seed must be a non-negative integer, got {self.seed}")
        if self.workers is not None and self.workers < 1:
            raise DomainError(f"threads must be >= 1, got {self.workers}")

    def stop_rule(self) -> StopRule:
        if self.duration is not None:
            return StopRule.for_duration(self.duration)
        return StopRule.for_successes(self.successes)

    def require_seed(self) -> int:
        if self.seed is None:
            raise DomainError("Monte Carlo runs need a seed")
        return self.seed


class SweepAxis(str, Enum):
    DISTANCE = "distance"
    N_QUBITS = "n_qubits"


@dataclass(frozen=True)
class SweepCurve:
    label: str
    config: ProtocolConfig
    params: Optional[NetworkParams] = None


@dataclass(frozen=True)
class SweepSpec:
    """
    axis = distance: points are km, curves use their own n_qubits.
    axis = n_qubits: points are qubit counts, every curve sits at distance_km.
    mc = None means analytic only.
    """

    axis: SweepAxis
    points: Tuple[float, ...]
    curves: Tuple[SweepCurve, ...]
    params: NetworkParams = field(default_factory=NetworkParams)
    distance_km: float = FIG6_DISTANCE_KM
    mc: Optional[McSettings] = None

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis(self.axis))
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "curves", tuple(self.curves))

        if not self.points:
            raise DomainError("a sweep needs at least one point")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise DomainError("sweep points must be strictly increasing")
        if not self.curves:
            raise DomainError("a sweep needs at least one curve")
        labels = [curve.label for curve in self.curves]
        if len(set(labels)) != len(labels):
            raise DomainError(f"curve labels must be unique, got {labels}")

    def resolve(self, point: float, curve: SweepCurve) -> Tuple[NetworkParams, LinkGeometry, ProtocolConfig]:
        params = curve.params or self.params
        if self.axis is SweepAxis.DISTANCE:
            return params, LinkGeometry.from_km(point), curve.config
        config = dataclasses.replace(curve.config, n_qubits=int(point))
        return params, LinkGeometry.from_km(self.distance_km), config

    def curve_seed(self, index: int) -> int:
        return self.mc.require_seed() + CURVE_SEED_STRIDE * index


@dataclass
class CurveResult:
    analytic: Optional[ProtocolRate] = None
    mc: Optional[RateEstimate] = None
    seed: Optional[int] = None
    n_max: Optional[int] = None
    derived: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class SweepRow:
    axis_value: float
    derived: Dict[str, float] = field(default_factory=dict)
    curves: Dict[str, CurveResult] = field(default_factory=dict)

    def to_record(self, axis: SweepAxis) -> Dict[str, object]:
        record: Dict[str, object] = {"d_km" if axis is SweepAxis.DISTANCE else "n_qubits": self.axis_value}
        record.update(self.derived)

        for label, result in self.curves.items():
            analytic = result.analytic
            record[f"{label}_analytic"] = analytic.rate if analytic else np.nan
            record[f"{label}_n_eff"] = analytic.n_effective if analytic else np.nan
            record[f"{label}_mc"] = result.mc.rate if result.mc else np.nan
            stderr = result.mc.stderr if result.mc else None
            record[f"{label}_stderr"] = stderr if stderr is not None else np.nan
            record[f"{label}_seed"] = result.seed if result.mc else np.nan
            record[f"{label}_replications"] = result.mc.replications if result.mc else np.nan
            if axis is SweepAxis.N_QUBITS:
                record[f"{label}_n_max"] = result.n_max
                record[f"{label}_saturated"] = bool(result.n_max is not None and self.axis_value >= result.n_max)
            for name, value in result.derived.items():
                record[f"{label}_{name}"] = value
            record[f"{label}_error"] = result.error or ""

        return record


def _n_max_for(params: NetworkParams, geom: LinkGeometry, config: ProtocolConfig) -> int:
    if config.protocol is Protocol.MEPL:
        return n_max_mepl(params, geom)
    if config.protocol is Protocol.MBK:
        return n_max_mbk(params, geom)
    return 1


def _point_derived(spec: SweepSpec, point: float) -> Dict[str, float]:
    if spec.axis is SweepAxis.DISTANCE:
        geom = LinkGeometry.from_km(point)
        return {
            "t_c_us": s_to_us(t_c(spec.params, geom)),
            "eta": eta(spec.params, geom),
            "n_max_mbk": n_max_mbk(spec.params, geom),
            "n_max_mepl": n_max_mepl(spec.params, geom),
        }
    return {"d_km": spec.distance_km}


def run_sweep(spec: SweepSpec) -> pd.DataFrame:
    """
    Evaluate every (point, curve): analytic always, Monte Carlo when spec.mc
    is set. A failing cell is recorded in its `<label>_error` column and the
    sweep carries on.
    """
    rows = [SweepRow(float(point), _point_derived(spec, point)) for point in spec.points]

    for row in rows:
        for curve in spec.curves:
            result = CurveResult()
            try:
                params, geom, config = spec.resolve(row.axis_value, curve)
                result.n_max = _n_max_for(params, geom, config)
                result.analytic = rate_for(params, geom, config)
            except ModelError as e:
                result.error = str(e)
                logger.warning("%s at %s=%g: %s", curve.label, spec.axis.value, row.axis_value, e)
            row.curves[curve.label] = result

    if spec.mc is not None:
        _run_monte_carlo(spec, rows)

    table = pd.DataFrame([row.to_record(spec.axis) for row in rows])
    table.attrs["axis"] = spec.axis.value
    table.attrs["labels"] = [curve.label for curve in spec.curves]
    if spec.mc is not None:
        table.attrs["seed"] = spec.mc.seed
        table.attrs["replications"] = spec.mc.replications
    return table


def _run_monte_carlo(spec: SweepSpec, rows: List[SweepRow]) -> None:
    mc = spec.mc
    stop_rule = mc.stop_rule()

    cells = []
    tasks: List[ReplicationTask] = []
    for row in rows:
        for index, curve in enumerate(spec.curves):
            result = row.curves[curve.label]
            if result.error:
                continue
            params, geom, config = spec.resolve(row.axis_value, curve)
            seed = spec.curve_seed(index)
            factory = MachineFactory(params, geom, config)
            cells.append((row, curve, seed, len(tasks)))
            tasks.extend(ReplicationTask(factory, stop_rule, seed, r) for r in range(mc.replications))

    logger.info("sweep: %d cells, %d replications", len(cells), len(tasks))
    outcomes = execute(tasks, mc.workers, return_exceptions=True)

    for row, curve, seed, offset in cells:
        result = row.curves[curve.label]
        runs = outcomes[offset:offset + mc.replications]
        failures = [run for run in runs if isinstance(run, ReplicationError)]
        result.seed = seed
        if failures:
            result.error = str(failures[0])
            continue

        result.mc = summarize_replications(runs, seed)
        result.derived = derived_tallies(curve.config.protocol, result.mc.tallies, result.mc.successes)


def simulate_point(
    params: NetworkParams,
    geom: LinkGeometry,
    config: ProtocolConfig,
    mc: McSettings,
    trace: bool = False,
) -> RateEstimate:
    """Monte Carlo estimate for a single parameter point."""
    factory = MachineFactory(params, geom, config)
    return replicate(factory, mc.replications, mc.require_seed(), mc.stop_rule(), workers=mc.workers, trace=trace)


## -------------------------------------------------------------------------------------------------------------- ##
## Figures

def fig4_curves() -> Tuple[SweepCurve, ...]:
    configs = (
        ProtocolConfig(Protocol.MBK, n_qubits=2),
        ProtocolConfig(Protocol.MEPL, n_qubits=2),
        ProtocolConfig(Protocol.MPS, p_em=0.01),
        ProtocolConfig(Protocol.MPS, p_em=0.1),
    )
    return tuple(SweepCurve(config.label, config) for config in configs)


def fig4_rate_vs_distance(
    params: NetworkParams = NetworkParams(),
    mc: Optional[McSettings] = None,
    distances_km: Sequence[float] = FIG4_DISTANCES_KM,
) -> pd.DataFrame:
    """Rates of mBK(N=2), mEPL(N=2), MPS(0.01) and MPS(0.1) against distance."""
    spec = SweepSpec(SweepAxis.DISTANCE, tuple(distances_km), fig4_curves(), params=params, mc=mc)
    table = run_sweep(spec)
    table.attrs["figure"] = 4
    table.attrs["dashed_line_km"] = dashed_line_distance(params) / KM
    return table


def fig5_maximum(params: NetworkParams, p_em: float, grid_km: Sequence[float] = FIG5_FINE_GRID_KM) -> Tuple[float, float]:
    """(distance km, n) of the largest expected local success count on the grid."""
    values = np.array([expected_local_successes(params, LinkGeometry.from_km(d), p_em) for d in grid_km])
    best = int(np.argmax(values))
    return float(grid_km[best]), float(values[best])


def fig5_n_vs_distance(
    params: NetworkParams = NetworkParams(),
    distances_km: Sequence[float] = FIG4_DISTANCES_KM,
    p_ems: Sequence[float] = FIG5_P_EM,
) -> pd.DataFrame:
    """Expected successful local BSMs per node per t_c for each source emission probability."""
    table = pd.DataFrame({"d_km": [float(d) for d in distances_km]})
    for p_em in p_ems:
        table[f"n_p{p_em:g}"] = [expected_local_successes(params, LinkGeometry.from_km(d), p_em) for d in table["d_km"]]

    table.attrs["figure"] = 5
    table.attrs["max_n"] = {}
    for p_em in p_ems:
        d_best, n_best = fig5_maximum(params, p_em)
        table.attrs["max_n"][f"n_p{p_em:g}"] = {"d_km": d_best, "n": n_best}
    return table


def fig6_curves(params: NetworkParams, t_sg_values: Sequence[float] = FIG6_T_SG) -> Tuple[SweepCurve, ...]:
    return tuple(
        SweepCurve(f"mepl_tsg{s_to_us(t_sg):g}us", ProtocolConfig(Protocol.MEPL, n_qubits=2), dataclasses.replace(params, t_sg=t_sg))
        for t_sg in t_sg_values
    )


def fig6_rate_vs_memories(
    params: NetworkParams = NetworkParams(),
    mc: Optional[McSettings] = None,
    distance_km: float = FIG6_DISTANCE_KM,
    t_sg_values: Sequence[float] = FIG6_T_SG,
    n_values: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """
    mEPL rate against qubits per node at a fixed distance, one curve per swap-gate time.
    Default N grid runs from 2 to three past the largest N_max.
    """
    curves = fig6_curves(params, t_sg_values)
    if n_values is None:
        geom = LinkGeometry.from_km(distance_km)
        top = max(n_max_mepl(curve.params, geom) for curve in curves) + 3
        n_values = range(2, top + 1)

    spec = SweepSpec(SweepAxis.N_QUBITS, tuple(float(n) for n in n_values), curves, params=params, distance_km=distance_km, mc=mc)
    table = run_sweep(spec)
    table["n_qubits"] = table["n_qubits"].astype(int)
    table.attrs["figure"] = 6
    # rows that failed to resolve (N below the protocol minimum) carry no N_max
    table.attrs["saturation"] = {
        curve.label: int(table[f"{curve.label}_n_max"].dropna().iloc[0])
        for curve in curves
        if table[f"{curve.label}_n_max"].notna().any()
    }
    return table


## -------------------------------------------------------------------------------------------------------------- ##
## Crossovers

def crossover_table(
    params: NetworkParams,
    configs: Sequence[ProtocolConfig],
    bracket: Tuple[float, float] = CROSSOVER_BRACKET,
) -> pd.DataFrame:
    """Analytic crossover distance for every pair of configurations (NaN when none in the bracket)."""
    records = []
    for config_a, config_b in itertools.combinations(configs, 2):
        try:
            distance = crossover_distance(params, config_a, config_b, bracket=bracket)
            error = ""
        except ModelError as e:
            distance, error = None, str(e)

        records.append({
            "a": config_a.label,
            "b": config_b.label,
            "crossover_km": distance / KM if distance is not None else np.nan,
            "error": error,
        })

    return pd.DataFrame(records, columns=["a", "b", "crossover_km", "error"])
