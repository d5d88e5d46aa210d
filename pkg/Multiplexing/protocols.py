"""
Protocol state machines driven by the simkernel engine.

mBK and mEPL run `n_effective` attempt lanes per node. A lane emits a
photon at attempt start and learns the outcome from the midpoint herald
exactly t_c later, at which point it starts its next attempt; lane 0 keeps
its state in the communication qubit, lanes >= 1 swap into a memory
(t_eg + t_sg after the attempt starts). Lanes therefore stay on a fixed
grid of period t_c for the whole run.

With `elide_failures` on, a lane draws the number of attempts up to its
next success from a geometric distribution and only the successful herald
is queued. Off, every attempt gets its own herald event.

Nodes A and B are mirrored; successes are counted once, at node A.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from Multiplexing.analytic import (
    DISTILLATION_SUCCESS,
    Protocol,
    n_effective,
    p_attempt_mbk,
    p_local_mps,
    p_raw_mepl,
)
from Multiplexing.errors import DomainError, ProtocolConstraintError, SimulationError
from Multiplexing.netparams import LinkGeometry, NetworkParams, eta, t_c
from Multiplexing.simkernel import Event, EventKind, Simulator

logger = logging.getLogger(__name__)

PRIMARY_NODE = "A"
NODES = ("A", "B")


def _ratio_index(offset: float, period: float) -> int:
    # Grid index of the first launch at or after `offset`; round off float noise first
    return max(0, math.ceil(round(offset / period, 9)))


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: Protocol = Protocol.MEPL
    n_qubits: int = 2
    p_em: float = 0.01
    cutoff: Optional[int] = None
    distill_delay: bool = True
    elide_failures: bool = True

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))

        if isinstance(self.n_qubits, bool) or not isinstance(self.n_qubits, int):
            raise DomainError(f"n_qubits must be an integer, got {self.n_qubits!r}")
        if self.n_qubits < 1:
            raise ProtocolConstraintError(f"every node needs at least one qubit, got N={self.n_qubits}")
        if self.protocol is Protocol.MEPL and self.n_qubits < 2:
            raise ProtocolConstraintError(f"mEPL requires at least two qubits per node, got N={self.n_qubits}")

        if not (isinstance(self.p_em, (int, float)) and 0 < self.p_em <= 1):
            raise DomainError(f"p_em must lie in (0, 1], got {self.p_em!r}")

        if self.cutoff is not None and (isinstance(self.cutoff, bool) or not isinstance(self.cutoff, int) or self.cutoff < 1):
            raise DomainError(f"cutoff must be a positive integer or unlimited, got {self.cutoff!r}")

    @property
    def label(self) -> str:
        """Column prefix used in sweep tables: mbk_n2, mepl_n3, mps_p0.1."""
        if self.protocol is Protocol.MPS:
            return f"mps_p{self.p_em:g}"
        return f"{self.protocol.value}_n{self.n_qubits}"


## -------------------------------------------------------------------------------------------------------------- ##
## Node resources

class SlotStatus(str, Enum):
    FREE = "free"
    PENDING_HERALD = "pending-herald"
    HOLDING_RAW_STATE = "holding-raw-state"


@dataclass
class MemorySlot:
    status: SlotStatus = SlotStatus.FREE
    attempt_id: Optional[int] = None
    attempts_since_stored: int = 0

    def occupy(self, attempt_id: int) -> None:
        if self.status is not SlotStatus.FREE:
            raise SimulationError(f"attempt {attempt_id} launched on a {self.status.value} slot")
        self.status = SlotStatus.PENDING_HERALD
        self.attempt_id = attempt_id

    def store(self) -> None:
        self.status = SlotStatus.HOLDING_RAW_STATE
        self.attempts_since_stored = 0

    def tick(self, count: int = 1) -> None:
        if self.status is not SlotStatus.HOLDING_RAW_STATE:
            raise SimulationError("attempts_since_stored only advances while a raw state is held")
        self.attempts_since_stored += count

    def free(self) -> None:
        self.status = SlotStatus.FREE
        self.attempt_id = None
        self.attempts_since_stored = 0


@dataclass
class NodeState:
    name: str
    memories: List[MemorySlot]
    comm: MemorySlot = field(default_factory=MemorySlot)
    comm_busy_until: float = 0.0

    @classmethod
    def with_qubits(cls, name: str, n_qubits: int) -> "NodeState":
        return cls(name, [MemorySlot() for _ in range(n_qubits - 1)])

    def slot(self, lane: int) -> MemorySlot:
        return self.comm if lane == 0 else self.memories[lane - 1]

    def occupied_memories(self) -> int:
        return sum(slot.status is not SlotStatus.FREE for slot in self.memories)

    def free_memories(self) -> int:
        return sum(slot.status is SlotStatus.FREE for slot in self.memories)


@dataclass
class _Run:
    """Attempts of one lane from a launch up to its (queued) herald."""

    attempt_id: int
    started: float
    attempts: int
    herald_at: float
    heralded: bool = False


## -------------------------------------------------------------------------------------------------------------- ##
## Lane machines (mBK, mEPL)

class _LaneMachine:
    protocol: Protocol
    _attempt_key = "attempts"

    def __init__(self, params: NetworkParams, geom: LinkGeometry, config: ProtocolConfig):
        if config.protocol is not self.protocol:
            raise DomainError(f"{type(self).__name__} cannot run a {config.protocol.value} configuration")

        self.params = params
        self.geom = geom
        self.config = config
        self.t_c = t_c(params, geom)
        self.eta = eta(params, geom)
        self.n_lanes = n_effective(params, geom, self.protocol, config.n_qubits)
        self.nodes: Dict[str, NodeState] = {name: NodeState.with_qubits(name, config.n_qubits) for name in NODES}

        self._attempt_ids = itertools.count()
        self._runs: Dict[int, Optional[_Run]] = {lane: None for lane in range(self.n_lanes)}
        # Memory lanes are staggered by the time the communication qubit spends emitting and swapping
        stagger = params.t_eg + params.t_sg
        self._first_start = {lane: lane * stagger for lane in range(self.n_lanes)}
        self.counts: Dict[str, float] = {}

    @property
    def p_success(self) -> float:
        raise NotImplementedError

    def _count(self, key: str, value: float = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + value

    def tallies(self) -> Dict[str, float]:
        return dict(self.counts)

    def start(self, sim: Simulator) -> None:
        for lane in range(self.n_lanes):
            sim.schedule_at(self._first_start[lane], EventKind.ATTEMPT_START, PRIMARY_NODE, lane=lane)

    def step(self, event: Event, sim: Simulator) -> None:
        if event.kind is EventKind.ATTEMPT_START:
            self._launch(event.detail["lane"], sim)
        elif event.kind is EventKind.HERALD_ARRIVAL:
            self._herald(event, sim)
        elif event.kind is EventKind.SWAP_COMPLETE:
            pass
        else:
            self._handle(event, sim)

    def _handle(self, event: Event, sim: Simulator) -> None:
        raise SimulationError(f"{type(self).__name__} got unexpected {event.kind.value} event")

    def _launch(self, lane: int, sim: Simulator) -> None:
        attempt_id = next(self._attempt_ids)
        busy = self.params.t_eg + (self.params.t_sg if lane else 0.0)

        for node in self.nodes.values():
            node.slot(lane).occupy(attempt_id)
            node.comm_busy_until = max(node.comm_busy_until, sim.now + busy)

        if lane:
            sim.schedule(busy, EventKind.SWAP_COMPLETE, PRIMARY_NODE, lane=lane, attempt=attempt_id)

        if self.config.elide_failures:
            attempts, success = sim.stream.geometric(self.p_success), True
        else:
            attempts, success = 1, sim.stream.bernoulli(self.p_success)

        herald = sim.schedule(
            attempts * self.t_c, EventKind.HERALD_ARRIVAL, PRIMARY_NODE,
            lane=lane, attempt=attempt_id, attempts=attempts, success=success,
        )
        self._runs[lane] = _Run(attempt_id, sim.now, attempts, herald.time)
        self._on_launch(lane, sim)

    def _on_launch(self, lane: int, sim: Simulator) -> None:
        pass

    def _herald(self, event: Event, sim: Simulator) -> None:
        lane = event.detail["lane"]
        run = self._runs[lane]
        if run is None or run.attempt_id != event.detail["attempt"]:
            raise SimulationError(f"herald for attempt {event.detail['attempt']} does not match lane {lane}")

        run.heralded = True
        self._count(self._attempt_key, event.detail["attempts"])

        if event.detail["success"]:
            self._on_success(lane, event, sim)
        else:
            self._release(lane)
            self._relaunch(lane, sim)

    def _on_success(self, lane: int, event: Event, sim: Simulator) -> None:
        raise NotImplementedError

    def _release(self, lane: int) -> None:
        for node in self.nodes.values():
            node.slot(lane).free()

    def _relaunch(self, lane: int, sim: Simulator) -> None:
        sim.schedule_at(sim.now, EventKind.ATTEMPT_START, PRIMARY_NODE, lane=lane)


class BarrettKokMachine(_LaneMachine):
    """Multiplexed Barrett-Kok: every successful herald is an entangled pair."""

    protocol = Protocol.MBK

    @property
    def p_success(self) -> float:
        return p_attempt_mbk(self.eta)

    def _on_success(self, lane: int, event: Event, sim: Simulator) -> None:
        self._count("successes")
        sim.record_success(PRIMARY_NODE, lane=lane, attempt=event.detail["attempt"])
        self._release(lane)
        self._relaunch(lane, sim)


@dataclass
class _Storage:
    storage_id: int
    lane: int
    since: float
    discard_pending: bool = False


class ExtremePhotonLossMachine(_LaneMachine):
    """
    Multiplexed extreme-photon-loss protocol.

    The first raw (single-click) success pins its lane. The next raw success
    on any other lane consumes both states in a distillation step and both
    lanes restart straight away; the distillation outcome (success 1/8) is
    known one classical exchange later when `distill_delay` is on.

    Stored attempts are launches on the other lanes while a raw state is
    held. With a cutoff, the launch that would make the count exceed it
    discards the stored state instead.
    """

    protocol = Protocol.MEPL
    _attempt_key = "raw_attempts"

    def __init__(self, params: NetworkParams, geom: LinkGeometry, config: ProtocolConfig):
        super().__init__(params, geom, config)
        self._stored: Optional[_Storage] = None
        self._storage_ids = itertools.count()

    @property
    def p_success(self) -> float:
        return p_raw_mepl(self.eta)

    def _other_lanes(self, pinned: int):
        return [lane for lane in range(self.n_lanes) if lane != pinned]

    def _on_success(self, lane: int, event: Event, sim: Simulator) -> None:
        self._count("raw_successes")
        if self._stored is None:
            self._store(lane, sim)
        else:
            self._distill(lane, sim)

    def _store(self, lane: int, sim: Simulator) -> None:
        for node in self.nodes.values():
            node.slot(lane).store()
        self._stored = _Storage(next(self._storage_ids), lane, sim.now)

        if self.config.cutoff is not None and self.config.elide_failures:
            discard_at = self._nth_launch_after(sim.now, self._other_lanes(lane), self.config.cutoff)
            self._stored.discard_pending = True
            sim.schedule_at(discard_at, EventKind.DISCARD, PRIMARY_NODE, storage=self._stored.storage_id)

    def _first_launch_at_or_after(self, lane: int, time: float) -> float:
        run = self._runs[lane]
        if run is None:
            # lane not launched yet
            return max(time, self._first_start[lane])
        return run.started + _ratio_index(time - run.started, self.t_c) * self.t_c

    def _nth_launch_after(self, time: float, lanes: List[int], index: int) -> float:
        """Time of the index-th (0-based) launch at or after `time` across `lanes`' t_c grids."""
        firsts = sorted(self._first_launch_at_or_after(lane, time) for lane in lanes)
        return firsts[index % len(firsts)] + (index // len(firsts)) * self.t_c

    def _launches_between(self, lane: int, start: float, end: float) -> int:
        run = self._runs[lane]
        if run is None:
            return 0
        first = _ratio_index(start - run.started, self.t_c)
        stop = min(run.attempts, _ratio_index(end - run.started, self.t_c))
        return max(0, stop - first)

    def _on_launch(self, lane: int, sim: Simulator) -> None:
        stored = self._stored
        if stored is None or self.config.elide_failures or stored.discard_pending or lane == stored.lane:
            return

        for node in self.nodes.values():
            node.slot(stored.lane).tick()

        if self.config.cutoff is not None and self.nodes[PRIMARY_NODE].slot(stored.lane).attempts_since_stored > self.config.cutoff:
            stored.discard_pending = True
            sim.schedule_at(sim.now, EventKind.DISCARD, PRIMARY_NODE, storage=stored.storage_id)
        else:
            self._count("stored_attempts")

    def _end_storage(self, sim: Simulator, launches: Optional[int] = None) -> _Storage:
        """Close the stored state; in elided mode `launches` overrides the launches counted strictly before now."""
        stored = self._stored
        if self.config.elide_failures:
            if launches is None:
                launches = sum(self._launches_between(lane, stored.since, sim.now) for lane in self._other_lanes(stored.lane))
            self._count("stored_attempts", launches)
            for node in self.nodes.values():
                node.slot(stored.lane).tick(launches)

        self._stored = None
        return stored

    def _distill(self, lane: int, sim: Simulator) -> None:
        stored = self._end_storage(sim)
        self._count("distillations")

        for held in (stored.lane, lane):
            self._release(held)
            self._relaunch(held, sim)

        if self.config.distill_delay:
            sim.schedule(self.t_c, EventKind.DISTILL_OUTCOME, PRIMARY_NODE, distillation=stored.storage_id)
        else:
            self._distill_outcome(stored.storage_id, sim)

    def _distill_outcome(self, distillation: int, sim: Simulator) -> None:
        if sim.stream.bernoulli(DISTILLATION_SUCCESS):
            self._count("distill_successes")
            sim.record_success(PRIMARY_NODE, distillation=distillation)

    def _discard(self, event: Event, sim: Simulator) -> None:
        stored = self._stored
        if stored is None or stored.storage_id != event.detail["storage"]:
            return

        # A success herald at this same instant distills the stored state instead
        for lane in self._other_lanes(stored.lane):
            run = self._runs[lane]
            if run is not None and not run.heralded and math.isclose(run.herald_at, sim.now, rel_tol=0.0, abs_tol=1e-9 * self.t_c):
                return

        # The discard launch is the (cutoff+1)-th; launches sharing its instant but ordered before it count
        self._end_storage(sim, launches=self.config.cutoff)
        self._count("discards")
        self._release(stored.lane)
        self._relaunch(stored.lane, sim)

    def _handle(self, event: Event, sim: Simulator) -> None:
        if event.kind is EventKind.DISCARD:
            self._discard(event, sim)
        elif event.kind is EventKind.DISTILL_OUTCOME:
            self._distill_outcome(event.detail["distillation"], sim)
        else:
            super()._handle(event, sim)


## -------------------------------------------------------------------------------------------------------------- ##
## Midpoint source

class MidpointSourceMachine:
    """
    Midpoint-source protocol, one qubit per node, a round every t_eg.

    Each round the source emits a pair with probability p_em; given emission
    each node's local BSM succeeds with probability eta/2. A round where both
    succeed is confirmed t_c later, which is when the success is counted.
    Local-only successes are dropped when the remote failure notice arrives.
    """

    protocol = Protocol.MPS

    def __init__(self, params: NetworkParams, geom: LinkGeometry, config: ProtocolConfig):
        if config.protocol is not Protocol.MPS:
            raise DomainError(f"MidpointSourceMachine cannot run a {config.protocol.value} configuration")

        self.params = params
        self.geom = geom
        self.config = config
        self.t_c = t_c(params, geom)
        self.p_local = p_local_mps(eta(params, geom))
        self.p_joint = config.p_em * self.p_local ** 2
        self.nodes: Dict[str, NodeState] = {name: NodeState.with_qubits(name, 1) for name in NODES}
        self.counts: Dict[str, float] = {}

        # P(exactly one side succeeds | not a joint success)
        one_side = config.p_em * self.p_local * (1 - self.p_local) / (1 - self.p_joint)
        self._skip_pvals = [one_side, one_side, 1 - 2 * one_side]

    def _count(self, key: str, value: float = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + value

    def tallies(self) -> Dict[str, float]:
        return dict(self.counts)

    def start(self, sim: Simulator) -> None:
        self._schedule_round(0, sim)

    def _schedule_round(self, last_round: int, sim: Simulator) -> None:
        if self.config.elide_failures:
            rounds = sim.stream.geometric(self.p_joint)
        else:
            rounds = 1
        number = last_round + rounds
        sim.schedule_at(number * self.params.t_eg, EventKind.ROUND, PRIMARY_NODE, round=number, rounds=rounds)

    def step(self, event: Event, sim: Simulator) -> None:
        if event.kind is EventKind.ROUND:
            self._round(event, sim)
        elif event.kind is EventKind.HERALD_ARRIVAL:
            self._count("successes")
            sim.record_success(PRIMARY_NODE, round=event.detail["round"])
            for node in self.nodes.values():
                node.comm.free()
        elif event.kind is EventKind.DISCARD:
            self.nodes[event.node].comm.free()
        else:
            raise SimulationError(f"MidpointSourceMachine got unexpected {event.kind.value} event")

    def _round(self, event: Event, sim: Simulator) -> None:
        number, rounds = event.detail["round"], event.detail["rounds"]
        self._count("rounds", rounds)
        self._count("comm_windows", rounds * self.params.t_eg / self.t_c)

        for node in self.nodes.values():
            node.comm_busy_until = sim.now + self.params.t_eg

        if self.config.elide_failures:
            local_a, local_b, _ = sim.stream.multinomial(rounds - 1, self._skip_pvals)
            self._count("local_discards", int(local_a) + int(local_b))
            success_a = success_b = True
        else:
            local_a = local_b = 0
            emitted = sim.stream.bernoulli(self.config.p_em)
            success_a = emitted and sim.stream.bernoulli(self.p_local)
            success_b = emitted and sim.stream.bernoulli(self.p_local)

        self._count("local_successes_a", int(local_a) + int(success_a))
        self._count("local_successes_b", int(local_b) + int(success_b))

        if success_a and success_b:
            self._count("joint_successes")
            for node in self.nodes.values():
                node.comm.status = SlotStatus.HOLDING_RAW_STATE
            sim.schedule(self.t_c, EventKind.HERALD_ARRIVAL, PRIMARY_NODE, round=number)
        else:
            for name, succeeded in zip(NODES, (success_a, success_b)):
                if succeeded:
                    self._count("local_discards")
                    self.nodes[name].comm.status = SlotStatus.HOLDING_RAW_STATE
                    sim.schedule(self.t_c, EventKind.DISCARD, name, round=number)

        self._schedule_round(number, sim)


## -------------------------------------------------------------------------------------------------------------- ##
## Construction and tally post-processing

_MACHINES = {
    Protocol.MBK: BarrettKokMachine,
    Protocol.MEPL: ExtremePhotonLossMachine,
    Protocol.MPS: MidpointSourceMachine,
}


def build_machine(params: NetworkParams, geom: LinkGeometry, config: ProtocolConfig):
    return _MACHINES[config.protocol](params, geom, config)


@dataclass(frozen=True)
class MachineFactory:
    """Picklable zero-argument factory handed to simkernel.replicate."""

    params: NetworkParams
    geom: LinkGeometry
    config: ProtocolConfig

    def __call__(self):
        return build_machine(self.params, self.geom, self.config)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else float("nan")


def derived_tallies(protocol: Protocol, tallies: Dict[str, float], successes: int) -> Dict[str, float]:
    """Ratios reported next to the raw tallies (computed after pooling replications)."""
    protocol = Protocol.parse(protocol)

    if protocol is Protocol.MBK:
        return {"attempts_per_success": _ratio(tallies.get("attempts", 0), successes)}

    if protocol is Protocol.MEPL:
        return {
            "attempts_per_raw_success": _ratio(tallies.get("raw_attempts", 0), tallies.get("raw_successes", 0)),
            "stored_attempts_per_success": _ratio(tallies.get("stored_attempts", 0), successes),
            "raw_attempts_per_success": _ratio(tallies.get("raw_attempts", 0), successes),
            "distillation_success_fraction": _ratio(tallies.get("distill_successes", 0), tallies.get("distillations", 0)),
        }

    rounds = tallies.get("rounds", 0)
    return {
        "local_successes_per_t_c": _ratio(tallies.get("local_successes_a", 0), tallies.get("comm_windows", 0)),
        "joint_successes_per_round": _ratio(tallies.get("joint_successes", 0), rounds),
        "local_successes_per_round": _ratio(tallies.get("local_successes_a", 0), rounds),
    }
