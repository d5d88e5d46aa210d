"""
Discrete-event engine shared by every protocol machine.

A run is single-threaded: the machine's start() seeds the queue, then each
popped event is handed to machine.step() until the stop rule is met.
Replications are independent and may be fanned out over worker processes;
everything they receive (machine factory, stop rule, seed) is immutable and
picklable.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from Multiplexing.errors import DomainError, LivelockError, ReplicationError, SimulationError

logger = logging.getLogger(__name__)

## Event budget per run before the engine gives up on the stop rule
DEFAULT_MAX_EVENTS = 50_000_000


class EventKind(str, Enum):
    ATTEMPT_START = "attempt_start"
    SWAP_COMPLETE = "swap_complete"
    HERALD_ARRIVAL = "herald_arrival"
    ROUND = "round"
    DISCARD = "discard"
    DISTILL_OUTCOME = "distill_outcome"
    # trace-only record written by Simulator.record_success
    SUCCESS = "success"


@dataclass(frozen=True, order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    node: str = field(compare=False, default="A")
    detail: Mapping[str, Any] = field(compare=False, default_factory=dict)


@dataclass(frozen=True)
class TraceRecord:
    time: float
    node: str
    event_kind: str
    detail: str

    def as_row(self) -> Tuple[float, str, str, str]:
        return (self.time, self.node, self.event_kind, self.detail)


def format_detail(detail: Mapping[str, Any]) -> str:
    """'lane=0;success=1' (sorted keys, booleans as 0/1)."""
    parts = []
    for key in sorted(detail):
        value = detail[key]
        if isinstance(value, bool):
            value = int(value)
        parts.append(f"{key}={value}")
    return ";".join(parts)


class EventQueue:
    """Min-heap on (time, seq); seq is a FIFO tiebreak so equal-time events pop in insertion order."""

    def __init__(self):
        self._heap: List[Event] = []
        self._seq = itertools.count()
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def push(self, time: float, kind: EventKind, node: str = "A", detail: Optional[Mapping[str, Any]] = None) -> Event:
        if not math.isfinite(time) or time < 0:
            raise SimulationError(f"event time must be finite and >= 0, got {time!r}")
        if time < self.now:
            raise SimulationError(f"cannot schedule {kind.value} at t={time!r} before the clock (t={self.now!r})")

        event = Event(time, next(self._seq), kind, node, dict(detail or {}))
        heapq.heappush(self._heap, event)
        return event

    def peek_time(self) -> Optional[float]:
        return self._heap[0].time if self._heap else None

    def pop(self) -> Event:
        if not self._heap:
            raise SimulationError("pop from an empty event queue")

        event = heapq.heappop(self._heap)
        if event.time < self.now:
            raise SimulationError(f"clock regression: t={event.time!r} after t={self.now!r}")

        self.now = event.time
        return event

    def advance_to(self, time: float) -> None:
        if time < self.now:
            raise SimulationError(f"clock regression: t={time!r} after t={self.now!r}")
        self.now = time


class RandomStream:
    """
    Independent numpy Generator per (seed, stream_id).

    The stream id is folded into the SeedSequence spawn key, so replication i
    of a run seeded with s always sees the same variates regardless of how
    many workers execute the replications.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
        if not isinstance(stream_id, (int, np.integer)) or stream_id < 0:
            raise DomainError(f"stream_id must be a non-negative integer, got {stream_id!r}")

        self.seed = int(seed)
        self.stream_id = int(stream_id)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._rng = np.random.Generator(np.random.PCG64(sequence))

    def bernoulli(self, p: float) -> bool:
        if p >= 1:
            return True
        if p <= 0:
            return False
        return bool(self._rng.random() < p)

    def geometric(self, p: float) -> int:
        """Number of trials up to and including the first success (>= 1)."""
        if not 0 < p <= 1:
            raise DomainError(f"geometric draw needs 0 < p <= 1, got {p!r}")
        if p == 1:
            return 1
        return int(self._rng.geometric(p))

    def multinomial(self, n: int, pvals: Sequence[float]) -> np.ndarray:
        return self._rng.multinomial(n, pvals)


@dataclass(frozen=True)
class StopRule:
    """Stop after `successes` successes or at simulated time `duration` (exactly one of the two)."""

    successes: Optional[int] = None
    duration: Optional[float] = None
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if (self.successes is None) == (self.duration is None):
            raise DomainError("stop rule needs exactly one of successes or duration")
        if self.successes is not None and self.successes < 1:
            raise DomainError(f"success target must be >= 1, got {self.successes}")
        if self.duration is not None and not (math.isfinite(self.duration) and self.duration > 0):
            raise DomainError(f"duration must be a finite positive number of seconds, got {self.duration!r}")
        if self.max_events < 1:
            raise DomainError(f"max_events must be >= 1, got {self.max_events}")

    @classmethod
    def for_successes(cls, successes: int, max_events: int = DEFAULT_MAX_EVENTS) -> "StopRule":
        return cls(successes=successes, max_events=max_events)

    @classmethod
    def for_duration(cls, duration: float, max_events: int = DEFAULT_MAX_EVENTS) -> "StopRule":
        return cls(duration=duration, max_events=max_events)


class Machine(Protocol):
    def start(self, sim: "Simulator") -> None: ...

    def step(self, event: Event, sim: "Simulator") -> None: ...

    def tallies(self) -> Dict[str, float]: ...


class Simulator:
    """Clock, queue and success counter handed to a machine during one run."""

    def __init__(self, stream: RandomStream, trace: bool = False):
        self.queue = EventQueue()
        self.stream = stream
        self.successes = 0
        self.success_times: List[float] = []
        self.trace: Optional[List[TraceRecord]] = [] if trace else None
        self._digest = hashlib.sha256()

    @property
    def now(self) -> float:
        return self.queue.now

    def schedule(self, delay: float, kind: EventKind, node: str = "A", **detail) -> Event:
        return self.queue.push(self.now + delay, kind, node, detail)

    def schedule_at(self, time: float, kind: EventKind, node: str = "A", **detail) -> Event:
        return self.queue.push(time, kind, node, detail)

    def record_success(self, node: str = "A", **detail) -> None:
        self.successes += 1
        self.success_times.append(self.now)
        self._observe(self.now, EventKind.SUCCESS, node, detail)

    def observe(self, event: Event) -> None:
        self._observe(event.time, event.kind, event.node, event.detail)

    def _observe(self, time: float, kind: EventKind, node: str, detail: Mapping[str, Any]) -> None:
        self._digest.update(f"{time!r},{kind.value},{node};".encode())
        if self.trace is not None:
            record = TraceRecord(time, node, kind.value, format_detail(detail))
            self.trace.append(record)
            logger.debug("t=%.9f %s %s %s", record.time, record.node, record.event_kind, record.detail)

    @property
    def digest(self) -> str:
        return self._digest.hexdigest()


@dataclass(frozen=True)
class RunSummary:
    successes: int
    sim_time: float
    events: int
    digest: str
    tallies: Mapping[str, float] = field(default_factory=dict)
    success_times: Tuple[float, ...] = ()
    trace: Optional[Tuple[TraceRecord, ...]] = None
    seed: Optional[int] = None
    stream_id: Optional[int] = None

    @property
    def rate(self) -> float:
        return self.successes / self.sim_time if self.sim_time > 0 else 0.0


def run(machine: Machine, stop_rule: StopRule, stream: RandomStream, trace: bool = False) -> RunSummary:
    """
    Drain the queue until the stop rule is met.

    Success stop: sim_time is the timestamp of the last counted success.
    Duration stop: events at exactly `duration` are processed and sim_time
    is `duration` (even if the queue drains earlier).
    Raises LivelockError when the queue drains under a success stop or the
    event budget runs out.
    """
    sim = Simulator(stream, trace=trace)
    machine.start(sim)

    processed = 0
    while True:
        if stop_rule.successes is not None and sim.successes >= stop_rule.successes:
            break

        next_time = sim.queue.peek_time()
        if next_time is None:
            if stop_rule.duration is not None:
                sim.queue.advance_to(stop_rule.duration)
                break
            raise LivelockError(
                f"event queue drained at t={sim.now:.6g} s with {sim.successes}/{stop_rule.successes} successes"
            )

        if stop_rule.duration is not None and next_time > stop_rule.duration:
            sim.queue.advance_to(stop_rule.duration)
            break

        if processed >= stop_rule.max_events:
            raise LivelockError(
                f"event budget of {stop_rule.max_events} exhausted at t={sim.now:.6g} s "
                f"with {sim.successes} successes"
            )

        event = sim.queue.pop()
        processed += 1
        sim.observe(event)
        machine.step(event, sim)

    return RunSummary(
        successes=sim.successes,
        sim_time=sim.now,
        events=processed,
        digest=sim.digest,
        tallies=dict(machine.tallies()),
        success_times=tuple(sim.success_times),
        trace=tuple(sim.trace) if sim.trace is not None else None,
        seed=stream.seed,
        stream_id=stream.stream_id,
    )


## -------------------------------------------------------------------------------------------------------------- ##
## Replications

@dataclass(frozen=True)
class ReplicationTask:
    """One unit of work: a fresh machine from `factory`, run on stream (base_seed, index)."""

    factory: Callable[[], Machine]
    stop_rule: StopRule
    base_seed: int
    index: int
    trace: bool = False


def run_replication(task: ReplicationTask) -> RunSummary:
    """Module-level so ProcessPoolExecutor can pickle it."""
    try:
        stream = RandomStream(task.base_seed, stream_id=task.index)
        return run(task.factory(), task.stop_rule, stream, trace=task.trace)
    except ReplicationError:
        raise
    except Exception as err:
        raise ReplicationError(task.index, str(err)) from err


def default_workers() -> int:
    return os.cpu_count() or 1


def execute(
    tasks: Sequence[ReplicationTask],
    workers: Optional[int] = 1,
    return_exceptions: bool = False,
) -> List[Union[RunSummary, ReplicationError]]:
    """
    Run tasks, serially or over a process pool; results come back in task order.
    With return_exceptions=True a failed task leaves its ReplicationError in
    its slot instead of aborting the batch.
    """
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers}")

    def collect(call):
        try:
            return call()
        except ReplicationError as err:
            if not return_exceptions:
                raise
            logger.warning("%s", err)
            return err

    if workers == 1 or len(tasks) <= 1:
        return [collect(lambda task=task: run_replication(task)) for task in tasks]

    results: List[Union[RunSummary, ReplicationError, None]] = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as executor:
        futures = {executor.submit(run_replication, task): i for i, task in enumerate(tasks)}
        for future in as_completed(futures):
            results[futures[future]] = collect(future.result)

    return results


@dataclass(frozen=True)
class RateEstimate:
    successes: int
    sim_time: float
    rate: float
    stderr: Optional[float]
    replications: int
    seed: int
    tallies: Mapping[str, float] = field(default_factory=dict)
    runs: Tuple[RunSummary, ...] = field(default=(), repr=False, compare=False)


def summarize_replications(runs: Sequence[RunSummary], base_seed: int) -> RateEstimate:
    """
    Pool replications: rate = total successes / total sim_time,
    stderr = sample std (ddof=1) of per-replication rates / sqrt(R).
    Tallies are summed across replications.
    """
    if not runs:
        raise DomainError("cannot summarize zero replications")

    successes = sum(r.successes for r in runs)
    sim_time = sum(r.sim_time for r in runs)
    rate = successes / sim_time if sim_time > 0 else 0.0

    if len(runs) > 1:
        rates = np.array([r.rate for r in runs], dtype=float)
        stderr = float(rates.std(ddof=1) / np.sqrt(len(runs)))
    else:
        stderr = None

    tallies: Dict[str, float] = {}
    for r in runs:
        for key, value in r.tallies.items():
            tallies[key] = tallies.get(key, 0) + value

    return RateEstimate(
        successes=successes,
        sim_time=sim_time,
        rate=rate,
        stderr=stderr,
        replications=len(runs),
        seed=base_seed,
        tallies=tallies,
        runs=tuple(runs),
    )


def replicate(
    factory: Callable[[], Machine],
    replications: int,
    base_seed: int,
    stop_rule: StopRule,
    workers: Optional[int] = 1,
    trace: bool = False,
) -> RateEstimate:
    """R independent runs; replication i draws from RandomStream(base_seed, i)."""
    if replications < 1:
        raise DomainError(f"replications must be >= 1, got {replications}")

    logger.info("running %d replications (seed %d)", replications, base_seed)
    tasks = [ReplicationTask(factory, stop_rule, base_seed, i, trace) for i in range(replications)]
    estimate = summarize_replications(execute(tasks, workers), base_seed)
    logger.info(
        "%d successes in %.6g s simulated: %.6g Hz (stderr %s)",
        estimate.successes, estimate.sim_time, estimate.rate,
        "n/a" if estimate.stderr is None else f"{estimate.stderr:.3g}",
    )
    return estimate
