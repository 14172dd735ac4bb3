"""Deterministic discrete-event core.

Virtual time is kept in integer microseconds. Events fire in
``(fire_time, sequence)`` order, so equal inputs always give equal traces.
"""
from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from .topology import MeshTopology, shortest_path, transfer_delay

MESSAGE_ARRIVAL = "message-arrival"
SERVICE_COMPLETION = "service-completion"
TIMER = "timer"


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000))


def us_to_ms(us: int) -> float:
    return us / 1000.0


class SchedulingError(ValueError):
    pass


@dataclass(order=True)
class SimEvent:
    fire_time: int  # us
    sequence: int = -1
    kind: str = field(default=TIMER, compare=False)
    node: str = field(default="-", compare=False)
    detail: str = field(default="", compare=False)
    payload: Any = field(default=None, compare=False)
    action: Callable[["SimEvent"], None] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class TraceRecord:
    time_us: int
    node: str
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.time_us} {self.node} {self.kind} {self.detail}".rstrip()


class SimTrace(list):
    """Ordered list of :class:`TraceRecord`."""

    def dumps(self) -> str:
        return "".join(r.line() + "\n" for r in self)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


class CpuQueue:
    """FIFO processor of one node.

    A job submitted at ``now`` completes at
    ``max(now, busy_until) + work_units / cpu_capacity * base_service_ms``.
    """

    def __init__(self, engine: "Engine", node: str, cpu_capacity: float, base_service_ms: float):
        self.engine = engine
        self.node = node
        self.cpu_capacity = cpu_capacity
        self.base_service_ms = base_service_ms
        self.busy_until = 0
        self.pending: deque[tuple[float, str]] = deque()
        self.intervals: list[tuple[int, int]] = []

    def service_us(self, work_units: float) -> int:
        return ms_to_us(work_units / self.cpu_capacity * self.base_service_ms)

    def submit(self, work_units: float, continuation: Callable[[], None] | None, label: str = "job") -> int:
        """Queue a job; returns its completion time in us."""
        if work_units < 0:
            raise ValueError("work units must be non-negative")
        start = max(self.engine.now_us, self.busy_until)
        end = start + self.service_us(work_units)
        self.busy_until = end
        if end > start:
            self.intervals.append((start, end))
        self.pending.append((work_units, label))

        def done(_ev):
            self.pending.popleft()
            if continuation is not None:
                continuation()

        self.engine.at(end, SERVICE_COMPLETION, done, node=self.node, detail=label)
        return end

    def busy_us(self, start: int, end: int) -> int:
        total = 0
        for a, b in self.intervals:
            lo, hi = max(a, start), min(b, end)
            if hi > lo:
                total += hi - lo
        return total

    def busy_fraction(self, start: int, end: int) -> float:
        if end <= start:
            return 0.0
        return self.busy_us(start, end) / (end - start)


class Engine:
    """Single-threaded event loop bound to one topology.

    ``rng`` is the simulation's only random stream; it is seeded once and must be
    consumed in program order.
    """

    def __init__(self, topology: MeshTopology, seed: int = 0, base_service_ms: float = 1.0,
                 record_trace: bool = True):
        self.topology = topology
        self.seed = seed
        self.rng = np.random.default_rng(np.uint64(seed % 2**64))
        self.base_service_ms = base_service_ms
        self.now_us = 0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._cpus: dict[str, CpuQueue] = {}
        self.record_trace = record_trace
        self.trace = SimTrace()
        self.stopped = False

    @property
    def now(self) -> float:
        """Current virtual time in ms."""
        return us_to_ms(self.now_us)

    # ----------------------------------------------------------------- scheduling

    def schedule(self, event: SimEvent) -> SimEvent:
        if event.fire_time < self.now_us:
            raise SchedulingError(f"event at {event.fire_time}us is before now ({self.now_us}us)")
        event.sequence = next(self._seq)
        heapq.heappush(self._queue, event)
        return event

    def at(self, time_us: int, kind: str, action: Callable[[SimEvent], None] | None = None,
           node: str = "-", detail: str = "", payload: Any = None) -> SimEvent:
        return self.schedule(SimEvent(int(time_us), kind=kind, node=node, detail=detail,
                                      payload=payload, action=action))

    def after(self, delay_us: int, kind: str, action=None, node: str = "-", detail: str = "",
              payload: Any = None) -> SimEvent:
        return self.at(self.now_us + delay_us, kind, action, node, detail, payload)

    def timer(self, time_ms: float, action: Callable[[SimEvent], None], node: str = "-",
              detail: str = "") -> SimEvent:
        return self.at(ms_to_us(time_ms), TIMER, action, node, detail)

    # ----------------------------------------------------------------- network & cpu

    def cpu(self, node: str) -> CpuQueue:
        q = self._cpus.get(node)
        if q is None:
            spec = self.topology.node(node)
            q = self._cpus[node] = CpuQueue(self, node, spec.cpu_capacity, self.base_service_ms)
        return q

    @property
    def cpus(self) -> dict[str, CpuQueue]:
        return dict(self._cpus)

    def delay_us(self, src: str, dst: str, nbytes: int) -> int:
        if src == dst:
            self.topology.node(src)
            return 0
        return ms_to_us(transfer_delay(self.topology, shortest_path(self.topology, src, dst), nbytes))

    def send_message(self, src: str, dst: str, nbytes: int, payload: Any = None,
                     handler: Callable[[Any], None] | None = None, label: str = "msg") -> int:
        """Deliver ``payload`` to ``handler`` after the mesh transfer delay; returns arrival time (us)."""
        arrival = self.now_us + self.delay_us(src, dst, nbytes)
        self.log(src, "send", f"{label} to={dst} bytes={nbytes}")

        def deliver(ev):
            if handler is not None:
                handler(ev.payload)

        self.at(arrival, MESSAGE_ARRIVAL, deliver, node=dst, detail=f"{label} from={src} bytes={nbytes}",
                payload=payload)
        return arrival

    def log(self, node: str, kind: str, detail: str = "") -> None:
        if self.record_trace:
            self.trace.append(TraceRecord(self.now_us, node, kind, detail))

    # ----------------------------------------------------------------- loop

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> SimEvent | None:
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        self.now_us = ev.fire_time
        if self.record_trace:
            self.trace.append(TraceRecord(ev.fire_time, ev.node, ev.kind, ev.detail))
        if ev.action is not None:
            ev.action(ev)
        return ev

    def run_until(self, t_end_ms: float = float("inf")) -> SimTrace:
        """Process events in order until the queue drains, :meth:`stop` is called,
        or the next event lies beyond ``t_end_ms``."""
        limit = None if t_end_ms == float("inf") else ms_to_us(t_end_ms)
        self.stopped = False
        while self._queue and not self.stopped:
            if limit is not None and self._queue[0].fire_time > limit:
                break
            self.step()
        return self.trace

    def stop(self) -> None:
        self.stopped = True

    def events(self) -> Iterator[SimEvent]:
        return iter(sorted(self._queue))
