"""Discrete-event simulation: clock, event queue, and timed transport.

Time is integer nanoseconds. The event queue is a heap keyed by
``(time, insertion_order)``, so simultaneous events fire in the order they
were scheduled and a fixed seed reproduces a run exactly, byte for byte.
The transport delays each message by a base latency, optional uniform
jitter, and an optional byte-proportional term; arrivals on one channel are
clamped to be non-decreasing so FIFO survives the jitter.
"""

from __future__ import annotations

import heapq
import random
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from .metrics import MetricsCollector, MetricsReport
from .model import SequencedMessage
from .runtime import JobSpec, Runtime, RuntimeConfig
from .tracing import Tracer


class SimClock:
    def __init__(self) -> None:
        self.now = 0


class EventQueue:
    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, Callable[[], None]]] = []
        self._n = 0

    def push(self, at_ns: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (at_ns, self._n, fn))
        self._n += 1

    def pop(self) -> Tuple[int, Callable[[], None]]:
        at_ns, _, fn = heapq.heappop(self._heap)
        return at_ns, fn

    def __len__(self) -> int:
        return len(self._heap)


class TimedTransport:
    """Message delays with per-channel FIFO preserved under jitter."""

    def __init__(self, clock: SimClock, events: EventQueue,
                 deliver: Callable[[SequencedMessage], None],
                 rng: random.Random,
                 base_us: float = 50.0, jitter_us: float = 0.0,
                 bandwidth_mbps: float = 0.0) -> None:
        self.clock = clock
        self.events = events
        self.deliver = deliver
        self.rng = rng
        self.base_ns = max(0, int(base_us * 1000))
        self.jitter_ns = max(0, int(jitter_us * 1000))
        self.bandwidth_mbps = bandwidth_mbps
        self._last_arrival: Dict[object, int] = {}

    def latency_ns(self, msg: SequencedMessage) -> int:
        delay = self.base_ns
        if self.jitter_ns:
            delay += self.rng.randrange(self.jitter_ns + 1)
        if self.bandwidth_mbps > 0:
            delay += int(msg.size_bytes * 8000 / self.bandwidth_mbps)
        return delay

    def send(self, msg: SequencedMessage) -> None:
        arrival = self.clock.now + self.latency_ns(msg)
        floor = self._last_arrival.get(msg.channel)
        if floor is not None and arrival < floor:
            arrival = floor
        self._last_arrival[msg.channel] = arrival
        self.events.push(arrival, lambda m=msg: self.deliver(m))


class SimulationError(RuntimeError):
    """The run ended in a state that should be unreachable."""


class Simulation:
    """Wires a runtime, transport, and workload streams into one run."""

    def __init__(self, config: RuntimeConfig, horizon_ms: float,
                 seed: int = 0,
                 base_latency_us: float = 50.0,
                 jitter_us: float = 0.0,
                 bandwidth_mbps: float = 0.0,
                 tracer: Optional[Tracer] = None,
                 max_events: int = 20_000_000) -> None:
        self.clock = SimClock()
        self.events = EventQueue()
        self.metrics = MetricsCollector()
        self.tracer = tracer if tracer is not None else Tracer()
        self.horizon_ns = int(horizon_ms * 1e6)
        self.seed = seed
        self.max_events = max_events
        self.rng = random.Random(f"transport:{seed}")
        self.runtime = Runtime(config, self.clock, self.events.push,
                               transport=None, tracer=self.tracer,
                               metrics=self.metrics)
        self.runtime.transport = TimedTransport(
            self.clock, self.events, self.runtime.on_deliver, self.rng,
            base_us=base_latency_us, jitter_us=jitter_us,
            bandwidth_mbps=bandwidth_mbps)

    def stream_rng(self, label: str) -> random.Random:
        return random.Random(f"{label}:{self.seed}")

    def add_job(self, job: JobSpec) -> None:
        self.runtime.register_job(job)

    def add_stream(self, job_id: str, source_fn: str,
                   stream: Iterator) -> None:
        driver = self.runtime.driver(job_id, source_fn)

        def pump() -> None:
            item = next(stream, None)
            if item is None:
                return
            t, value, key = item
            self.events.push(t, lambda: (driver.data(value, key), pump())[-1])

        pump()

    def add_watermarks(self, job_id: str, source_fn: str,
                       every_ms: float, start_ms: Optional[float] = None) -> None:
        driver = self.runtime.driver(job_id, source_fn)
        every_ns = max(1, int(every_ms * 1e6))
        first = every_ns if start_ms is None else int(start_ms * 1e6)

        def tick(at: int) -> None:
            driver.watermark()
            nxt = at + every_ns
            if nxt < self.horizon_ns:
                self.events.push(nxt, lambda: tick(nxt))

        if first < self.horizon_ns:
            self.events.push(first, lambda: tick(first))

    def run(self) -> MetricsReport:
        fired = 0
        while len(self.events):
            at, fn = self.events.pop()
            if at < self.clock.now:
                raise SimulationError(f"time went backwards: {at} < {self.clock.now}")
            self.clock.now = at
            fn()
            fired += 1
            if fired > self.max_events:
                raise SimulationError(f"event cap exceeded ({self.max_events})")
        if not self.runtime.quiescent():
            raise SimulationError("run drained its events but work remains queued")
        for driver in self.runtime.drivers.values():
            if driver.holding or driver.buffer:
                raise SimulationError(
                    f"source {driver.fn.render()} still holding at end of run")
        slo_by_job = {j: spec.slo_ns for j, spec in self.runtime.jobs.items()}
        return self.metrics.finish(self.horizon_ns, slo_by_job,
                                   self.runtime.directory.workers)
