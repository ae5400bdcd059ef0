"""Workers, jobs, and the directory wiring instances onto them.

The runtime is deliberately event-driven and clock-agnostic: it never sleeps
and never reads wall time. A driver (the discrete-event simulator, or the
in-process reference loop in tests) owns a clock and an event queue and calls
the three handlers:

  ``on_deliver(msg)``   - a message arrived at its target instance
  ``on_complete(wid)``  - a worker finished its current service slot
  ``on_signal(sig)``    - a latency-miss signal reached the workers

Everything else (barrier progress, forwarding, registrations) falls out of
the protocol effects those handlers process. Execution is a two-phase claim:
a worker pops a queue head and goes busy when it begins service, and the
operator is applied when the service interval completes, so queue state seen
by scheduling decisions reflects in-flight work correctly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .model import (
    ChannelId,
    ControlKind,
    FunctionAddress,
    Granularity,
    InstanceAddress,
    MessageKind,
    SequencedMessage,
)
from .operators import build_operator
from .protocol import (
    ActivateLessee,
    ActorInstance,
    Emission,
    MutationFlags,
    Operator,
    Send,
    Trace,
)
from .scheduling import Candidate, SloSignal, Strategy, build_strategy
from .state import DEFAULT_HOLISTIC_CAP, builtin


@dataclass
class FunctionSpec:
    """Static description of one operator in a job."""

    name: str
    operator: str = "window"
    operator_params: Dict[str, Any] = field(default_factory=dict)
    cf: str = "sum"
    downstream: Tuple[str, ...] = ()
    holistic_cap: int = DEFAULT_HOLISTIC_CAP
    state_extra_bytes: int = 0
    service_us: float = 50.0
    prespawn_lessees: int = 0

    def service_ns(self) -> int:
        return max(1, int(self.service_us * 1000))


@dataclass
class JobSpec:
    job_id: str
    functions: Dict[str, FunctionSpec]
    slo_ms: Optional[float] = None
    read_heavy: bool = False
    sync: Granularity = Granularity.SYNC_CHANNEL

    @property
    def slo_ns(self) -> Optional[int]:
        if self.slo_ms is None:
            return None
        return int(self.slo_ms * 1e6)

    def sources(self) -> List[str]:
        """Functions nothing feeds into; these take external injections."""
        fed = {d for spec in self.functions.values() for d in spec.downstream}
        return [n for n in self.functions if n not in fed]

    def terminals(self) -> List[str]:
        return [n for n, s in self.functions.items() if not s.downstream]


class _OverheadTask:
    """Worker busy slot with no message attached (forwarding cost)."""

    __slots__ = ()


OVERHEAD = _OverheadTask()


class Worker:
    def __init__(self, worker_id: int, strategy: Strategy) -> None:
        self.worker_id = worker_id
        self.strategy = strategy
        self.hosted: List[ActorInstance] = []
        # (instance, message, started_ns) or OVERHEAD while busy, else None.
        self.current: Optional[object] = None
        self.pending_overhead_ns = 0
        self.busy_ns = 0

    def load(self) -> int:
        queued = sum(inst.backlog() for inst in self.hosted)
        return queued + (1 if self.current is not None else 0)


class WorkerView:
    """What a strategy is allowed to see: time, load, and the directory."""

    def __init__(self, runtime: "Runtime", worker: Worker) -> None:
        self._rt = runtime
        self.worker_id = worker.worker_id

    def now(self) -> int:
        return self._rt.clock.now

    def outstanding(self, addr: InstanceAddress) -> int:
        inst = self._rt.directory.instances.get(addr)
        queued = inst.backlog() if inst is not None else 0
        return queued + self._rt.in_flight.get(addr, 0)

    def lessees_of(self, fn: FunctionAddress) -> List[InstanceAddress]:
        return self._rt.directory.lessee_addresses(fn)

    def new_lessee(self, fn: FunctionAddress) -> InstanceAddress:
        return self._rt.directory.allocate_lessee(fn)

    def address_of(self, fn: FunctionAddress, index: int) -> InstanceAddress:
        return self._rt.directory.address_of(fn, index)

    def slo_ns(self, job_id: str) -> Optional[int]:
        job = self._rt.jobs.get(job_id)
        return job.slo_ns if job is not None else None


class Directory:
    """Placement and lookup: which worker hosts which instance.

    Lessors are placed round-robin in registration order. Lessees land on
    the least-loaded worker at allocation time, ties to the lowest id.
    """

    def __init__(self, workers: Sequence[Worker]) -> None:
        self.workers = list(workers)
        self.instances: Dict[InstanceAddress, ActorInstance] = {}
        self.placement: Dict[Tuple[FunctionAddress, int], int] = {}
        self.allocated: Dict[FunctionAddress, int] = {}
        self._rr = 0

    def place_lessor(self, fn: FunctionAddress) -> InstanceAddress:
        key = (fn, 0)
        if key not in self.placement:
            self.placement[key] = self.workers[self._rr % len(self.workers)].worker_id
            self._rr += 1
            self.allocated[fn] = max(self.allocated.get(fn, 1), 1)
        return InstanceAddress(fn.job_id, fn.function_id, 0, self.placement[key])

    def pin_lessor(self, fn: FunctionAddress, worker_id: int) -> None:
        """Fix a lessor's placement; must run before the job registers."""
        if (fn, 0) in self.placement:
            raise ValueError(f"{fn.render()} is already placed")
        self.placement[(fn, 0)] = worker_id
        self.allocated[fn] = max(self.allocated.get(fn, 1), 1)

    def address_of(self, fn: FunctionAddress, index: int) -> InstanceAddress:
        key = (fn, index)
        if key not in self.placement:
            worker = min(self.workers, key=lambda w: (w.load(), w.worker_id))
            self.placement[key] = worker.worker_id
            self.allocated[fn] = max(self.allocated.get(fn, 0), index + 1)
        return InstanceAddress(fn.job_id, fn.function_id, index, self.placement[key])

    def allocate_lessee(self, fn: FunctionAddress) -> InstanceAddress:
        index = self.allocated.get(fn, 1)
        return self.address_of(fn, index)

    def lessee_addresses(self, fn: FunctionAddress) -> List[InstanceAddress]:
        out = []
        for (f, index), wid in self.placement.items():
            if f == fn and index > 0:
                out.append(InstanceAddress(f.job_id, f.function_id, index, wid))
        out.sort(key=lambda a: a.instance_index)
        return out

    def worker_of(self, addr: InstanceAddress) -> Worker:
        return self.workers[addr.worker_id]


class SourceDriver:
    """Injection discipline for one source function.

    After originating a barrier the source holds all further output until
    every sync program it sent is acknowledged; held items replay in order.
    """

    def __init__(self, runtime: "Runtime", job: JobSpec, fn_name: str) -> None:
        self.rt = runtime
        self.job = job
        self.spec = job.functions[fn_name]
        self.fn = FunctionAddress(job.job_id, fn_name)
        self.addr = runtime.directory.place_lessor(self.fn)
        self.holding: set = set()
        self.buffer: List[Tuple] = []
        self.epoch = 0

    @property
    def instance(self) -> ActorInstance:
        return self.rt.ensure_instance(self.addr)

    def data(self, value: Any, key: Optional[str]) -> None:
        self.rt.metrics.injected += 1
        if self.holding:
            self.buffer.append(("data", value, key))
            return
        self._emit(value, key)

    def watermark(self) -> None:
        self.epoch += 1
        if self.holding:
            # A newer watermark supersedes a held one that has not shipped.
            self.buffer = [item for item in self.buffer if item[0] != "watermark"]
            self.buffer.append(("watermark", self.epoch))
            return
        self._originate(self.epoch)

    def _emit(self, value: Any, key: Optional[str]) -> None:
        src = self.instance
        emission = Emission(value=value, key=key)
        for fn_name in self.spec.downstream:
            target_fn = FunctionAddress(self.job.job_id, fn_name)
            default = self.rt.directory.place_lessor(target_fn)
            worker = self.rt.directory.worker_of(src.addr)
            target = worker.strategy.prepare_send(
                self.rt.view_of(worker), src, emission, default)
            effects = src.package_send(emission, target, self.rt,
                                       injected_at=self.rt.clock.now, key=key)
            self.rt.process_effects(src, effects)

    def _originate(self, epoch: int) -> None:
        src = self.instance
        for fn_name in self.spec.downstream:
            target_fn = FunctionAddress(self.job.job_id, fn_name)
            self.rt.directory.place_lessor(target_fn)
            emission = Emission(value=epoch, critical=True, epoch=epoch,
                                granularity=self.job.sync)
            effects, bid = src.originate_barrier(
                self.rt, target_fn, [emission],
                granularity=self.job.sync, epoch=epoch)
            self.holding.add(bid)
            self.rt.process_effects(src, effects)

    def maybe_release(self) -> None:
        if not self.holding:
            return
        acked = self.instance.acked_barriers
        self.holding = {bid for bid in self.holding if bid not in acked}
        if self.holding:
            return
        while self.buffer and not self.holding:
            item = self.buffer.pop(0)
            if item[0] == "data":
                self._emit(item[1], item[2])
            else:
                self._originate(item[1])


@dataclass
class RuntimeConfig:
    workers: int = 4
    strategy: str = "fifo"
    strategy_params: Dict[str, Any] = field(default_factory=dict)
    forward_overhead_us: float = 20.0
    feedback_delay_us: float = 500.0
    mutations: MutationFlags = field(default_factory=MutationFlags)

    def forward_overhead_ns(self) -> int:
        return max(0, int(self.forward_overhead_us * 1000))

    def feedback_delay_ns(self) -> int:
        return max(0, int(self.feedback_delay_us * 1000))


class Runtime:
    """Event handlers plus the ctx protocol the instances call back into."""

    def __init__(self, config: RuntimeConfig, clock, schedule: Callable,
                 transport, tracer, metrics) -> None:
        self.config = config
        self.clock = clock
        self.schedule = schedule
        self.transport = transport
        self.tracer = tracer
        self.metrics = metrics
        self.mutations = config.mutations
        self.jobs: Dict[str, JobSpec] = {}
        self.drivers: Dict[Tuple[str, str], SourceDriver] = {}
        # Admission time per (instance, channel, seq): feeds FIFO ranking.
        self.admitted_at: Dict[Tuple[InstanceAddress, ChannelId, int], int] = {}
        # User messages sent but not yet delivered, per target instance.
        # Load queries must see them or a burst of forwards all picks the
        # same momentarily-empty lessee.
        self.in_flight: Dict[InstanceAddress, int] = {}
        workers = [Worker(i, build_strategy(config.strategy,
                                            config.strategy_params))
                   for i in range(config.workers)]
        self.directory = Directory(workers)
        self._views = {w.worker_id: WorkerView(self, w) for w in workers}
        self._operators: Dict[FunctionAddress, Operator] = {}

    # -- ctx protocol (instances call these) -----------------------------------

    @property
    def now(self) -> int:
        return self.clock.now

    def lessor_of(self, fn: FunctionAddress) -> InstanceAddress:
        return self.directory.place_lessor(fn)

    def operator_for(self, fn: FunctionAddress) -> Operator:
        op = self._operators.get(fn)
        if op is None:
            spec = self.jobs[fn.job_id].functions[fn.function_id]
            op = build_operator(spec.operator, spec.operator_params)
            self._operators[fn] = op
        return op

    def downstreams_of(self, fn: FunctionAddress) -> List[FunctionAddress]:
        spec = self.jobs[fn.job_id].functions[fn.function_id]
        return [FunctionAddress(fn.job_id, d) for d in spec.downstream]

    def upstreams_of(self, fn: FunctionAddress) -> List[FunctionAddress]:
        job = self.jobs[fn.job_id]
        return [FunctionAddress(fn.job_id, name)
                for name, spec in job.functions.items()
                if fn.function_id in spec.downstream]

    # -- setup -------------------------------------------------------------------

    def register_job(self, job: JobSpec) -> None:
        if job.job_id in self.jobs:
            raise ValueError(f"duplicate job id: {job.job_id}")
        for spec in job.functions.values():
            for d in spec.downstream:
                if d not in job.functions:
                    raise ValueError(
                        f"{job.job_id}/{spec.name} feeds unknown function {d!r}")
        self.jobs[job.job_id] = job
        for name, spec in job.functions.items():
            fn = FunctionAddress(job.job_id, name)
            self.directory.place_lessor(fn)
            for i in range(1, spec.prespawn_lessees + 1):
                self.directory.address_of(fn, i)
        for name in job.sources():
            self.drivers[(job.job_id, name)] = SourceDriver(self, job, name)

    def driver(self, job_id: str, fn_name: str) -> SourceDriver:
        return self.drivers[(job_id, fn_name)]

    def ensure_instance(self, addr: InstanceAddress) -> ActorInstance:
        inst = self.directory.instances.get(addr)
        if inst is None:
            job = self.jobs[addr.job_id]
            spec = job.functions[addr.function_id]
            inst = ActorInstance(
                addr, builtin(spec.cf),
                upstream_functions=self.upstreams_of(addr.function),
                read_heavy=job.read_heavy,
                holistic_cap=spec.holistic_cap,
                state_extra_bytes=spec.state_extra_bytes)
            self.directory.instances[addr] = inst
            self.directory.worker_of(addr).hosted.append(inst)
        return inst

    def view_of(self, worker: Worker) -> WorkerView:
        return self._views[worker.worker_id]

    # -- effects -----------------------------------------------------------------

    def process_effects(self, source: ActorInstance, effects: Iterable) -> None:
        for effect in effects:
            if isinstance(effect, Send):
                m = effect.message
                if m.kind is not MessageKind.CONTROL:
                    target = m.channel.target
                    self.in_flight[target] = self.in_flight.get(target, 0) + 1
                self.transport.send(m)
            elif isinstance(effect, Trace):
                self._observe_trace(source, effect)
            elif isinstance(effect, ActivateLessee):
                self.ensure_instance(effect.lessee)
            else:  # pragma: no cover - closed effect set
                raise TypeError(f"unknown effect {effect!r}")

    def _observe_trace(self, source: ActorInstance, t: Trace) -> None:
        wid = source.addr.worker_id
        self.tracer.row(self.clock.now, wid, source.addr.render(), t.event,
                        t.barrier_id, t.channel, t.seq_id, t.detail)
        self.metrics.observe_event(self.clock.now, source.addr, t)

    # -- event handlers ------------------------------------------------------------

    def on_deliver(self, msg: SequencedMessage) -> None:
        target = self.ensure_instance(msg.channel.target)
        worker = self.directory.worker_of(target.addr)
        if msg.kind is not MessageKind.CONTROL:
            left = self.in_flight.get(target.addr, 0) - 1
            if left > 0:
                self.in_flight[target.addr] = left
            else:
                self.in_flight.pop(target.addr, None)
        self.tracer.row(self.clock.now, worker.worker_id, target.addr.render(),
                        "DELIVER", msg.barrier_id or "", msg.channel.render(),
                        msg.seq_id, f"kind={self._kind(msg)}")
        effects, eligible = target.deliver(msg, self)
        self.process_effects(target, effects)
        if eligible is not None:
            self._admit(worker, target, eligible)
        if msg.kind is MessageKind.CONTROL:
            self._maybe_release_sources(target.addr)
        self.maybe_begin(worker)

    @staticmethod
    def _kind(msg: SequencedMessage) -> str:
        return msg.control.value if msg.control is not None else msg.kind.value

    # Offload at most this many queue heads per admission; keeps one badly
    # backed-up channel from starving the event loop.
    MAX_FORWARDS_PER_ADMISSION = 16

    def _admit(self, worker: Worker, instance: ActorInstance,
               msg: SequencedMessage) -> None:
        self._note_admission(instance, msg)
        view = self.view_of(worker)
        current = msg
        for _ in range(self.MAX_FORWARDS_PER_ADMISSION):
            decision = worker.strategy.enqueue(view, instance, current)
            target = decision.forward_to
            if target is None:
                return
            # A forward decision offloads the channel head: only the head
            # may legally leave, and draining oldest-first preserves FIFO.
            q = instance.ready.get(msg.channel)
            if not q:
                return
            head = q[0][1]
            if not instance.can_forward(head):
                return
            if target.function != instance.addr.function or target.instance_index == 0:
                return
            effects = instance.forward(head, target, self)
            self.process_effects(instance, effects)
            self.metrics.forwarded += 1
            self.admitted_at.pop((instance.addr, head.channel, head.seq_id), None)
            self._charge_overhead(worker, self.config.forward_overhead_ns())
            q = instance.ready.get(msg.channel)
            if not q:
                return
            current = q[0][1]

    def _note_admission(self, instance: ActorInstance,
                        msg: SequencedMessage) -> None:
        key = (instance.addr, msg.channel, msg.seq_id)
        self.admitted_at.setdefault(key, self.clock.now)

    def _charge_overhead(self, worker: Worker, ns: int) -> None:
        if ns <= 0:
            return
        if worker.current is None:
            worker.current = OVERHEAD
            worker.busy_ns += ns
            self.schedule(self.clock.now + ns,
                          lambda wid=worker.worker_id: self.on_complete(wid))
        else:
            # Worker is mid-service; the cost lands on its next begin.
            worker.pending_overhead_ns += ns

    def maybe_begin(self, worker: Worker) -> None:
        if worker.current is not None:
            return
        candidates: List[Candidate] = []
        for inst in worker.hosted:
            for head in inst.ready_heads():
                key = (inst.addr, head.channel, head.seq_id)
                candidates.append(Candidate(
                    inst, head, self.admitted_at.get(key, 0)))
        if not candidates:
            return
        view = self.view_of(worker)
        choice = worker.strategy.get_next_message(view, candidates)
        inst, msg = choice.instance, choice.message
        inst.pop_ready(msg)
        inst.in_service = msg
        worker.strategy.pre_apply(view, inst, msg)
        spec = self.jobs[inst.addr.job_id].functions[inst.addr.function_id]
        service = spec.service_ns() + worker.pending_overhead_ns
        worker.pending_overhead_ns = 0
        worker.current = (inst, msg, self.clock.now)
        worker.busy_ns += service
        self.tracer.row(self.clock.now, worker.worker_id, inst.addr.render(),
                        "DISPATCH", msg.barrier_id or "", msg.channel.render(),
                        msg.seq_id, f"service_ns={service}")
        self.schedule(self.clock.now + service,
                      lambda wid=worker.worker_id: self.on_complete(wid))

    def on_complete(self, worker_id: int) -> None:
        worker = self.directory.workers[worker_id]
        task = worker.current
        worker.current = None
        if task is OVERHEAD or task is None:
            self.maybe_begin(worker)
            return
        inst, msg, started = task
        inst.in_service = None
        effects, emissions = inst.execute(msg, self)
        self.process_effects(inst, effects)
        for emission in emissions:
            self.route_emission(worker, inst, emission, msg.injected_at)
        self.process_effects(inst, inst.after_execution(self))
        service = self.clock.now - started
        worker.strategy.post_apply(self.view_of(worker), inst, msg, service)
        self.admitted_at.pop((inst.addr, msg.channel, msg.seq_id), None)
        self._finish_message(inst, msg)
        self.maybe_begin(worker)

    def _finish_message(self, inst: ActorInstance, msg: SequencedMessage) -> None:
        if msg.kind is not MessageKind.DATA:
            return
        job = self.jobs[inst.addr.job_id]
        if job.functions[inst.addr.function_id].downstream:
            return
        latency = self.clock.now - msg.injected_at
        self.metrics.record_latency(inst.addr.job_id, msg.injected_at, latency)
        slo = job.slo_ns
        if slo is not None and latency > slo:
            sig = SloSignal(job_id=inst.addr.job_id,
                            function=inst.addr.function,
                            lateness_ns=latency - slo,
                            at_ns=self.clock.now)
            self.schedule(self.clock.now + self.config.feedback_delay_ns(),
                          lambda s=sig: self.on_signal(s))

    def route_emission(self, worker: Worker, sender: ActorInstance,
                       emission: Emission, injected_at: int) -> None:
        if emission.target_instance is not None:
            effects = sender.package_send(emission, emission.target_instance,
                                          self, injected_at, key=emission.key)
            self.process_effects(sender, effects)
            return
        targets = ([emission.target_function] if emission.target_function
                   else self.downstreams_of(sender.addr.function))
        view = self.view_of(worker)
        for fn in targets:
            default = self.lessor_of(fn)
            target = worker.strategy.prepare_send(view, sender, emission, default)
            effects = sender.package_send(emission, target, self,
                                          injected_at, key=emission.key)
            self.process_effects(sender, effects)

    def on_signal(self, signal: SloSignal) -> None:
        for worker in self.directory.workers:
            worker.strategy.violation_feedback(self.view_of(worker), signal)

    def _maybe_release_sources(self, addr: InstanceAddress) -> None:
        driver = self.drivers.get((addr.job_id, addr.function_id))
        if driver is not None and driver.addr == addr:
            driver.maybe_release()

    # -- inspection ---------------------------------------------------------------

    def quiescent(self) -> bool:
        if any(w.current is not None for w in self.directory.workers):
            return False
        return all(inst.backlog() == 0
                   for inst in self.directory.instances.values())
