"""Scheduling strategies and the hook surface workers drive them through.

A worker consults its strategy at five points in a message's life:

  1. ``enqueue``          - a message became executable at an instance; the
                            strategy may accept it locally or, at a lessor,
                            forward it to a lessee instead.
  2. ``get_next_message`` - the worker is free; pick which executable head
                            runs next.
  3. ``pre_apply``        - about to execute the chosen message.
  4. ``prepare_send``     - an execution produced output; the strategy may
                            re-address it to a different instance of the
                            target function.
  5. ``post_apply``       - execution finished; observed service time.

``violation_feedback`` is a sixth, asynchronous entry point: the runtime
broadcasts latency-target misses to every worker's strategy after a
configurable feedback delay.

Strategies are per-worker objects and may keep local state (service-time
averages, token buckets, round-robin cursors). They never touch instance
internals beyond the read-only queries the hooks hand them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .model import FunctionAddress, InstanceAddress, MessageKind, SequencedMessage
from .protocol import ActorInstance

INFINITE_SLACK = float("inf")


@dataclass(frozen=True)
class EnqueueDecision:
    """Outcome of the admission hook.

    ``forward_to`` of None means execute locally. A non-None target is only
    honored when the instance can legally forward the message (lessor,
    RUNNABLE, no barrier in flight, plain data); the runtime checks this
    before consulting the strategy, so strategies may assume it.
    """

    forward_to: Optional[InstanceAddress] = None


ACCEPT = EnqueueDecision()


@dataclass(frozen=True)
class Candidate:
    """One executable queue head offered to ``get_next_message``."""

    instance: ActorInstance
    message: SequencedMessage
    enqueued_at: int


@dataclass(frozen=True)
class SloSignal:
    """A latency-target miss observed at a terminal function."""

    job_id: str
    function: FunctionAddress
    lateness_ns: int
    at_ns: int


class Strategy:
    """Default policy: plain FIFO, no scale-out, no re-addressing."""

    name = "fifo"

    def enqueue(self, view, instance: ActorInstance,
                msg: SequencedMessage) -> EnqueueDecision:
        return ACCEPT

    def get_next_message(self, view, candidates: Sequence[Candidate]) -> Candidate:
        # Oldest admission first; channel sequence breaks exact ties so the
        # choice is deterministic under equal timestamps.
        return min(candidates, key=_fifo_rank)

    def pre_apply(self, view, instance: ActorInstance,
                  msg: SequencedMessage) -> None:
        return None

    def prepare_send(self, view, sender: ActorInstance, emission,
                     default_target: InstanceAddress) -> InstanceAddress:
        return default_target

    def post_apply(self, view, instance: ActorInstance, msg: SequencedMessage,
                   service_ns: int) -> None:
        return None

    def violation_feedback(self, view, signal: SloSignal) -> None:
        return None


def _fifo_rank(c: Candidate):
    return (c.enqueued_at, c.instance.addr, c.message.seq_id)


def least_outstanding(view, targets: Sequence[InstanceAddress]) -> InstanceAddress:
    """Placement rule: fewest queued messages, ties to the lowest worker id."""
    return min(targets, key=lambda a: (view.outstanding(a), a.worker_id,
                                       a.instance_index))


class _ServiceEstimator:
    """Exponential moving average of per-function service time."""

    def __init__(self, alpha: float = 0.2) -> None:
        self.alpha = alpha
        self._ema: Dict[str, float] = {}

    def observe(self, fn: FunctionAddress, service_ns: int) -> None:
        key = fn.render()
        prior = self._ema.get(key)
        if prior is None:
            # Seed with the first observation rather than a guess.
            self._ema[key] = float(service_ns)
        else:
            self._ema[key] = prior + self.alpha * (service_ns - prior)

    def estimate(self, fn: FunctionAddress) -> Optional[float]:
        return self._ema.get(fn.render())


class SloLessorStrategy(Strategy):
    """Lessor-initiated scale-out.

    The lessor predicts, per arriving message, whether local execution would
    miss the job's latency target given its current backlog and the measured
    service-time average. Predicted misses are forwarded to the least-loaded
    lessee; a new lessee is recruited when every existing one is as backed up
    as the lessor itself. Dispatch order is earliest-slack-first.
    """

    name = "slo_lessor"

    def __init__(self, max_lessees: int = 15, alpha: float = 0.2) -> None:
        self.max_lessees = max_lessees
        self.estimator = _ServiceEstimator(alpha)

    def enqueue(self, view, instance: ActorInstance,
                msg: SequencedMessage) -> EnqueueDecision:
        slo = view.slo_ns(instance.addr.job_id)
        if slo is None:
            return ACCEPT
        ema = self.estimator.estimate(instance.addr.function)
        if ema is None:
            return ACCEPT
        backlog = instance.backlog()
        predicted = view.now() + backlog * ema
        deadline = msg.injected_at + slo
        if predicted <= deadline:
            return ACCEPT
        fn = instance.addr.function
        peers = view.lessees_of(fn)
        can_grow = len(peers) < self.max_lessees
        if not peers:
            if not can_grow:
                return ACCEPT
            return EnqueueDecision(forward_to=view.new_lessee(fn))
        target = least_outstanding(view, peers)
        if view.outstanding(target) + 1 >= backlog:
            # No better off elsewhere; recruit if allowed, else keep local.
            if can_grow:
                return EnqueueDecision(forward_to=view.new_lessee(fn))
            return ACCEPT
        return EnqueueDecision(forward_to=target)

    def get_next_message(self, view, candidates: Sequence[Candidate]) -> Candidate:
        now = view.now()

        def rank(c: Candidate):
            slo = view.slo_ns(c.instance.addr.job_id)
            if slo is None or c.message.kind is not MessageKind.DATA:
                return (INFINITE_SLACK, c.enqueued_at, c.instance.addr,
                        c.message.seq_id)
            ema = self.estimator.estimate(c.instance.addr.function) or 0.0
            slack = (c.message.injected_at + slo) - now - ema
            return (slack, c.enqueued_at, c.instance.addr, c.message.seq_id)

        return min(candidates, key=rank)

    def post_apply(self, view, instance: ActorInstance, msg: SequencedMessage,
                   service_ns: int) -> None:
        if msg.kind is MessageKind.DATA:
            self.estimator.observe(instance.addr.function, service_ns)


class SloUpstreamStrategy(Strategy):
    """Upstream-initiated scale-out.

    Senders spread data round-robin across the first ``fanout`` instances of
    the target function, widening the set by one on each violation signal.
    Widening is rate-limited by a pause window: after reacting, further
    signals are ignored until the window elapses, so the sender adapts with
    lag instead of thrashing. No forwarding hop is involved; messages go
    direct from producer to the chosen instance.
    """

    name = "slo_upstream"

    def __init__(self, initial_fanout: int = 1, max_fanout: int = 16,
                 pause_ms: float = 100.0) -> None:
        self.initial_fanout = max(1, initial_fanout)
        self.max_fanout = max_fanout
        self.pause_ns = int(pause_ms * 1e6)
        self._fanout: Dict[str, int] = {}
        self._cursor: Dict[str, int] = {}
        self._pause_until = 0

    def prepare_send(self, view, sender: ActorInstance, emission,
                     default_target: InstanceAddress) -> InstanceAddress:
        if emission.critical or not default_target.is_lessor:
            return default_target
        fn = default_target.function
        key = fn.render()
        k = self._fanout.setdefault(key, self.initial_fanout)
        if k <= 1:
            return default_target
        i = self._cursor.get(key, 0)
        self._cursor[key] = (i + 1) % k
        if i == 0:
            return default_target
        return view.address_of(fn, i)

    def violation_feedback(self, view, signal: SloSignal) -> None:
        if signal.at_ns < self._pause_until:
            return
        grew = False
        for key, k in self._fanout.items():
            if k < self.max_fanout:
                self._fanout[key] = k + 1
                grew = True
        if grew:
            self._pause_until = signal.at_ns + self.pause_ns


class TokenBucketStrategy(Strategy):
    """Per-job execution budgets for multi-tenant isolation.

    Each refill interval grants every job the same number of tokens; unspent
    tokens do not carry over. Executing a data message spends one token from
    its job. Jobs that run dry are not starved outright: their messages drop
    to a lower priority band and run only when no funded work is waiting.
    Control traffic is never charged, or a stalled barrier could deadlock a
    throttled job.
    """

    name = "token_bucket"

    def __init__(self, tokens_per_interval: int = 10,
                 interval_ms: float = 10.0) -> None:
        self.budget = tokens_per_interval
        self.interval_ns = max(1, int(interval_ms * 1e6))
        self._tokens: Dict[str, int] = {}
        self._next_refill = 0

    def _refill(self, now: int, jobs: Sequence[str]) -> None:
        if self._next_refill == 0:
            self._next_refill = now + self.interval_ns
            for job in jobs:
                self._tokens[job] = self.budget
            return
        while now >= self._next_refill:
            self._next_refill += self.interval_ns
            for job in list(self._tokens):
                self._tokens[job] = self.budget
        for job in jobs:
            self._tokens.setdefault(job, self.budget)

    def get_next_message(self, view, candidates: Sequence[Candidate]) -> Candidate:
        jobs = sorted({c.instance.addr.job_id for c in candidates})
        self._refill(view.now(), jobs)
        funded = [c for c in candidates
                  if c.message.kind is not MessageKind.DATA
                  or self._tokens.get(c.instance.addr.job_id, 0) > 0]
        pool = funded if funded else list(candidates)
        choice = min(pool, key=_fifo_rank)
        if choice.message.kind is MessageKind.DATA:
            job = choice.instance.addr.job_id
            if self._tokens.get(job, 0) > 0:
                self._tokens[job] -= 1
        return choice


STRATEGY_KINDS = ("fifo", "slo_lessor", "slo_upstream", "token_bucket")


def build_strategy(kind: str, params: Optional[Dict] = None) -> Strategy:
    params = dict(params or {})
    if kind == "fifo":
        return Strategy()
    if kind == "slo_lessor":
        return SloLessorStrategy(
            max_lessees=int(params.pop("max_lessees", 15)),
            alpha=float(params.pop("alpha", 0.2)),
        )
    if kind == "slo_upstream":
        return SloUpstreamStrategy(
            initial_fanout=int(params.pop("initial_fanout", 1)),
            max_fanout=int(params.pop("max_fanout", 16)),
            pause_ms=float(params.pop("pause_ms", 100.0)),
        )
    if kind == "token_bucket":
        return TokenBucketStrategy(
            tokens_per_interval=int(params.pop("tokens_per_interval", 10)),
            interval_ms=float(params.pop("interval_ms", 10.0)),
        )
    raise ValueError(f"unknown strategy kind: {kind!r}")
