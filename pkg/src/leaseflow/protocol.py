"""Barrier protocol engine for dual-mode (parallel/sequential) actors.

Each function runs as a lessor instance (index 0, owns authoritative state,
the only instance allowed to execute critical messages) plus any number of
lessee instances accumulating partial state. A critical message never rides
a channel bare: the upstream lessor wraps it, together with per-channel
dependency cuts, into a sync program. The downstream lessor then:

  1. withholds traffic from the blocked upstream(s) beyond the cuts while
     finishing its own dependency messages, then switches to BLOCKED;
  2. sends one SYNC_REQUEST per active lessee carrying that lessee's cut
     slice; lessees acknowledge immediately, seal, finish their own
     dependencies, reply with partial state plus their last-sent sequence
     IDs per downstream channel, and switch to BLOCKED;
  3. acknowledges the sync program upstream once every lessee acknowledged
     the request (the upstream may then release traffic held behind the
     critical message: everything it sends from now on lands behind an
     installed cut and is withheld until the barrier completes);
  4. consolidates partials, switches to CRITICAL, executes the critical
     messages sequentially, emits follow-up sync programs for any critical
     output, and, once those are acknowledged, unsyncs every blocked lessee
     and returns to RUNNABLE.

Handlers mutate only their own instance and return effects (sends, trace
events, lease activations) for the driver to carry out, so the same engine
runs under the timed simulator, the interleaving checker, and the threaded
runtime without modification.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Sequence, Set, Tuple

from .model import (
    BarrierSpec,
    ChannelId,
    ControlKind,
    FunctionAddress,
    Granularity,
    InstanceAddress,
    MessageKind,
    ProtocolTypeError,
    SeqCounters,
    SequencedMessage,
    enumerated_kinds,
    kind_tag,
)
from .state import (
    CombiningFunction,
    PartialState,
    apply_update,
    consolidate,
    read_state_snapshot,
)


class ProtocolViolation(Exception):
    """The engine observed something the protocol forbids."""

    def __init__(self, instance: InstanceAddress, message: str):
        self.instance = instance
        super().__init__(f"{instance.render()}: {message}")


class InstanceState(enum.Enum):
    RUNNABLE = "RUNNABLE"
    BLOCKED = "BLOCKED"
    CRITICAL = "CRITICAL"


# The only legal transitions. Everything else is a violation.
LEGAL_TRANSITIONS = {
    (InstanceState.RUNNABLE, InstanceState.BLOCKED),
    (InstanceState.BLOCKED, InstanceState.CRITICAL),
    (InstanceState.BLOCKED, InstanceState.RUNNABLE),
    (InstanceState.CRITICAL, InstanceState.RUNNABLE),
}


@dataclass
class MutationFlags:
    """Deliberate protocol defects, used only by the barrier checker.

    Production paths never set any of these.
    """

    drop_sync_request_ack: bool = False
    skip_dependency_wait: bool = False
    allow_registration_while_blocked: bool = False
    unsync_before_sp_ack: bool = False
    execute_cm_at_lessee: bool = False


MUTANT_NAMES = (
    "drop_sync_request_ack",
    "skip_dependency_wait",
    "allow_registration_while_blocked",
    "unsync_before_sp_ack",
    "execute_cm_at_lessee",
)


def mutation_from_name(name: Optional[str]) -> MutationFlags:
    flags = MutationFlags()
    if name:
        if name not in MUTANT_NAMES:
            raise ValueError(f"unknown mutant {name!r}; expected one of {MUTANT_NAMES}")
        setattr(flags, name, True)
    return flags


# --- control payloads -----------------------------------------------------

@dataclass
class SyncProgram:
    """Critical messages merged with the barrier announcement.

    dependency_payload maps every active channel from an instance of a
    blocked upstream function into an instance of the target function to the
    last sequence ID sent on it before the critical message. Messages at or
    below the cut are the barrier's dependencies.
    """

    barrier: BarrierSpec
    criticals: List[SequencedMessage]
    dependency_payload: Dict[ChannelId, int]
    sender: InstanceAddress


@dataclass
class SyncRequest:
    barrier_id: str
    blocked_upstreams: Tuple[FunctionAddress, ...]
    cuts: Dict[ChannelId, int]  # channels into the receiving lessee


@dataclass
class SyncRequestAck:
    barrier_id: str


@dataclass
class SyncReply:
    barrier_id: str
    partial: PartialState
    downstream_last_sent: Dict[ChannelId, int]


@dataclass
class Unsync:
    barrier_id: str
    consolidated: Any = None  # deep-copied state, read-heavy mode only


@dataclass
class LesseeRegistration:
    """Ask a lessor to activate channel sender->lessee for data traffic."""

    lessee: InstanceAddress
    channel: ChannelId


@dataclass
class LesseeRegistrationAck:
    channel: ChannelId


@dataclass
class SpAck:
    barrier_id: str


# --- effects --------------------------------------------------------------

@dataclass
class Send:
    message: SequencedMessage


@dataclass
class Trace:
    event: str
    barrier_id: str = ""
    channel: str = ""
    seq_id: object = ""
    detail: str = ""


@dataclass
class ActivateLessee:
    """Driver must ensure the lessee instance exists and is wired up."""

    lessor: InstanceAddress
    lessee: InstanceAddress
    channel: Optional[ChannelId]


Effect = Any  # Send | Trace | ActivateLessee


# --- operator surface ------------------------------------------------------

@dataclass
class Emission:
    """One output produced by an operator while executing a message."""

    value: Any
    key: Optional[str] = None
    critical: bool = False
    target_function: Optional[FunctionAddress] = None  # None: all downstream
    target_instance: Optional[InstanceAddress] = None  # pre-routed (scripts)
    size_bytes: int = 64
    epoch: int = 0
    # Barrier shape requested for a critical emission: SYNC_ONE groups it
    # with same-epoch criticals from sibling upstream actors downstream.
    granularity: Granularity = Granularity.SYNC_CHANNEL


class OperatorContext:
    """What an operator sees while executing one message."""

    def __init__(self, instance: "ActorInstance", message: SequencedMessage):
        self.address = instance.addr
        self.message = message
        self.partial = instance.partial
        self.cf = instance.cf
        self._cap = instance.holistic_cap
        self._emissions: List[Emission] = []
        self.state_reset = False
        # Position within the active barrier's critical batch; data messages
        # see (0, 1). Lets an operator act once per merged barrier.
        self.cm_index = 0
        self.cm_total = 1

    def update_state(self, value: Any) -> bool:
        return apply_update(self.partial, value, self.cf).ok

    def state_result(self) -> Any:
        return self.cf.result(self.partial.state)

    def reset_state(self) -> None:
        self.partial.state = self.cf.new_state(cap=self._cap)
        self.state_reset = True

    def emit(self, value: Any, key: Optional[str] = None, critical: bool = False,
             target_function: Optional[FunctionAddress] = None,
             target_instance: Optional[InstanceAddress] = None,
             size_bytes: int = 64, epoch: int = 0,
             granularity: Granularity = Granularity.SYNC_CHANNEL) -> None:
        self._emissions.append(Emission(
            value=value, key=key, critical=critical,
            target_function=target_function, target_instance=target_instance,
            size_bytes=size_bytes, epoch=epoch, granularity=granularity,
        ))

    def emissions(self) -> List[Emission]:
        return self._emissions


class Operator:
    """Stateless operator logic; all state lives in the instance partial."""

    resets_on_critical = False

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        raise NotImplementedError

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        raise NotImplementedError


# --- barrier bookkeeping ---------------------------------------------------

@dataclass
class _LessorBarrier:
    barrier_id: str
    granularity: Granularity
    target: FunctionAddress
    blocked_upstreams: Tuple[FunctionAddress, ...]
    epoch: int
    expected_sps: Set[FunctionAddress]
    received_sps: Dict[FunctionAddress, SyncProgram] = field(default_factory=dict)
    sealed_actors: Set[FunctionAddress] = field(default_factory=set)
    cuts: Dict[ChannelId, int] = field(default_factory=dict)  # full payload union
    criticals: List[SequencedMessage] = field(default_factory=list)
    owed_acks: List[Tuple[InstanceAddress, str]] = field(default_factory=list)
    synced_lessees: List[InstanceAddress] = field(default_factory=list)
    acks_pending: Set[InstanceAddress] = field(default_factory=set)
    replies: Dict[InstanceAddress, SyncReply] = field(default_factory=dict)
    sp_acked: bool = False
    blocked: bool = False
    criticals_pending: List[SequencedMessage] = field(default_factory=list)
    executed_criticals: int = 0
    critical_emissions: List[Emission] = field(default_factory=list)
    downstream_acks_pending: Set[str] = field(default_factory=set)
    downstream_sps_sent: bool = False


@dataclass
class _LesseeSeal:
    barrier_id: str
    blocked_upstreams: Tuple[FunctionAddress, ...]
    cuts: Dict[ChannelId, int]
    lessor: InstanceAddress
    replied: bool = False


@dataclass
class _WithheldEntry:
    message: SequencedMessage
    arrival: int


# --- the instance ----------------------------------------------------------

class ActorInstance:
    """Protocol state machine plus managed state for one instance.

    Holds only plain data: the driver supplies a context (`ctx`) with the
    directory, operator table, mutation flags, and the current time, so
    instances can be deep-copied cheaply by the interleaving checker.
    """

    def __init__(self, addr: InstanceAddress, cf: CombiningFunction,
                 upstream_functions: Sequence[FunctionAddress],
                 read_heavy: bool = False,
                 holistic_cap: int = 10**6,
                 state_extra_bytes: int = 0):
        self.addr = addr
        self.cf = cf
        self.upstreams: Tuple[FunctionAddress, ...] = tuple(upstream_functions)
        self.read_heavy = read_heavy
        self.holistic_cap = holistic_cap
        self.state_extra_bytes = state_extra_bytes

        self.state = InstanceState.RUNNABLE
        self.partial = PartialState.fresh(cf, cap=holistic_cap)
        self.read_copy: Any = None

        # Message claimed by a worker but not yet applied (timed execution).
        # Barrier progress must treat it as unexecuted work.
        self.in_service: Optional[SequencedMessage] = None

        self.seq = SeqCounters()
        self.send_index = 0
        self.barrier_counter = 0
        self.completed_barriers = 0

        # Inbound bookkeeping, all keyed by channel. Ready entries pair the
        # message with its arrival tag so drains can restore arrival order
        # and deep copies stay self-contained.
        self.last_delivered: Dict[ChannelId, int] = {}
        self.ready: Dict[ChannelId, Deque[Tuple[int, SequencedMessage]]] = {}
        self.withheld: Dict[ChannelId, Deque[_WithheldEntry]] = {}
        self.arrival_counter = 0

        # Lessor-side barrier machinery.
        self.active_barrier: Optional[_LessorBarrier] = None
        self.queued_sps: List[SequencedMessage] = []
        self.active_leases: Set[InstanceAddress] = set()
        self.deferred_registrations: List[SequencedMessage] = []
        self.critical_lane: List[SequencedMessage] = []

        # Lessee-side machinery.
        self.seal: Optional[_LesseeSeal] = None

        # Sender-side lease channels: lessee-targeted channels already
        # acknowledged by the target's lessor. Lessor-targeted channels need
        # no registration and never appear here.
        self.active_outbound: Set[ChannelId] = set()
        self.pending_outbound: Dict[ChannelId, List[SequencedMessage]] = {}
        self.registration_in_flight: Set[ChannelId] = set()

        # Sync program acknowledgments seen by this instance, for drivers
        # that originate barriers and hold their next sends behind the ack.
        self.acked_barriers: Set[str] = set()

    # -- small helpers ------------------------------------------------------

    @property
    def is_lessor(self) -> bool:
        return self.addr.is_lessor

    def _trace(self, event: str, barrier_id: str = "", channel: str = "",
               seq_id: object = "", detail: str = "") -> Trace:
        return Trace(event=event, barrier_id=barrier_id, channel=channel,
                     seq_id=seq_id, detail=detail)

    def _transition(self, new: InstanceState, barrier_id: str,
                    effects: List[Effect]) -> None:
        old = self.state
        if (old, new) not in LEGAL_TRANSITIONS:
            raise ProtocolViolation(self.addr, f"illegal transition {old.value}->{new.value}")
        self.state = new
        effects.append(self._trace("STATE_TRANSITION", barrier_id=barrier_id,
                                   detail=f"{old.value}->{new.value}"))

    def _next_barrier_id(self) -> str:
        self.barrier_counter += 1
        return f"{self.addr.render()}#b{self.barrier_counter}"

    def _build_message(self, channel: ChannelId, kind: MessageKind,
                       payload: Any = None, control: Optional[ControlKind] = None,
                       key: Optional[str] = None, injected_at: int = 0,
                       size_bytes: int = 64, barrier_id: Optional[str] = None,
                       root_id: Optional[str] = None) -> SequencedMessage:
        msg = SequencedMessage(
            channel=channel,
            seq_id=self.seq.next_seq_id(channel),
            kind=kind,
            payload=payload,
            control=control,
            key=key,
            injected_at=injected_at,
            send_index=self.send_index,
            size_bytes=size_bytes,
            barrier_id=barrier_id,
            root_id=root_id or f"{self.addr.render()}/{self.send_index}",
        )
        self.send_index += 1
        return msg

    # -- delivery ------------------------------------------------------------

    def deliver(self, msg: SequencedMessage, ctx) -> Tuple[List[Effect], Optional[SequencedMessage]]:
        """Accept one message off the transport.

        Returns (effects, eligible): eligible is the message itself when it
        was admitted to the ready set right now, so the driver can offer it
        to the scheduling strategy for forwarding.
        """
        if kind_tag(msg) not in enumerated_kinds():
            raise ProtocolTypeError(f"kind outside closed set: {msg}")
        if msg.channel.target != self.addr:
            raise ProtocolViolation(self.addr, f"misrouted message {msg.describe()}")
        last = self.last_delivered.get(msg.channel, -1)
        if msg.seq_id <= last:
            raise ProtocolViolation(
                self.addr,
                f"per-channel FIFO violated on {msg.channel.render()}: "
                f"{msg.seq_id} after {last}",
            )
        self.last_delivered[msg.channel] = msg.seq_id

        if msg.kind is MessageKind.CONTROL:
            return self._handle_control(msg, ctx), None
        return self._admit_user(msg, ctx)

    def _admit_user(self, msg: SequencedMessage, ctx) -> Tuple[List[Effect], Optional[SequencedMessage]]:
        effects: List[Effect] = []
        if self._must_withhold(msg):
            tag = self.arrival_counter
            self.arrival_counter += 1
            self.withheld.setdefault(msg.channel, deque()).append(_WithheldEntry(msg, tag))
            effects.append(self._trace("WITHHELD", channel=msg.channel.render(),
                                       seq_id=msg.seq_id,
                                       barrier_id=self._current_barrier_id()))
            return effects, None
        self._push_ready(msg)
        effects.append(self._trace("ADMIT", channel=msg.channel.render(), seq_id=msg.seq_id))
        return effects, msg

    def _push_ready(self, msg: SequencedMessage) -> None:
        tag = self.arrival_counter
        self.arrival_counter += 1
        self.ready.setdefault(msg.channel, deque()).append((tag, msg))

    def _current_barrier_id(self) -> str:
        if self.active_barrier is not None:
            return self.active_barrier.barrier_id
        if self.seal is not None:
            return self.seal.barrier_id
        return ""

    def _must_withhold(self, msg: SequencedMessage) -> bool:
        """Decide admission under the current barrier posture.

        While BLOCKED or CRITICAL (or sealed as a lessee) everything is
        withheld except dependency messages at or below an installed cut.
        While collecting (sync program seen, not yet blocked) only traffic
        from already-sealed upstream actors is cut-constrained; everything
        else keeps executing.
        """
        src_fn = msg.channel.source.function
        if self.state in (InstanceState.BLOCKED, InstanceState.CRITICAL):
            cuts = self._installed_cuts()
            cut = cuts.get(msg.channel)
            return cut is None or msg.seq_id > cut
        if self.seal is not None:
            if src_fn in self.seal.blocked_upstreams or msg.channel.source == self.seal.lessor:
                cut = self.seal.cuts.get(msg.channel)
                return cut is None or msg.seq_id > cut
            return True  # sealed lessees buffer unrelated traffic too
        if self.active_barrier is not None and src_fn in self.active_barrier.sealed_actors:
            cut = self.active_barrier.cuts.get(msg.channel)
            return cut is None or msg.seq_id > cut
        return False

    def _installed_cuts(self) -> Dict[ChannelId, int]:
        if self.seal is not None:
            return self.seal.cuts
        if self.active_barrier is not None:
            return self.active_barrier.cuts
        return {}

    # -- ready set for the scheduler ------------------------------------------

    def ready_heads(self) -> List[SequencedMessage]:
        """Executable messages: per-channel heads, plus the critical lane.

        During CRITICAL only the barrier's critical messages are offered, in
        sync-program arrival order, one at a time.
        """
        if self.state is InstanceState.CRITICAL:
            return [self.critical_lane[0]] if self.critical_lane else []
        if self.state is InstanceState.BLOCKED:
            return []
        return [q[0][1] for q in self.ready.values() if q]

    def backlog(self) -> int:
        """Messages admitted but not yet applied, service included."""
        queued = sum(len(q) for q in self.ready.values())
        queued += len(self.withheld)
        if self.in_service is not None:
            queued += 1
        return queued

    def arrival_tag(self, msg: SequencedMessage) -> int:
        q = self.ready.get(msg.channel)
        if q and q[0][1] is msg:
            return q[0][0]
        return 1 << 62

    def pop_ready(self, msg: SequencedMessage) -> None:
        if self.state is InstanceState.CRITICAL:
            if not self.critical_lane or self.critical_lane[0] is not msg:
                raise ProtocolViolation(self.addr, "critical lane head mismatch")
            self.critical_lane.pop(0)
            return
        q = self.ready.get(msg.channel)
        if not q or q[0][1] is not msg:
            raise ProtocolViolation(
                self.addr, f"attempt to execute non-head message {msg.describe()}")
        q.popleft()

    # -- execution -------------------------------------------------------------

    def execute(self, msg: SequencedMessage, ctx) -> Tuple[List[Effect], List[Emission]]:
        """Run the operator on one message already popped from the ready set."""
        effects: List[Effect] = []
        if msg.kind is MessageKind.CRITICAL and self.state is not InstanceState.CRITICAL:
            raise ProtocolViolation(
                self.addr, f"critical message executed outside CRITICAL: {msg.describe()}")
        operator = ctx.operator_for(self.addr.function)
        op_ctx = OperatorContext(self, msg)
        if msg.kind is MessageKind.CRITICAL:
            if self.active_barrier is not None:
                op_ctx.cm_index = self.active_barrier.executed_criticals
                op_ctx.cm_total = len(self.active_barrier.criticals)
            operator.on_critical(op_ctx, msg.payload)
        else:
            operator.on_data(op_ctx, msg.payload, msg.key)
        effects.append(self._trace(
            "EXECUTE", channel=msg.channel.render(), seq_id=msg.seq_id,
            barrier_id=self._current_barrier_id() if msg.kind is MessageKind.CRITICAL else "",
            detail=f"kind={kind_tag(msg)} root={getattr(msg, 'root_id', '')} "
                   f"value={msg.payload!r} reset={op_ctx.state_reset}"))
        emissions = op_ctx.emissions()
        if self.state is InstanceState.CRITICAL:
            barrier = self.active_barrier
            assert barrier is not None
            barrier.executed_criticals += 1
            held = [e for e in emissions if e.critical]
            barrier.critical_emissions.extend(held)
            emissions = [e for e in emissions if not e.critical]
        else:
            for e in emissions:
                if e.critical:
                    raise ProtocolViolation(
                        self.addr,
                        "critical emission outside CRITICAL execution; "
                        "criticals originate from sources or critical handlers",
                    )
        return effects, emissions

    def after_execution(self, ctx) -> List[Effect]:
        """Barrier progress checks that depend on execution progress."""
        effects: List[Effect] = []
        self._maybe_block(ctx, effects)
        self._maybe_reply(ctx, effects)
        self._maybe_finish_critical(ctx, effects)
        return effects

    # -- sends -------------------------------------------------------------------

    def package_send(self, emission: Emission, target: InstanceAddress, ctx,
                     injected_at: int, key: Optional[str] = None) -> List[Effect]:
        """Turn an operator emission into transport sends.

        First contact with a lessee-indexed target buffers the message
        behind a LESSEE_REGISTRATION round-trip through that function's
        lessor; once acknowledged the channel stays usable. Barrier safety
        for traffic on long-lived channels comes from cut withholding at the
        receiver, which the request/ack ordering guarantees to be installed
        before any post-critical traffic can be emitted.
        """
        effects: List[Effect] = []
        channel = ChannelId(self.addr, target)
        if emission.critical:
            raise ProtocolViolation(self.addr, "critical emissions travel inside sync programs")
        if target.instance_index > 0 and channel not in self.active_outbound:
            msg = self._build_message(
                channel, MessageKind.DATA, payload=emission.value,
                key=key if key is not None else emission.key,
                injected_at=injected_at, size_bytes=emission.size_bytes)
            self.pending_outbound.setdefault(channel, []).append(msg)
            effects.append(self._trace("SEND_BUFFERED", channel=channel.render(),
                                       seq_id=msg.seq_id))
            if channel not in self.registration_in_flight:
                self.registration_in_flight.add(channel)
                lessor = ctx.lessor_of(target.function)
                reg_channel = ChannelId(self.addr, lessor)
                reg = self._build_message(
                    reg_channel, MessageKind.CONTROL,
                    payload=LesseeRegistration(lessee=target, channel=channel),
                    control=ControlKind.LESSEE_REGISTRATION)
                effects.append(Send(reg))
            return effects
        msg = self._build_message(
            channel, MessageKind.DATA, payload=emission.value,
            key=key if key is not None else emission.key,
            injected_at=injected_at, size_bytes=emission.size_bytes)
        effects.append(Send(msg))
        return effects

    def _last_released(self, channel: ChannelId) -> Optional[int]:
        """Last sequence id actually handed to the transport on this channel.

        Messages parked behind an unacknowledged registration already carry
        sequence ids but have not left this instance. A dependency cut must
        never name them: the registration that releases them can be deferred
        until the very barrier the cut belongs to has finished, so the
        barrier would wait forever on its own captive.
        """
        buffered = self.pending_outbound.get(channel)
        if buffered:
            first = buffered[0].seq_id
            return first - 1 if first > 0 else None
        return self.seq.last_assigned(channel)

    # -- forwarding (lessor-initiated scale-out) ----------------------------------

    def can_forward(self, msg: SequencedMessage) -> bool:
        return (
            self.is_lessor
            and self.state is InstanceState.RUNNABLE
            and self.active_barrier is None
            and not self.queued_sps
            and self.seal is None
            and msg.kind is MessageKind.DATA
        )

    def forward(self, msg: SequencedMessage, target: InstanceAddress, ctx) -> List[Effect]:
        """Hand an admitted message to one of this lessor's lessees.

        The forwarded copy rides the lessor->lessee channel with a fresh
        sequence ID; the original's root id is preserved so audits can prove
        exactly-once execution of the logical message.
        """
        if not self.can_forward(msg):
            raise ProtocolViolation(self.addr, f"forwarding not permitted for {msg.describe()}")
        if target.function != self.addr.function or target.instance_index == 0:
            raise ProtocolViolation(self.addr, f"forward target must be a lessee: {target}")
        q = self.ready.get(msg.channel)
        if not q or q[0][1] is not msg:
            raise ProtocolViolation(self.addr, "only the channel head may be forwarded")
        q.popleft()
        effects: List[Effect] = []
        if target not in self.active_leases:
            self.active_leases.add(target)
            effects.append(ActivateLessee(lessor=self.addr, lessee=target, channel=None))
            effects.append(self._trace("LEASE_DIRECT", detail=target.render()))
        channel = ChannelId(self.addr, target)
        fwd = self._build_message(
            channel, MessageKind.DATA, payload=msg.payload, key=msg.key,
            injected_at=msg.injected_at, size_bytes=msg.size_bytes,
            root_id=getattr(msg, "root_id", None))
        effects.append(self._trace("FORWARD", channel=channel.render(), seq_id=fwd.seq_id,
                                   detail=f"root={fwd.root_id} from={msg.channel.render()}#{msg.seq_id}"))
        effects.append(Send(fwd))
        return effects

    def add_lease_direct(self, target: InstanceAddress) -> List[Effect]:
        if not self.is_lessor:
            raise ProtocolViolation(self.addr, "only lessors hold leases")
        self.active_leases.add(target)
        return [self._trace("LEASE_DIRECT", detail=target.render())]

    # -- control handling -----------------------------------------------------------

    def _handle_control(self, msg: SequencedMessage, ctx) -> List[Effect]:
        payload = msg.payload
        effects: List[Effect] = [self._trace(
            kind_tag(msg), channel=msg.channel.render(), seq_id=msg.seq_id,
            barrier_id=getattr(payload, "barrier_id", "") or
            (payload.barrier.barrier_id if isinstance(payload, SyncProgram) else ""))]
        if msg.control is ControlKind.SYNC_PROGRAM:
            effects.extend(self._on_sync_program(msg, ctx))
        elif msg.control is ControlKind.SYNC_REQUEST:
            effects.extend(self._on_sync_request(msg, ctx))
        elif msg.control is ControlKind.SYNC_REQUEST_ACK:
            effects.extend(self._on_sync_request_ack(msg, ctx))
        elif msg.control is ControlKind.SYNC_REPLY:
            effects.extend(self._on_sync_reply(msg, ctx))
        elif msg.control is ControlKind.UNSYNC:
            effects.extend(self._on_unsync(msg, ctx))
        elif msg.control is ControlKind.LESSEE_REGISTRATION:
            effects.extend(self._on_registration(msg, ctx))
        elif msg.control is ControlKind.LESSEE_REGISTRATION_ACK:
            effects.extend(self._on_registration_ack(msg, ctx))
        elif msg.control is ControlKind.SP_ACK:
            effects.extend(self._on_sp_ack(msg, ctx))
        else:  # pragma: no cover - closed enum
            raise ProtocolTypeError(f"unhandled control kind {msg.control}")
        return effects

    # sync program: only lessors receive these.
    def _on_sync_program(self, msg: SequencedMessage, ctx) -> List[Effect]:
        sp: SyncProgram = msg.payload
        if not self.is_lessor:
            raise ProtocolViolation(self.addr, "sync program delivered to a lessee")
        if sp.barrier.target != self.addr.function:
            raise ProtocolViolation(self.addr, f"sync program for {sp.barrier.target}")
        effects: List[Effect] = []
        barrier = self.active_barrier
        if barrier is not None and self._joins_active(sp):
            self._absorb_sp(sp, effects)
        elif barrier is not None or self.state is not InstanceState.RUNNABLE or self.seal is not None:
            self.queued_sps.append(msg)
            effects.append(self._trace("SP_QUEUED", barrier_id=sp.barrier.barrier_id))
            return effects
        else:
            self._open_barrier(sp, effects)
        self._maybe_block(ctx, effects)
        return effects

    def _joins_active(self, sp: SyncProgram) -> bool:
        b = self.active_barrier
        return (
            b is not None
            and not b.blocked
            and b.granularity is Granularity.SYNC_ONE
            and sp.barrier.granularity is Granularity.SYNC_ONE
            and sp.barrier.epoch == b.epoch
            and sp.sender.function in b.expected_sps
            and sp.sender.function not in b.received_sps
        )

    def _open_barrier(self, sp: SyncProgram, effects: List[Effect]) -> None:
        spec = sp.barrier
        if spec.granularity is Granularity.SYNC_ONE:
            barrier_id = f"one:{self.addr.function.render()}:epoch{spec.epoch}"
            expected = set(spec.blocked_upstreams)
        else:
            barrier_id = spec.barrier_id
            expected = {sp.sender.function}
        self.active_barrier = _LessorBarrier(
            barrier_id=barrier_id,
            granularity=spec.granularity,
            target=spec.target,
            blocked_upstreams=tuple(spec.blocked_upstreams),
            epoch=spec.epoch,
            expected_sps=expected,
        )
        effects.append(self._trace("BARRIER_OPEN", barrier_id=barrier_id,
                                   detail=f"granularity={spec.granularity.value}"))
        self._absorb_sp(sp, effects)

    def _absorb_sp(self, sp: SyncProgram, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        assert barrier is not None
        sender_fn = sp.sender.function
        if sender_fn in barrier.received_sps:
            effects.append(self._trace("SP_DUPLICATE", barrier_id=barrier.barrier_id,
                                       detail=f"from {sp.sender.render()}"))
            return
        barrier.received_sps[sender_fn] = sp
        barrier.sealed_actors.add(sender_fn)
        barrier.cuts.update(sp.dependency_payload)
        barrier.criticals.extend(sp.criticals)
        barrier.owed_acks.append((sp.sender, sp.barrier.barrier_id))
        effects.append(self._trace(
            "SP_ABSORBED", barrier_id=barrier.barrier_id,
            detail=f"from={sp.sender.render()} cms={len(sp.criticals)} "
                   f"cuts={len(sp.dependency_payload)}"))
        # Messages beyond the new cuts may be sitting in ready, admitted
        # before this sync program arrived. That cannot happen for correctly
        # gated senders, but re-screen defensively under mutation.
        self._rescreen_ready(barrier.cuts, tuple(barrier.sealed_actors))

    def _rescreen_ready(self, cuts: Dict[ChannelId, int],
                        sealed: Tuple[FunctionAddress, ...]) -> None:
        for channel, q in self.ready.items():
            if channel.source.function not in sealed:
                continue
            cut = cuts.get(channel)
            keep: Deque[Tuple[int, SequencedMessage]] = deque()
            while q:
                tag, m = q.popleft()
                if cut is not None and m.seq_id <= cut:
                    keep.append((tag, m))
                else:
                    self.withheld.setdefault(channel, deque()).append(_WithheldEntry(m, tag))
            q.extend(keep)

    def _dep_satisfied(self, channel: ChannelId, cut: int) -> bool:
        # FIFO delivery means reaching the cut implies nothing below it is in
        # flight; an empty ready prefix means everything delivered executed.
        if self.last_delivered.get(channel, -1) < cut:
            return False
        q = self.ready.get(channel)
        return not q or q[0][1].seq_id > cut

    def _maybe_block(self, ctx, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        if barrier is None or barrier.blocked or self.state is not InstanceState.RUNNABLE:
            return
        if self.in_service is not None:
            return
        if barrier.expected_sps - set(barrier.received_sps):
            return
        for channel, cut in barrier.cuts.items():
            if channel.target == self.addr and not self._dep_satisfied(channel, cut):
                return
        barrier.blocked = True
        self._transition(InstanceState.BLOCKED, barrier.barrier_id, effects)
        effects.append(self._trace("BLOCKED_ENTER", barrier_id=barrier.barrier_id))
        self._sweep_ready_to_withheld()
        self._send_sync_requests(ctx, effects)
        self._maybe_send_sp_acks(ctx, effects)
        self._maybe_consolidate(ctx, effects)

    def _sweep_ready_to_withheld(self) -> None:
        for channel, q in self.ready.items():
            while q:
                tag, m = q.popleft()
                self.withheld.setdefault(channel, deque()).append(_WithheldEntry(m, tag))

    def _send_sync_requests(self, ctx, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        assert barrier is not None
        lessees: Set[InstanceAddress] = set(self.active_leases)
        for channel in barrier.cuts:
            t = channel.target
            if t != self.addr and t.function == self.addr.function:
                lessees.add(t)
        barrier.synced_lessees = sorted(lessees)
        # The lease ends with the request; survivors re-register afterwards.
        self.active_leases.clear()
        for lessee in barrier.synced_lessees:
            cuts = {ch: cut for ch, cut in barrier.cuts.items() if ch.target == lessee}
            fwd_channel = ChannelId(self.addr, lessee)
            last_fwd = self.seq.last_assigned(fwd_channel)
            if last_fwd is not None:
                # Cut for the forwarding channel itself: everything this
                # lessor handed over so far belongs to the barrier.
                cuts[fwd_channel] = last_fwd
            req = self._build_message(
                fwd_channel, MessageKind.CONTROL,
                payload=SyncRequest(
                    barrier_id=barrier.barrier_id,
                    blocked_upstreams=barrier.blocked_upstreams,
                    cuts=cuts,
                ),
                control=ControlKind.SYNC_REQUEST,
                barrier_id=barrier.barrier_id)
            effects.append(Send(req))
            barrier.acks_pending.add(lessee)
        if ctx.mutations.drop_sync_request_ack:
            barrier.acks_pending.clear()

    def _maybe_send_sp_acks(self, ctx, effects: List[Effect]) -> None:
        """Acknowledge the sync program(s) once every lessee sealed.

        The ack releases upstream traffic held behind the critical message,
        so it must not go out before every lessee provably installed its
        cuts; SYNC_REQUEST_ACK is what proves that.
        """
        barrier = self.active_barrier
        if barrier is None or not barrier.blocked or barrier.sp_acked:
            return
        if barrier.acks_pending:
            return
        barrier.sp_acked = True
        for upstream, sp_barrier_id in barrier.owed_acks:
            channel = ChannelId(self.addr, upstream)
            ack = self._build_message(
                channel, MessageKind.CONTROL, payload=SpAck(barrier_id=sp_barrier_id),
                control=ControlKind.SP_ACK, barrier_id=sp_barrier_id)
            effects.append(Send(ack))

    def _on_sync_request(self, msg: SequencedMessage, ctx) -> List[Effect]:
        req: SyncRequest = msg.payload
        if self.is_lessor:
            raise ProtocolViolation(self.addr, "sync request delivered to a lessor")
        effects: List[Effect] = []
        if self.seal is not None:
            raise ProtocolViolation(
                self.addr, f"overlapping sync request {req.barrier_id} while sealed "
                           f"under {self.seal.barrier_id}")
        self.seal = _LesseeSeal(
            barrier_id=req.barrier_id,
            blocked_upstreams=req.blocked_upstreams,
            cuts=dict(req.cuts),
            lessor=msg.channel.source,
        )
        effects.append(self._trace("SEALED", barrier_id=req.barrier_id,
                                   detail=f"cuts={len(req.cuts)}"))
        if not ctx.mutations.drop_sync_request_ack:
            ack = self._build_message(
                ChannelId(self.addr, msg.channel.source), MessageKind.CONTROL,
                payload=SyncRequestAck(barrier_id=req.barrier_id),
                control=ControlKind.SYNC_REQUEST_ACK, barrier_id=req.barrier_id)
            effects.append(Send(ack))
        # Newly sealed: anything already admitted beyond a cut moves out of
        # the ready set before further execution.
        self._rescreen_ready_lessee()
        self._maybe_reply(ctx, effects)
        return effects

    def _rescreen_ready_lessee(self) -> None:
        seal = self.seal
        assert seal is not None
        for channel, q in list(self.ready.items()):
            keep: Deque[Tuple[int, SequencedMessage]] = deque()
            while q:
                tag, m = q.popleft()
                cut = seal.cuts.get(channel)
                if cut is not None and m.seq_id <= cut:
                    keep.append((tag, m))
                else:
                    self.withheld.setdefault(channel, deque()).append(_WithheldEntry(m, tag))
            q.extend(keep)

    def _maybe_reply(self, ctx, effects: List[Effect]) -> None:
        seal = self.seal
        if seal is None or seal.replied:
            return
        if self.in_service is not None:
            return
        if not ctx.mutations.skip_dependency_wait:
            for channel, cut in seal.cuts.items():
                if not self._dep_satisfied(channel, cut):
                    return
        seal.replied = True
        self._transition(InstanceState.BLOCKED, seal.barrier_id, effects)
        self._sweep_ready_to_withheld()
        downstream_last = {
            ch: seq for ch, seq in ((c, self._last_released(c)) for c in self.seq.snapshot())
            if seq is not None and ch.target.function != self.addr.function
        }
        shipped = self.partial
        self.partial = PartialState.fresh(self.cf, cap=self.holistic_cap)
        reply = self._build_message(
            ChannelId(self.addr, seal.lessor), MessageKind.CONTROL,
            payload=SyncReply(
                barrier_id=seal.barrier_id,
                partial=shipped,
                downstream_last_sent=downstream_last,
            ),
            control=ControlKind.SYNC_REPLY, barrier_id=seal.barrier_id,
            size_bytes=64 + shipped.estimate_bytes() + self.state_extra_bytes)
        effects.append(Send(reply))
        effects.append(self._trace("SYNC_REPLY_SENT", barrier_id=seal.barrier_id,
                                   detail=f"updates={shipped.update_count}"))

    def _on_sync_request_ack(self, msg: SequencedMessage, ctx) -> List[Effect]:
        barrier = self.active_barrier
        effects: List[Effect] = []
        if barrier is None or msg.payload.barrier_id != barrier.barrier_id:
            effects.append(self._trace("STALE_CONTROL", detail=msg.describe()))
            return effects
        barrier.acks_pending.discard(msg.channel.source)
        self._maybe_send_sp_acks(ctx, effects)
        return effects

    def _on_sync_reply(self, msg: SequencedMessage, ctx) -> List[Effect]:
        barrier = self.active_barrier
        effects: List[Effect] = []
        reply: SyncReply = msg.payload
        if barrier is None or reply.barrier_id != barrier.barrier_id:
            raise ProtocolViolation(self.addr, f"unexpected sync reply {reply.barrier_id}")
        src = msg.channel.source
        if src not in barrier.synced_lessees or src in barrier.replies:
            raise ProtocolViolation(self.addr, f"sync reply from unexpected lessee {src}")
        barrier.replies[src] = reply
        self._maybe_consolidate(ctx, effects)
        return effects

    def _maybe_consolidate(self, ctx, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        if (barrier is None or not barrier.blocked
                or self.state is not InstanceState.BLOCKED
                or len(barrier.replies) < len(barrier.synced_lessees)):
            return
        ordered = [self.partial] + [
            barrier.replies[l].partial for l in barrier.synced_lessees]
        merged = consolidate(ordered, self.cf, cap=self.holistic_cap)
        self.partial = merged
        effects.append(self._trace(
            "CONSOLIDATE", barrier_id=barrier.barrier_id,
            detail=f"parts={len(ordered)} updates={merged.update_count} "
                   f"result={self.cf.result(merged.state)!r}"))
        self._transition(InstanceState.CRITICAL, barrier.barrier_id, effects)
        barrier.criticals_pending = list(barrier.criticals)
        if ctx.mutations.execute_cm_at_lessee and barrier.synced_lessees:
            # Deliberately wrong: hand the criticals to a lessee instead of
            # running them here.
            victim = barrier.synced_lessees[0]
            channel = ChannelId(self.addr, victim)
            for cm in barrier.criticals_pending:
                clone = self._build_message(
                    channel, MessageKind.CRITICAL, payload=cm.payload,
                    injected_at=cm.injected_at, root_id=getattr(cm, "root_id", None),
                    barrier_id=barrier.barrier_id)
                effects.append(Send(clone))
            barrier.executed_criticals = len(barrier.criticals_pending)
            barrier.criticals_pending = []
            self._maybe_finish_critical(ctx, effects)
            return
        self.critical_lane = list(barrier.criticals_pending)
        if not self.critical_lane:
            self._maybe_finish_critical(ctx, effects)

    def _maybe_finish_critical(self, ctx, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        if (barrier is None or self.state is not InstanceState.CRITICAL
                or self.critical_lane
                or barrier.executed_criticals < len(barrier.criticals)):
            return
        if not barrier.downstream_sps_sent:
            barrier.downstream_sps_sent = True
            effects.extend(self._emit_downstream_sps(ctx, barrier))
        if barrier.downstream_acks_pending and not ctx.mutations.unsync_before_sp_ack:
            return
        self._finish_barrier(ctx, effects)

    def _emit_downstream_sps(self, ctx, barrier: _LessorBarrier) -> List[Effect]:
        """Wrap critical outputs of this barrier into follow-up sync programs."""
        effects: List[Effect] = []
        by_target: Dict[FunctionAddress, List[Emission]] = {}
        for emission in barrier.critical_emissions:
            targets = ([emission.target_function] if emission.target_function
                       else ctx.downstreams_of(self.addr.function))
            for t in targets:
                by_target.setdefault(t, []).append(emission)
        for target_fn in sorted(by_target, key=lambda f: f.render()):
            emissions = by_target[target_fn]
            gran = (Granularity.SYNC_ONE
                    if any(e.granularity is Granularity.SYNC_ONE for e in emissions)
                    else Granularity.SYNC_CHANNEL)
            effects.extend(self._send_sync_program(
                ctx, target_fn, emissions,
                granularity=gran,
                epoch=max(e.epoch for e in emissions),
                owed_by=barrier))
        return effects

    def _send_sync_program(self, ctx, target_fn: FunctionAddress,
                           emissions: List[Emission], granularity: Granularity,
                           epoch: int, owed_by: Optional[_LessorBarrier]) -> List[Effect]:
        """Build and send one sync program carrying this actor's criticals.

        The dependency payload snapshots, per channel from any instance of
        this function into any instance of the target, the last sequence ID
        sent before the criticals: this lessor's own counters plus what the
        lessees reported in their sync replies.
        """
        effects: List[Effect] = []
        target_lessor = ctx.lessor_of(target_fn)
        channel = ChannelId(self.addr, target_lessor)
        payload: Dict[ChannelId, int] = {}
        for ch in self.seq.snapshot():
            if ch.target.function != target_fn:
                continue
            last = self._last_released(ch)
            if last is not None:
                payload[ch] = last
        if owed_by is not None:
            for reply in owed_by.replies.values():
                for ch, last in reply.downstream_last_sent.items():
                    if ch.target.function == target_fn:
                        payload[ch] = last
        criticals: List[SequencedMessage] = []
        for emission in emissions:
            cm = self._build_message(
                channel, MessageKind.CRITICAL, payload=emission.value,
                key=emission.key, injected_at=ctx.now,
                size_bytes=emission.size_bytes)
            criticals.append(cm)
        barrier_id = self._next_barrier_id()
        spec = BarrierSpec(
            barrier_id=barrier_id,
            granularity=granularity,
            target=target_fn,
            blocked_upstreams=(self.addr.function,) if granularity is Granularity.SYNC_CHANNEL
            else tuple(ctx.upstreams_of(target_fn)),
            epoch=epoch,
        )
        sp_msg = self._build_message(
            channel, MessageKind.CONTROL,
            payload=SyncProgram(barrier=spec, criticals=criticals,
                                dependency_payload=payload, sender=self.addr),
            control=ControlKind.SYNC_PROGRAM, barrier_id=barrier_id)
        effects.append(Send(sp_msg))
        effects.append(self._trace(
            "SP_SENT", barrier_id=barrier_id, channel=channel.render(),
            seq_id=sp_msg.seq_id,
            detail=f"target={target_fn.render()} cms={len(criticals)} cuts={len(payload)}"))
        if owed_by is not None:
            owed_by.downstream_acks_pending.add(barrier_id)
        return effects

    def _finish_barrier(self, ctx, effects: List[Effect]) -> None:
        barrier = self.active_barrier
        assert barrier is not None
        consolidated_copy = read_state_snapshot(self.partial) if self.read_heavy else None
        for lessee in barrier.synced_lessees:
            unsync = self._build_message(
                ChannelId(self.addr, lessee), MessageKind.CONTROL,
                payload=Unsync(barrier_id=barrier.barrier_id, consolidated=consolidated_copy),
                control=ControlKind.UNSYNC, barrier_id=barrier.barrier_id,
                size_bytes=64 + (self.partial.estimate_bytes() + self.state_extra_bytes
                                 if self.read_heavy else 0))
            effects.append(Send(unsync))
        self._transition(InstanceState.RUNNABLE, barrier.barrier_id, effects)
        effects.append(self._trace("BARRIER_DONE", barrier_id=barrier.barrier_id,
                                   detail=f"lessees={len(barrier.synced_lessees)}"))
        self.active_barrier = None
        self.completed_barriers += 1
        self._drain_withheld(effects)
        self._process_deferred_registrations(ctx, effects)
        self._pop_queued_sp(ctx, effects)

    def _drain_withheld(self, effects: List[Effect]) -> None:
        entries: List[_WithheldEntry] = []
        for channel, q in self.withheld.items():
            entries.extend(q)
        self.withheld.clear()
        # Per-channel FIFO is preserved because arrival tags are assigned in
        # delivery order; cross-channel order follows original arrival.
        for entry in sorted(entries, key=lambda e: e.arrival):
            self._push_ready(entry.message)
        if entries:
            effects.append(self._trace("DRAIN", detail=f"released={len(entries)}"))

    def _process_deferred_registrations(self, ctx, effects: List[Effect]) -> None:
        pending = self.deferred_registrations
        self.deferred_registrations = []
        for msg in pending:
            effects.extend(self._accept_registration(msg, ctx))

    def _pop_queued_sp(self, ctx, effects: List[Effect]) -> None:
        if not self.queued_sps or self.active_barrier is not None:
            return
        if self.state is not InstanceState.RUNNABLE:
            return
        head = self.queued_sps.pop(0)
        sp: SyncProgram = head.payload
        self._open_barrier(sp, effects)
        # Pull any queued siblings of a SYNC_ONE barrier in with it.
        if sp.barrier.granularity is Granularity.SYNC_ONE:
            rest = []
            for queued in self.queued_sps:
                if self._joins_active(queued.payload):
                    self._absorb_sp(queued.payload, effects)
                else:
                    rest.append(queued)
            self.queued_sps = rest
        self._maybe_block(ctx, effects)

    def _on_unsync(self, msg: SequencedMessage, ctx) -> List[Effect]:
        effects: List[Effect] = []
        un: Unsync = msg.payload
        if self.seal is None or self.seal.barrier_id != un.barrier_id:
            effects.append(self._trace("STALE_CONTROL", detail=msg.describe()))
            return effects
        if not self.seal.replied:
            raise ProtocolViolation(self.addr, "unsync before this lessee replied")
        self.seal = None
        if self.read_heavy and un.consolidated is not None:
            self.read_copy = un.consolidated
        self._transition(InstanceState.RUNNABLE, un.barrier_id, effects)
        effects.append(self._trace("UNSYNC_RECV", barrier_id=un.barrier_id))
        self.completed_barriers += 1
        self._drain_withheld(effects)
        return effects

    def _on_registration(self, msg: SequencedMessage, ctx) -> List[Effect]:
        reg: LesseeRegistration = msg.payload
        if not self.is_lessor:
            raise ProtocolViolation(self.addr, "registration delivered to a lessee")
        if reg.lessee.function != self.addr.function:
            raise ProtocolViolation(
                self.addr, f"registration names foreign function {reg.lessee.function}")
        barrier_active = (self.active_barrier is not None or self.queued_sps
                          or self.state is not InstanceState.RUNNABLE)
        if barrier_active and not ctx.mutations.allow_registration_while_blocked:
            self.deferred_registrations.append(msg)
            return [self._trace("REGISTRATION_DEFERRED", detail=reg.channel.render())]
        return self._accept_registration(msg, ctx)

    def _accept_registration(self, msg: SequencedMessage, ctx) -> List[Effect]:
        reg: LesseeRegistration = msg.payload
        effects: List[Effect] = [self._trace("REGISTRATION_ACCEPT", detail=reg.channel.render())]
        self.active_leases.add(reg.lessee)
        effects.append(ActivateLessee(lessor=self.addr, lessee=reg.lessee, channel=reg.channel))
        ack = self._build_message(
            ChannelId(self.addr, msg.channel.source), MessageKind.CONTROL,
            payload=LesseeRegistrationAck(channel=reg.channel),
            control=ControlKind.LESSEE_REGISTRATION_ACK)
        effects.append(Send(ack))
        return effects

    def _on_registration_ack(self, msg: SequencedMessage, ctx) -> List[Effect]:
        ack: LesseeRegistrationAck = msg.payload
        effects: List[Effect] = []
        self.registration_in_flight.discard(ack.channel)
        self.active_outbound.add(ack.channel)
        for buffered in self.pending_outbound.pop(ack.channel, []):
            effects.append(Send(buffered))
        effects.append(self._trace("CHANNEL_ACTIVE", channel=ack.channel.render()))
        return effects

    def _on_sp_ack(self, msg: SequencedMessage, ctx) -> List[Effect]:
        effects: List[Effect] = []
        ack: SpAck = msg.payload
        self.acked_barriers.add(ack.barrier_id)
        barrier = self.active_barrier
        if barrier is not None and ack.barrier_id in barrier.downstream_acks_pending:
            barrier.downstream_acks_pending.discard(ack.barrier_id)
            self._maybe_finish_critical(ctx, effects)
        else:
            effects.append(self._trace("SP_ACK_NOTED", barrier_id=ack.barrier_id))
        return effects

    # -- source-style emission, used by drivers that originate criticals -------

    def originate_barrier(self, ctx, target_fn: FunctionAddress,
                          emissions: List[Emission],
                          granularity: Granularity = Granularity.SYNC_CHANNEL,
                          epoch: int = 0) -> Tuple[List[Effect], str]:
        """Send a sync program from a trivially sequential originator.

        Used by sources (single-instance injectors): no own barrier needed,
        but the envelope and dependency payload are mandatory even with zero
        parallelism downstream of the cut.
        """
        effects = self._send_sync_program(
            ctx, target_fn, emissions, granularity=granularity, epoch=epoch, owed_by=None)
        barrier_id = ""
        for e in effects:
            if isinstance(e, Send) and e.message.control is ControlKind.SYNC_PROGRAM:
                barrier_id = e.message.payload.barrier.barrier_id
        return effects, barrier_id

    # -- reads ------------------------------------------------------------------

    def read_state(self) -> Any:
        """Snapshot of the state this instance may legally serve.

        Lessors serve their partial (authoritative while CRITICAL); lessees
        serve the consolidated copy shipped on unsync in read-heavy mode.
        """
        if not self.is_lessor and self.read_heavy and self.read_copy is not None:
            import copy as _copy
            return _copy.deepcopy(self.read_copy)
        return read_state_snapshot(self.partial)
