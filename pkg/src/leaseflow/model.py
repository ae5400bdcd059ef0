"""Core data model: addresses, channels, sequenced messages, barriers.

Every message in the system travels on a directed instance-to-instance
channel and carries a channel-local sequence ID assigned by the sender.
Sequence IDs are the only ordering primitive: delivery is FIFO per channel,
and nothing is assumed about cross-channel order. Control messages ride the
same channels and consume sequence IDs like any other message, so a control
message is totally ordered against the data messages around it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

SEQ_BITS = 64
SEQ_MAX = (1 << SEQ_BITS) - 1


@dataclass(frozen=True, order=True)
class FunctionAddress:
    """A logical dataflow operator within a job."""

    job_id: str
    function_id: str

    def render(self) -> str:
        return f"{self.job_id}/{self.function_id}"

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.render()


@dataclass(frozen=True, order=True)
class InstanceAddress:
    """One physical instance of a function, pinned to a worker.

    Instance 0 is the lessor: the authoritative instance that owns the
    function's managed state and the only one allowed to run critical
    messages. Higher indices are lessees created by scale-out.
    """

    job_id: str
    function_id: str
    instance_index: int
    worker_id: int

    @property
    def function(self) -> FunctionAddress:
        return FunctionAddress(self.job_id, self.function_id)

    @property
    def is_lessor(self) -> bool:
        return self.instance_index == 0

    def render(self) -> str:
        # Canonical form: job/function/instance@worker
        return f"{self.job_id}/{self.function_id}/{self.instance_index}@{self.worker_id}"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True, order=True)
class ChannelId:
    """Directed instance-to-instance channel."""

    source: InstanceAddress
    target: InstanceAddress

    def render(self) -> str:
        return f"{self.source.render()}->{self.target.render()}"

    def __str__(self) -> str:
        return self.render()


class MessageKind(enum.Enum):
    DATA = "DATA"
    CRITICAL = "CRITICAL"
    CONTROL = "CONTROL"


class ControlKind(enum.Enum):
    SYNC_PROGRAM = "SYNC_PROGRAM"
    SYNC_REQUEST = "SYNC_REQUEST"
    SYNC_REQUEST_ACK = "SYNC_REQUEST_ACK"
    SYNC_REPLY = "SYNC_REPLY"
    UNSYNC = "UNSYNC"
    LESSEE_REGISTRATION = "LESSEE_REGISTRATION"
    LESSEE_REGISTRATION_ACK = "LESSEE_REGISTRATION_ACK"
    SP_ACK = "SP_ACK"


def enumerated_kinds() -> Tuple[str, ...]:
    """The closed set of message kind tags a mailbox may ever dequeue.

    DATA and CRITICAL plus the eight control kinds. Anything outside this
    set is a type-closure violation.
    """
    return ("DATA", "CRITICAL") + tuple(k.value for k in ControlKind)


def kind_tag(msg: "SequencedMessage") -> str:
    """Render a message's kind as one of the enumerated tags."""
    if msg.kind is MessageKind.CONTROL:
        if msg.control is None:
            raise ProtocolTypeError(f"control message without control kind: {msg}")
        return msg.control.value
    return msg.kind.value


class ProtocolTypeError(TypeError):
    """A message fell outside the closed kind set or is malformed."""


class Granularity(enum.Enum):
    """How wide a barrier cuts.

    SYNC_CHANNEL blocks exactly one upstream actor (per-actor barrier, e.g.
    channel-wise watermarks). SYNC_ONE blocks every upstream actor of the
    target (global barrier, e.g. checkpoint alignment).
    """

    SYNC_CHANNEL = "SYNC_CHANNEL"
    SYNC_ONE = "SYNC_ONE"


@dataclass(frozen=True)
class BarrierSpec:
    """Descriptor of one barrier as announced by a sync program.

    epoch groups the N upstream sync programs of one SYNC_ONE barrier;
    SYNC_CHANNEL barriers are identified per sync program.
    """

    barrier_id: str
    granularity: Granularity
    target: FunctionAddress
    blocked_upstreams: Tuple[FunctionAddress, ...]
    epoch: int = 0


@dataclass
class SequencedMessage:
    """Unit of transport. Exactly one kind; control carries a control kind.

    send_index is a per-sender monotone counter over *all* of that
    instance's sends regardless of channel. It never influences delivery or
    execution; it exists so an external observer can reconstruct the
    sender's emission order across channels.
    """

    channel: ChannelId
    seq_id: int
    kind: MessageKind
    payload: Any = None
    control: Optional[ControlKind] = None
    key: Optional[str] = None
    injected_at: int = 0
    send_index: int = 0
    size_bytes: int = 64
    barrier_id: Optional[str] = None
    # Identity of the logical message, stable across forwarding hops.
    root_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0 <= self.seq_id <= SEQ_MAX:
            raise ProtocolTypeError(f"seq_id out of 64-bit range: {self.seq_id}")
        if (self.kind is MessageKind.CONTROL) != (self.control is not None):
            raise ProtocolTypeError(
                f"kind/control mismatch: kind={self.kind} control={self.control}"
            )

    @property
    def is_user(self) -> bool:
        """Data or critical: messages a user function can execute."""
        return self.kind in (MessageKind.DATA, MessageKind.CRITICAL)

    def describe(self) -> str:
        return f"{kind_tag(self)}#{self.seq_id}@{self.channel.render()}"


class SeqCounters:
    """Per-channel monotone sequence assignment, owned by the sender side."""

    def __init__(self) -> None:
        self._next: Dict[ChannelId, int] = {}

    def next_seq_id(self, channel: ChannelId) -> int:
        value = self._next.get(channel, 0)
        if value > SEQ_MAX:
            raise ProtocolTypeError(f"sequence space exhausted on {channel}")
        self._next[channel] = value + 1
        return value

    def last_assigned(self, channel: ChannelId) -> Optional[int]:
        value = self._next.get(channel)
        return None if value is None else value - 1

    def snapshot(self) -> Dict[ChannelId, int]:
        return dict(self._next)


def happens_before(a: SequencedMessage, b: SequencedMessage) -> bool:
    """Channel-local order: a -> b iff same channel and a was sent earlier.

    Messages on different channels are incomparable; callers that need a
    sender-wide order must use send_index explicitly.
    """
    return a.channel == b.channel and a.seq_id < b.seq_id


def hb_pairs(messages: Iterable[SequencedMessage]) -> set:
    """All ordered happens-before pairs among the given messages."""
    msgs = list(messages)
    out = set()
    for a in msgs:
        for b in msgs:
            if a is not b and happens_before(a, b):
                out.add((a.describe(), b.describe()))
    return out
