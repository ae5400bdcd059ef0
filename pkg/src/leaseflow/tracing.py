"""Run traces: a flat TSV event log plus the audits that read it back.

One row per event, tab-separated, with a fixed column set so downstream
tooling never needs to guess. The audits re-derive the core protocol
guarantees from a finished trace alone: per-channel FIFO delivery,
exactly-once execution per logical message, legal state transitions, and
hook ordering around every execution. A clean trace from a run is therefore
evidence, not just a debugging aid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

SCHEMA_VERSION = 1

COLUMNS = ("sim_time", "worker", "instance", "event", "barrier_id",
           "channel", "seq_id", "detail")

# Transitions the instance state machine may take, mirrored here so the
# audit has no import-time dependency on the engine it is checking.
_LEGAL = {("RUNNABLE", "BLOCKED"), ("BLOCKED", "CRITICAL"),
          ("BLOCKED", "RUNNABLE"), ("CRITICAL", "RUNNABLE")}


@dataclass
class TraceRecord:
    sim_time: int
    worker: int
    instance: str
    event: str
    barrier_id: str
    channel: str
    seq_id: str
    detail: str


def _clean(value: object) -> str:
    s = str(value)
    if "\t" in s or "\n" in s:
        s = s.replace("\t", " ").replace("\n", " ")
    return s


class Tracer:
    """TSV sink; optionally keeps rows in memory for in-process audits."""

    def __init__(self, path: Optional[str] = None, collect: bool = False) -> None:
        self.path = path
        self.collect = collect
        self.records: List[TraceRecord] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w")
            self._fh.write(f"# schema={SCHEMA_VERSION}\n")
            self._fh.write("\t".join(COLUMNS) + "\n")

    def row(self, sim_time: int, worker: int, instance: str, event: str,
            barrier_id: str = "", channel: str = "", seq_id: object = "",
            detail: str = "") -> None:
        if self._fh is None and not self.collect:
            return
        if self._fh is not None:
            self._fh.write("\t".join((
                str(sim_time), str(worker), instance, event,
                _clean(barrier_id), _clean(channel), _clean(seq_id),
                _clean(detail))) + "\n")
        if self.collect:
            self.records.append(TraceRecord(
                sim_time, worker, instance, event, str(barrier_id),
                str(channel), str(seq_id), str(detail)))

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_trace(path: str) -> List[TraceRecord]:
    records: List[TraceRecord] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"# schema={SCHEMA_VERSION}":
            raise ValueError(f"unsupported trace header: {header!r}")
        columns = tuple(fh.readline().rstrip("\n").split("\t"))
        if columns != COLUMNS:
            raise ValueError(f"unexpected trace columns: {columns}")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(COLUMNS):
                raise ValueError(f"malformed trace row: {line!r}")
            records.append(TraceRecord(int(parts[0]), int(parts[1]), parts[2],
                                       parts[3], parts[4], parts[5], parts[6],
                                       parts[7]))
    return records


def _detail_field(detail: str, name: str) -> Optional[str]:
    for token in detail.split():
        if token.startswith(name + "="):
            return token[len(name) + 1:]
    return None


def audit_channel_fifo(records: Iterable[TraceRecord]) -> List[str]:
    """Delivered sequence IDs must strictly increase per channel.

    Gaps are fine (control embedded in envelopes consumes IDs); going
    backwards or repeating is a duplicated or reordered delivery.
    """
    problems: List[str] = []
    last: Dict[str, int] = {}
    for r in records:
        if r.event != "DELIVER" or not r.seq_id:
            continue
        seq = int(r.seq_id)
        prev = last.get(r.channel)
        if prev is not None and seq <= prev:
            problems.append(
                f"channel {r.channel}: seq {seq} delivered after {prev}")
        last[r.channel] = seq
    return problems


def audit_exactly_once(records: Iterable[TraceRecord]) -> List[str]:
    """Each logical message executes exactly once, forwarding included."""
    problems: List[str] = []
    seen: Dict[str, str] = {}
    for r in records:
        if r.event != "EXECUTE":
            continue
        root = _detail_field(r.detail, "root")
        if not root or root == "None":
            continue
        if root in seen:
            problems.append(
                f"root {root} executed at {seen[root]} and again at {r.instance}")
        else:
            seen[root] = r.instance
    return problems


def audit_state_machine(records: Iterable[TraceRecord]) -> List[str]:
    """Per-instance transition chains must be continuous and legal."""
    problems: List[str] = []
    state: Dict[str, str] = {}
    for r in records:
        if r.event != "STATE_TRANSITION":
            continue
        if "->" not in r.detail:
            problems.append(f"{r.instance}: malformed transition {r.detail!r}")
            continue
        old, new = r.detail.split("->", 1)
        current = state.get(r.instance, "RUNNABLE")
        if old != current:
            problems.append(
                f"{r.instance}: transition from {old} but instance was {current}")
        if (old, new) not in _LEGAL:
            problems.append(f"{r.instance}: illegal transition {old}->{new}")
        state[r.instance] = new
    return problems


def audit_hook_order(records: Iterable[TraceRecord]) -> List[str]:
    """DELIVER precedes DISPATCH precedes EXECUTE for every executed message.

    Critical messages travel inside sync programs, so they dispatch without
    a DELIVER row of their own; anything else dispatching undelivered is a
    scheduling bug.
    """
    problems: List[str] = []
    delivered: Dict[Tuple[str, str, str], int] = {}
    dispatched: Dict[Tuple[str, str, str], int] = {}
    for i, r in enumerate(records):
        key = (r.instance, r.channel, r.seq_id)
        if r.event == "DELIVER":
            delivered.setdefault(key, i)
        elif r.event == "DISPATCH":
            dispatched[key] = i
            if key in delivered and delivered[key] > i:
                problems.append(f"{key}: dispatched before delivery")
        elif r.event == "EXECUTE":
            kind = _detail_field(r.detail, "kind")
            d = dispatched.get(key)
            if d is None:
                # Reference drivers execute without a scheduler; only flag
                # rows that claim a dispatch ordering and break it.
                continue
            if d > i:
                problems.append(f"{key}: executed before dispatch")
            if key not in delivered and kind not in ("CRITICAL",):
                problems.append(f"{key}: dispatched without delivery")
    return problems


def audit_trace(records: List[TraceRecord]) -> Dict[str, List[str]]:
    return {
        "channel_fifo": audit_channel_fifo(records),
        "exactly_once": audit_exactly_once(records),
        "state_machine": audit_state_machine(records),
        "hook_order": audit_hook_order(records),
    }
