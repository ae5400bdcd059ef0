"""Bounded exhaustive exploration of barrier races on small topologies.

The unit of nondeterminism is per-channel delivery order: channels stay
FIFO, but which channel hands over its head next is a free choice. The
explorer walks every such choice with a memoized DFS over canonical world
digests, so each reachable protocol state is expanded once. Two reductions
keep the space finite and are part of the model, not approximations of it:

* Sources emit eagerly. A scripted send only interacts with the rest of
  the world once delivered, so postponing the emission is indistinguishable
  from postponing the delivery, which is already a choice.
* After a delivery the receiving instance runs to local quiescence. An
  instance's executions touch others only through messages, whose delivery
  order is again already a choice. Ready-head order within one quiescence
  step is fixed (arrival order), which collapses reorderings that only
  permute commutative folds.

Five monitors run inside the walk, independent of the engine's own guards:
dependency completeness at every critical-message execution, cut-bounded
admission wherever a seal or an open barrier constrains a channel,
consolidated results against a sequential reference fold, criticals only at
instance zero, and registration acceptance only while the lessor is
quiescent. Exactly-once execution per root id and clean terminal states are
checked as well. Any engine exception counts as a finding too. On a finding
the DFS path is reported and a breadth-first pass retries for a shortest
run.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import itertools
import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .model import (
    ChannelId,
    FunctionAddress,
    Granularity,
    InstanceAddress,
    MessageKind,
    ProtocolTypeError,
    SequencedMessage,
    kind_tag,
)
from .operators import (
    FilterOperator,
    MapOperator,
    OPERATOR_KINDS,
    build_operator,
)
from .protocol import (
    ActivateLessee,
    ActorInstance,
    Emission,
    MutationFlags,
    ProtocolViolation,
    Send,
    Trace,
    mutation_from_name,
)
from .state import CombiningFunction, PartialState, StateError, builtin

DEFAULT_STATE_CAP = 1_000_000
MAX_OPTIONAL_VALUES = 6  # subset folds stay enumerable
SHRINK_STATE_LIMIT = 200_000

# Results are compared by repr, so folds must be exact.
CHECKABLE_CFS = ("sum", "max")


class CheckerError(Exception):
    """Bad topology input or an internal exploration invariant failure."""


class _Finding(Exception):
    def __init__(self, description: str):
        super().__init__(description)
        self.description = description


# --- topology input ---------------------------------------------------------


@dataclass(frozen=True)
class FnDef:
    name: str
    operator: str = "window"
    operator_params: Dict[str, Any] = field(default_factory=dict)
    cf: str = "sum"
    downstream: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ScriptStep:
    source: str
    kind: str  # "data" | "barrier"
    values: Tuple[int, ...] = ()
    targets: Tuple[int, ...] = ()
    barrier_target: str = ""
    epoch: int = 0


@dataclass
class TopologySpec:
    name: str
    description: str
    functions: Dict[str, FnDef]
    script: Tuple[ScriptStep, ...]
    granularity: Granularity = Granularity.SYNC_CHANNEL
    read_heavy: bool = False
    leases: Tuple[Tuple[str, int, str, int], ...] = ()
    max_states: int = DEFAULT_STATE_CAP
    job: str = "chk"

    def fn_addr(self, name: str) -> FunctionAddress:
        return FunctionAddress(self.job, name)

    def sources(self) -> List[str]:
        seen: List[str] = []
        for step in self.script:
            if step.source not in seen:
                seen.append(step.source)
        return seen

    def upstreams_of(self, name: str) -> List[str]:
        return sorted(f for f, fd in self.functions.items() if name in fd.downstream)

    def source_feeds(self, source: str) -> str:
        return self.functions[source].downstream[0]


def load_topology(source: Any) -> TopologySpec:
    """Parse and validate a topology from a path, JSON text, or dict.

    Validation collects every offense before raising, so a bad corpus file
    reports all of its problems at once.
    """
    if isinstance(source, (str, Path)) and str(source).endswith(".json"):
        raw = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        raw = json.loads(source)
    elif isinstance(source, dict):
        raw = source
    else:
        raise CheckerError(f"unsupported topology source {type(source).__name__}")

    errors: List[str] = []
    name = raw.get("name") or ""
    if not name:
        errors.append("name: required")
    functions: Dict[str, FnDef] = {}
    for fname, fdef in (raw.get("functions") or {}).items():
        op = fdef.get("operator", "window")
        if op not in OPERATOR_KINDS:
            errors.append(f"functions.{fname}.operator: unknown kind {op!r}")
        cf = fdef.get("cf", "sum")
        if cf not in CHECKABLE_CFS:
            errors.append(
                f"functions.{fname}.cf: {cf!r} not exact under reordering; "
                f"expected one of {CHECKABLE_CFS}")
        functions[fname] = FnDef(
            name=fname, operator=op,
            operator_params=dict(fdef.get("operator_params") or {}),
            cf=cf, downstream=tuple(fdef.get("downstream") or ()))
    if not functions:
        errors.append("functions: at least one required")
    for fname, fd in functions.items():
        for d in fd.downstream:
            if d not in functions:
                errors.append(f"functions.{fname}.downstream: unknown function {d!r}")

    steps: List[ScriptStep] = []
    for i, s in enumerate(raw.get("script") or []):
        src = s.get("source") or ""
        if src not in functions:
            errors.append(f"script[{i}].source: unknown function {src!r}")
        elif len(functions[src].downstream) != 1:
            errors.append(f"script[{i}].source: {src!r} must feed exactly one function")
        if "data" in s:
            values = list(s["data"])
            if not values or not all(isinstance(v, int) for v in values):
                errors.append(f"script[{i}].data: non-empty list of ints required")
            targets = list(s.get("targets") or [0] * len(values))
            if len(targets) != len(values):
                errors.append(f"script[{i}].targets: length must match data")
            if any(not isinstance(t, int) or t < 0 for t in targets):
                errors.append(f"script[{i}].targets: instance indexes must be >= 0")
            steps.append(ScriptStep(source=src, kind="data",
                                    values=tuple(values), targets=tuple(targets)))
        elif "barrier" in s:
            target = s["barrier"]
            if target not in functions:
                errors.append(f"script[{i}].barrier: unknown function {target!r}")
            epoch = s.get("epoch", 0)
            if not isinstance(epoch, int):
                errors.append(f"script[{i}].epoch: int required")
            steps.append(ScriptStep(source=src, kind="barrier",
                                    barrier_target=target, epoch=int(epoch or 0)))
        else:
            errors.append(f"script[{i}]: needs either data or barrier")
    if not steps:
        errors.append("script: at least one step required")

    gran_name = raw.get("granularity", "SYNC_CHANNEL")
    granularity = None
    try:
        granularity = Granularity(gran_name)
    except ValueError:
        errors.append(f"granularity: unknown value {gran_name!r}")

    leases: List[Tuple[str, int, str, int]] = []
    for i, row in enumerate(raw.get("leases") or []):
        if (not isinstance(row, (list, tuple)) or len(row) != 4
                or row[0] not in functions or row[2] not in functions
                or not isinstance(row[1], int) or not isinstance(row[3], int)):
            errors.append(f"leases[{i}]: expected [sender_fn, sender_idx, fn, idx]")
        else:
            leases.append((row[0], row[1], row[2], row[3]))

    # Same (target, epoch) from two sources merges only under SYNC_ONE.
    by_key: Dict[Tuple[str, int], List[str]] = {}
    per_target_epochs: Dict[Tuple[str, str], List[int]] = {}
    for st in steps:
        if st.kind != "barrier":
            continue
        by_key.setdefault((st.barrier_target, st.epoch), []).append(st.source)
        per_target_epochs.setdefault((st.source, st.barrier_target), []).append(st.epoch)
    if granularity is Granularity.SYNC_CHANNEL:
        for (tgt, epoch), srcs in by_key.items():
            if len(srcs) > 1:
                errors.append(
                    f"script: barrier ({tgt}, epoch {epoch}) issued by multiple "
                    f"sources needs SYNC_ONE granularity")
    for (src, tgt), epochs in per_target_epochs.items():
        if epochs != sorted(set(epochs)):
            errors.append(f"script: epochs from {src} to {tgt} must strictly increase")

    # Epoch order at every function must be forced by the script, not by
    # delivery timing, or no sequential reference for its folds exists.
    if not errors:
        def downstream_closure(root: str) -> List[str]:
            out: List[str] = []

            def walk(fn: str) -> None:
                if fn in out:
                    return
                out.append(fn)
                if functions[fn].operator != "sink":
                    for d in sorted(functions[fn].downstream):
                        walk(d)

            walk(root)
            return out

        touched: Dict[str, Set[str]] = {}
        for tgt in sorted({st.barrier_target for st in steps if st.kind == "barrier"}):
            closure = downstream_closure(tgt)
            indegree = {fn: 0 for fn in closure}
            for fn in closure:
                if functions[fn].operator == "sink":
                    continue
                for d in functions[fn].downstream:
                    if d in indegree:
                        indegree[d] += 1
            rejoin = sorted(fn for fn, n in indegree.items() if n > 1)
            if rejoin:
                errors.append(
                    f"script: chained epochs from {tgt} reconverge at "
                    f"{', '.join(rejoin)}; their arrival order there is "
                    f"delivery-dependent")
            for fn in closure:
                touched.setdefault(fn, set()).add(tgt)
        for fn, tgts in sorted(touched.items()):
            if len(tgts) > 1:
                errors.append(
                    f"script: {fn} is consolidated from barriers at "
                    f"{sorted(tgts)}; their relative order is delivery-dependent")
        epochs_at: Dict[str, Dict[int, Set[str]]] = {}
        for st in steps:
            if st.kind == "barrier":
                epochs_at.setdefault(st.barrier_target, {}).setdefault(
                    st.epoch, set()).add(st.source)
        for tgt, per_epoch in sorted(epochs_at.items()):
            ordered = [per_epoch[e] for e in sorted(per_epoch)]
            for a, b in zip(ordered, ordered[1:]):
                if not (a & b):
                    errors.append(
                        f"script: consecutive epochs at {tgt} share no issuing "
                        f"source; their order is delivery-dependent")
                    break

    if errors:
        raise CheckerError(f"invalid topology {name or '<unnamed>'}:\n  "
                           + "\n  ".join(errors))

    return TopologySpec(
        name=name,
        description=raw.get("description", ""),
        functions=functions,
        script=tuple(steps),
        granularity=granularity,
        read_heavy=bool(raw.get("read_heavy", False)),
        leases=tuple(leases),
        max_states=int(raw.get("max_states", DEFAULT_STATE_CAP)),
        job=raw.get("job", "chk"),
    )


# --- sequential reference fold ----------------------------------------------


def _fold_result(cf: CombiningFunction, values: Sequence[int]) -> Any:
    ps = PartialState.fresh(cf)
    for v in values:
        cf.update(ps.state, v)
    return cf.result(ps.state)


@dataclass(frozen=True)
class _Event:
    """One epoch closing: a (target, epoch) barrier and the steps issuing it."""

    target: str
    epoch: int
    steps: Tuple[int, ...]                 # script indexes of the issuing barriers
    drivers: Tuple[Tuple[str, int], ...]   # (source, its barrier step index)


def _events(spec: TopologySpec) -> List[_Event]:
    acc: Dict[Tuple[str, int], Dict[str, int]] = {}
    for i, st in enumerate(spec.script):
        if st.kind == "barrier":
            acc.setdefault((st.barrier_target, st.epoch), {})[st.source] = i
    events = [_Event(target=t, epoch=e,
                     steps=tuple(sorted(drv.values())),
                     drivers=tuple(sorted(drv.items())))
              for (t, e), drv in acc.items()]
    events.sort(key=lambda ev: max(ev.steps))
    return events


def _closure_fns(spec: TopologySpec, target: str) -> List[str]:
    """Functions consolidated by one barrier at target: itself, then every
    stage its chained programs reach, in the order the chain visits them."""
    out: List[str] = []

    def walk(fn: str) -> None:
        if fn in out:
            return
        out.append(fn)
        if spec.functions[fn].operator != "sink":
            for d in sorted(spec.functions[fn].downstream):
                walk(d)

    walk(target)
    return out


def _must_precede(spec: TopologySpec, events: List[_Event],
                  source: str, index: int) -> Set[int]:
    """Script steps guaranteed complete before `source` issues step `index`.

    A source's own earlier steps always qualify; a barrier step is complete
    only once every co-issuing source has contributed its half of the same
    epoch, which pulls those sources' earlier steps in as well. Steps of
    unrelated sources carry no ordering at all.
    """
    steps_of: Dict[str, List[int]] = {}
    for i, st in enumerate(spec.script):
        steps_of.setdefault(st.source, []).append(i)
    co: Dict[int, Tuple[int, ...]] = {}
    for ev in events:
        for i in ev.steps:
            co[i] = ev.steps
    done: Set[int] = set()
    frontier: List[Tuple[str, int]] = [(source, index)]
    visited: Set[Tuple[str, int]] = set()
    while frontier:
        src, upto = frontier.pop()
        if (src, upto) in visited:
            continue
        visited.add((src, upto))
        for i in steps_of.get(src, []):
            if i >= upto or i in done:
                continue
            done.add(i)
            for j in co.get(i, ()):
                if j not in done:
                    frontier.append((spec.script[j].source, j + 1))
    return done


def expected_consolidations(spec: TopologySpec) -> Dict[str, List[Optional[FrozenSet[str]]]]:
    """Per function, per consolidation ordinal, the set of acceptable results.

    The reference enumerates the script's epoch-closing events (one per
    (target, epoch) barrier, consolidating the target and everything its
    chained programs reach) and assigns every scripted value to the epochs
    it can land in:

    * exactly placed: a send to the lessor (index 0) from a source that
      issues barriers, a send on a pre-seeded lease channel, or a send to a
      lessee index made after at least one barrier of the same source since
      that channel's first use. The registration ack always reaches the
      source before that barrier's program ack does (both ride the
      lessor-to-source FIFO), so by then the channel is direct and the next
      dependency snapshot covers it. Such a value belongs to its source's
      next epoch at the folding function, provided no foreign epoch can
      slip in between (load validation rejects scripts where it could).
    * ranged: first-contact sends to a fresh lessee index race their own
      registration release against the seal, and sends from a source that
      never issues barriers are not ordered against anyone's cut. Such a
      value may land in any epoch from the first one not already closed
      before the send (per the cross-source completion order) onward, so
      each ordinal's feasible results fold every subset of the ranged
      values available by then.

    A None entry means the result is data-dependent beyond enumeration (a
    ranged value flowed through an upstream fold, or too many ranged
    values) and the content check is skipped for that ordinal.
    """
    events = _events(spec)
    closures = [_closure_fns(spec, ev.target) for ev in events]
    fn_events: Dict[str, List[int]] = {name: [] for name in spec.functions}
    for k, cl in enumerate(closures):
        for fn in cl:
            fn_events[fn].append(k)

    cf_of = {name: builtin(fd.cf) for name, fd in spec.functions.items()}
    # values guaranteed to fold in one specific event: (fn, event) -> values
    mandatory: Dict[Tuple[str, int], List[Any]] = {}
    # values with a feasible range: fn -> [(first possible ordinal, value)]
    optional: Dict[str, List[Tuple[int, Any]]] = {name: [] for name in spec.functions}
    expected: Dict[str, List[Optional[FrozenSet[str]]]] = {name: [] for name in spec.functions}
    taint_from: Dict[str, int] = {}        # fn -> first ordinal folding unknown state
    sink_acc: Dict[str, List[Any]] = {name: [] for name in spec.functions}

    lease_set = set(spec.leases)
    barrier_steps: Dict[str, List[int]] = {}
    first_contact: Dict[Tuple[str, int], int] = {}
    for i, st in enumerate(spec.script):
        if st.kind == "barrier":
            barrier_steps.setdefault(st.source, []).append(i)
        else:
            for idx in st.targets:
                first_contact.setdefault((st.source, idx), i)

    def is_pinned(source: str, idx: int, step_index: int) -> bool:
        if not barrier_steps.get(source):
            return False
        if idx == 0:
            return True
        if (source, 0, spec.source_feeds(source), idx) in lease_set:
            return True
        first = first_contact[(source, idx)]
        return any(first < b < step_index for b in barrier_steps[source])

    def next_event(fn: str, source: str, step_index: int) -> Optional[int]:
        for k in fn_events[fn]:
            step = dict(events[k].drivers).get(source)
            if step is not None and step > step_index:
                return k
        return None

    def born_ordinal(fn: str, source: str, step_index: int) -> int:
        pre = _must_precede(spec, events, source, step_index)
        n = 0
        for k in fn_events[fn]:
            if set(events[k].steps) <= pre:
                n += 1
            else:
                break
        return n

    def record(fn: str, value: Any, source: str, step_index: int, pinned: bool) -> None:
        fd = spec.functions[fn]
        if fd.operator in ("window", "sink"):
            if pinned:
                k = next_event(fn, source, step_index)
                if k is None:
                    return  # no later epoch of this source ever folds it
                if born_ordinal(fn, source, step_index) == fn_events[fn].index(k):
                    mandatory.setdefault((fn, k), []).append(value)
                    return
                # a foreign epoch may close first and steal it; fall through
                pinned = False
            optional[fn].append((born_ordinal(fn, source, step_index), value))
            return
        if fd.operator == "map":
            outs = [MapOperator.TRANSFORMS[fd.operator_params.get("transform", "identity")](value)]
        elif fd.operator == "filter":
            pred = FilterOperator.PREDICATES[fd.operator_params.get("predicate", "all")]
            outs = [value] if pred(value) else []
        else:  # key_by re-keys, values pass through
            outs = [value]
        for d in fd.downstream:
            for out in outs:
                record(d, out, source, step_index, pinned)

    for i, st in enumerate(spec.script):
        if st.kind == "data":
            fed = spec.source_feeds(st.source)
            for value, idx in zip(st.values, st.targets):
                record(fed, value, st.source, i, is_pinned(st.source, idx, i))

    def consolidate(fn: str, k: int, inherited: List[Any], inherited_taint: bool) -> None:
        fd = spec.functions[fn]
        cf = cf_of[fn]
        ordinal = len(expected[fn])
        if fd.operator not in ("window", "sink"):
            # pass-through stages fold no data; they only relay the chain
            expected[fn].append(frozenset({repr(_fold_result(cf, []))}))
            outs = list(inherited)
            if fd.operator == "map":
                t = MapOperator.TRANSFORMS[fd.operator_params.get("transform", "identity")]
                outs = [t(v) for v in outs]
            elif fd.operator == "filter":
                pred = FilterOperator.PREDICATES[fd.operator_params.get("predicate", "all")]
                outs = [v for v in outs if pred(v)]
            for d in sorted(fd.downstream):
                consolidate(d, k, outs, inherited_taint)
            return
        base = mandatory.get((fn, k), []) + list(inherited)
        if fd.operator == "sink":
            sink_acc[fn].extend(base)
            base = list(sink_acc[fn])
        if inherited_taint:
            taint_from[fn] = min(taint_from.get(fn, ordinal), ordinal)
        avail = [v for born, v in optional[fn] if born <= ordinal]
        if taint_from.get(fn, ordinal + 1) <= ordinal or len(avail) > MAX_OPTIONAL_VALUES:
            expected[fn].append(None)
            result, spread = None, True
        else:
            feasible: Set[str] = set()
            for n in range(len(avail) + 1):
                for combo in itertools.combinations(avail, n):
                    feasible.add(repr(_fold_result(cf, base + list(combo))))
            expected[fn].append(frozenset(feasible))
            result = _fold_result(cf, base)
            spread = bool(avail)
        if fd.operator == "window":
            outs = [] if result is None else [result]
            for d in sorted(fd.downstream):
                consolidate(d, k, outs, inherited_taint or spread)

    for k, ev in enumerate(events):
        consolidate(ev.target, k, [], False)
    return expected


# --- exploration world --------------------------------------------------------


class _CheckerContext:
    """The ctx duck type the engine expects; time stands still here."""

    def __init__(self, spec: TopologySpec, mutations: MutationFlags):
        self.spec = spec
        self.mutations = mutations
        self.now = 0
        self._operators = {spec.fn_addr(name): build_operator(fd.operator, fd.operator_params)
                           for name, fd in spec.functions.items()}
        self._downstreams = {spec.fn_addr(name): [spec.fn_addr(d) for d in fd.downstream]
                             for name, fd in spec.functions.items()}
        self._upstreams = {spec.fn_addr(name): [spec.fn_addr(u) for u in spec.upstreams_of(name)]
                           for name in spec.functions}

    def lessor_of(self, fn: FunctionAddress) -> InstanceAddress:
        return InstanceAddress(fn.job_id, fn.function_id, 0, 0)

    def operator_for(self, fn: FunctionAddress):
        return self._operators[fn]

    def downstreams_of(self, fn: FunctionAddress) -> List[FunctionAddress]:
        return self._downstreams.get(fn, [])

    def upstreams_of(self, fn: FunctionAddress) -> List[FunctionAddress]:
        return self._upstreams.get(fn, [])


@dataclass
class _SourceState:
    cursor: int = 0
    holding: Set[str] = field(default_factory=set)


class _World:
    __slots__ = ("instances", "channels", "sources", "executed", "sent", "consolidated")

    def __init__(self) -> None:
        self.instances: Dict[InstanceAddress, ActorInstance] = {}
        self.channels: Dict[ChannelId, Deque[SequencedMessage]] = {}
        self.sources: Dict[str, _SourceState] = {}
        self.executed: Dict[str, int] = {}
        # root id -> [(channel render, seq)] for every user-message send
        self.sent: Dict[str, List[Tuple[str, int]]] = {}
        self.consolidated: Dict[str, int] = {}

    def clone(self) -> "_World":
        import copy

        w = _World.__new__(_World)
        w.instances, w.channels = copy.deepcopy((self.instances, self.channels))
        w.sources = {k: _SourceState(v.cursor, set(v.holding)) for k, v in self.sources.items()}
        w.executed = dict(self.executed)
        w.sent = {k: list(v) for k, v in self.sent.items()}
        w.consolidated = dict(self.consolidated)
        return w


def _ensure_instance(world: _World, spec: TopologySpec, ctx: _CheckerContext,
                     addr: InstanceAddress) -> ActorInstance:
    inst = world.instances.get(addr)
    if inst is None:
        fd = spec.functions[addr.function_id]
        inst = ActorInstance(
            addr, builtin(fd.cf),
            upstream_functions=ctx.upstreams_of(addr.function),
            read_heavy=spec.read_heavy)
        world.instances[addr] = inst
    return inst


def _init_world(spec: TopologySpec, ctx: _CheckerContext) -> _World:
    world = _World()
    for name in spec.functions:
        _ensure_instance(world, spec, ctx, ctx.lessor_of(spec.fn_addr(name)))
    for sender_fn, sender_idx, fn, idx in spec.leases:
        sender = _ensure_instance(
            world, spec, ctx, InstanceAddress(spec.job, sender_fn, sender_idx, 0))
        lessee = _ensure_instance(world, spec, ctx, InstanceAddress(spec.job, fn, idx, 0))
        lessor = world.instances[ctx.lessor_of(spec.fn_addr(fn))]
        # State equivalent of a completed registration handshake.
        sender.active_outbound.add(ChannelId(sender.addr, lessee.addr))
        lessor.active_leases.add(lessee.addr)
    for name in spec.sources():
        world.sources[name] = _SourceState()
    return world


# --- monitors -----------------------------------------------------------------


def _consolidation_result(detail: str) -> str:
    return detail.split("result=", 1)[1]


def _monitor_consolidation(world: _World, spec: TopologySpec,
                           expected: Dict[str, List[Optional[FrozenSet[str]]]],
                           fn_name: str, detail: str) -> None:
    ordinal = world.consolidated.get(fn_name, 0)
    world.consolidated[fn_name] = ordinal + 1
    per_fn = expected.get(fn_name, [])
    if ordinal >= len(per_fn):
        raise _Finding(
            f"consolidation monitor: {fn_name} consolidated {ordinal + 1} times, "
            f"reference run has only {len(per_fn)}")
    feasible = per_fn[ordinal]
    if feasible is None:
        return
    got = _consolidation_result(detail)
    if got not in feasible:
        want = " or ".join(sorted(feasible))
        raise _Finding(
            f"consolidation monitor: {fn_name} round {ordinal} produced {got}, "
            f"sequential reference allows {want}")


def _monitor_data_execution(inst: ActorInstance, msg: SequencedMessage) -> None:
    """No execution beyond an installed cut while the barrier is incomplete.

    Pre-seal executions at a lessee are legitimate even mid-barrier: until
    the sync request arrives the lessee cannot know about the epoch, and its
    reply carries whatever it folded by then. The constraint bites once a
    seal is installed, and at the lessor from the moment an upstream's cut
    has been announced.
    """
    if inst.state.name in ("BLOCKED", "CRITICAL"):
        raise _Finding(f"cut monitor: data executed at {inst.addr.render()} "
                       f"while {inst.state.name}")
    if inst.seal is not None:
        cut = inst.seal.cuts.get(msg.channel)
        if cut is None or msg.seq_id > cut:
            raise _Finding(
                f"cut monitor: sealed lessee {inst.addr.render()} executed "
                f"{msg.channel.render()}#{msg.seq_id} beyond cut {cut}")
        return
    barrier = inst.active_barrier
    if barrier is None:
        return
    src_fn = msg.channel.source.function
    if src_fn not in barrier.sealed_actors:
        return  # that upstream has not announced a cut yet; still epoch-open
    cut = barrier.cuts.get(msg.channel)
    if cut is None or msg.seq_id > cut:
        raise _Finding(
            f"cut monitor: {inst.addr.render()} executed {msg.channel.render()}"
            f"#{msg.seq_id} beyond cut {cut} while barrier "
            f"{barrier.barrier_id} is incomplete")


def _monitor_critical_execution(world: _World, inst: ActorInstance,
                                msg: SequencedMessage) -> None:
    if not inst.is_lessor:
        raise _Finding(f"placement monitor: critical message executed at "
                       f"lessee {inst.addr.render()}")
    barrier = inst.active_barrier
    if barrier is None:
        raise _Finding(f"placement monitor: critical executed at "
                       f"{inst.addr.render()} without an open barrier")
    # Dependency completeness: everything at or below a cut into this
    # function must have executed before its criticals run.
    fn = inst.addr.function
    cuts = {ch.render(): cut for ch, cut in barrier.cuts.items()
            if ch.target.function == fn}
    for root, entries in world.sent.items():
        for ch_render, seq in entries:
            cut = cuts.get(ch_render)
            if cut is not None and seq <= cut and not world.executed.get(root):
                raise _Finding(
                    f"dependency monitor: critical of {barrier.barrier_id} ran "
                    f"at {inst.addr.render()} before dependency {ch_render}#{seq} "
                    f"(root {root}) executed")


# --- engine driving -----------------------------------------------------------


def _pour(world: _World, spec: TopologySpec, ctx: _CheckerContext,
          expected: Dict[str, List[Optional[FrozenSet[str]]]],
          sender: ActorInstance, effects: List[Any]) -> None:
    barrier_done_seen = False
    for effect in effects:
        if isinstance(effect, Send):
            msg = effect.message
            world.channels.setdefault(msg.channel, deque()).append(msg)
            if msg.kind is MessageKind.DATA and msg.root_id:
                world.sent.setdefault(msg.root_id, []).append(
                    (msg.channel.render(), msg.seq_id))
        elif isinstance(effect, Trace):
            if effect.event == "BARRIER_DONE":
                barrier_done_seen = True
            elif effect.event == "CONSOLIDATE":
                _monitor_consolidation(world, spec, expected,
                                       sender.addr.function_id, effect.detail)
            elif effect.event == "REGISTRATION_ACCEPT" and not barrier_done_seen:
                # Acceptances emitted while finishing a barrier are legal
                # (they follow BARRIER_DONE in the same effect batch); any
                # other acceptance must find the lessor quiescent.
                if (sender.active_barrier is not None or sender.queued_sps
                        or sender.state.name != "RUNNABLE"):
                    raise _Finding(
                        f"registration monitor: {sender.addr.render()} accepted "
                        f"a lessee registration while a barrier is in progress")
        elif isinstance(effect, ActivateLessee):
            _ensure_instance(world, spec, ctx, effect.lessee)
        else:  # pragma: no cover - closed effect set
            raise CheckerError(f"unknown effect {effect!r}")


def _route(world: _World, spec: TopologySpec, ctx: _CheckerContext,
           expected, sender: ActorInstance, emission: Emission) -> None:
    if emission.target_instance is not None:
        _pour(world, spec, ctx, expected, sender,
              sender.package_send(emission, emission.target_instance, ctx, 0))
        return
    targets = ([emission.target_function] if emission.target_function is not None
               else ctx.downstreams_of(sender.addr.function))
    for fn in targets:
        _pour(world, spec, ctx, expected, sender,
              sender.package_send(emission, ctx.lessor_of(fn), ctx, 0))


def _quiesce(world: _World, spec: TopologySpec, ctx: _CheckerContext,
             expected, inst: ActorInstance) -> None:
    while True:
        heads = inst.ready_heads()
        if not heads:
            return
        heads.sort(key=lambda m: (inst.arrival_tag(m), m.channel.render()))
        msg = heads[0]
        if msg.kind is MessageKind.DATA:
            _monitor_data_execution(inst, msg)
        elif msg.kind is MessageKind.CRITICAL:
            _monitor_critical_execution(world, inst, msg)
        inst.pop_ready(msg)
        effects, emissions = inst.execute(msg, ctx)
        if msg.root_id:
            count = world.executed.get(msg.root_id, 0) + 1
            world.executed[msg.root_id] = count
            if count > 1:
                raise _Finding(f"exactly-once monitor: root {msg.root_id} "
                               f"executed {count} times")
        _pour(world, spec, ctx, expected, inst, effects)
        for emission in emissions:
            _route(world, spec, ctx, expected, inst, emission)
        _pour(world, spec, ctx, expected, inst, inst.after_execution(ctx))


def _deliver(world: _World, spec: TopologySpec, ctx: _CheckerContext,
             expected, channel: ChannelId) -> None:
    q = world.channels[channel]
    msg = q.popleft()
    if not q:
        del world.channels[channel]
    inst = _ensure_instance(world, spec, ctx, channel.target)
    effects, _eligible = inst.deliver(msg, ctx)
    _pour(world, spec, ctx, expected, inst, effects)
    _quiesce(world, spec, ctx, expected, inst)


def _advance_sources(world: _World, spec: TopologySpec, ctx: _CheckerContext,
                     expected) -> None:
    steps_by_source: Dict[str, List[ScriptStep]] = {}
    for st in spec.script:
        steps_by_source.setdefault(st.source, []).append(st)
    progressed = True
    while progressed:
        progressed = False
        for name in sorted(world.sources):
            src_state = world.sources[name]
            steps = steps_by_source.get(name, [])
            inst = world.instances[
                InstanceAddress(spec.job, name, 0, 0)]
            while src_state.cursor < len(steps):
                if src_state.holding - inst.acked_barriers:
                    break  # post-barrier sends wait for the sync program ack
                step = steps[src_state.cursor]
                src_state.cursor += 1
                progressed = True
                if step.kind == "data":
                    fed = spec.source_feeds(name)
                    for value, idx in zip(step.values, step.targets):
                        target = InstanceAddress(spec.job, fed, idx, 0)
                        emission = Emission(value=value, target_instance=target)
                        _pour(world, spec, ctx, expected, inst,
                              inst.package_send(emission, target, ctx, 0))
                else:
                    emission = Emission(value=step.epoch, critical=True,
                                        epoch=step.epoch,
                                        granularity=spec.granularity)
                    effects, barrier_id = inst.originate_barrier(
                        ctx, spec.fn_addr(step.barrier_target), [emission],
                        granularity=spec.granularity, epoch=step.epoch)
                    _pour(world, spec, ctx, expected, inst, effects)
                    src_state.holding.add(barrier_id)
                    break  # re-evaluate the gate before the next step


def _check_terminal(world: _World, spec: TopologySpec,
                    expected: Dict[str, List[Optional[FrozenSet[str]]]]) -> None:
    steps_per_source: Dict[str, int] = {}
    for st in spec.script:
        steps_per_source[st.source] = steps_per_source.get(st.source, 0) + 1
    for name, src_state in sorted(world.sources.items()):
        if src_state.cursor < steps_per_source.get(name, 0):
            raise _Finding(f"terminal monitor: source {name} stalled at script "
                           f"step {src_state.cursor} with no traffic in flight")
    for addr in sorted(world.instances):
        inst = world.instances[addr]
        issues = []
        if inst.state.name != "RUNNABLE":
            issues.append(f"state {inst.state.name}")
        if inst.active_barrier is not None:
            issues.append(f"open barrier {inst.active_barrier.barrier_id}")
        if inst.seal is not None:
            issues.append(f"seal {inst.seal.barrier_id}")
        if inst.queued_sps:
            issues.append(f"{len(inst.queued_sps)} queued sync programs")
        if any(q for q in inst.withheld.values()):
            issues.append("withheld messages")
        if any(q for q in inst.ready.values()):
            issues.append("unexecuted ready messages")
        if inst.pending_outbound:
            issues.append("sends stuck behind a registration")
        if inst.critical_lane:
            issues.append("criticals never executed")
        if inst.deferred_registrations:
            issues.append("registrations never processed")
        if issues:
            raise _Finding(f"terminal monitor: {addr.render()} finished with "
                           + ", ".join(issues))
    missing = [root for root in world.sent if not world.executed.get(root)]
    if missing:
        raise _Finding(f"terminal monitor: messages never executed: "
                       f"{', '.join(sorted(missing)[:4])}")
    for fn_name, per_fn in sorted(expected.items()):
        have = world.consolidated.get(fn_name, 0)
        if have != len(per_fn):
            raise _Finding(f"terminal monitor: {fn_name} consolidated {have} "
                           f"times, reference run has {len(per_fn)}")


# --- canonical digests ----------------------------------------------------------


def _canon(obj: Any) -> Any:
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if isinstance(obj, enum.Enum):
        return ("e", type(obj).__name__, obj.name)
    if isinstance(obj, (FunctionAddress, InstanceAddress, ChannelId)):
        return obj.render()
    if isinstance(obj, CombiningFunction):
        return ("cf", obj.name)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return (type(obj).__name__,) + tuple(
            (f.name, _canon(getattr(obj, f.name))) for f in dataclasses.fields(obj))
    if isinstance(obj, dict):
        return ("d",) + tuple(sorted((repr(_canon(k)), _canon(v))
                                     for k, v in obj.items()))
    if isinstance(obj, (list, tuple, deque)):
        return ("s",) + tuple(_canon(x) for x in obj)
    if isinstance(obj, (set, frozenset)):
        return ("t",) + tuple(sorted(repr(_canon(x)) for x in obj))
    if hasattr(obj, "__dict__"):
        return (type(obj).__name__,) + tuple(
            (k, _canon(v)) for k, v in sorted(vars(obj).items()))
    return repr(obj)  # pragma: no cover - every engine type is handled above


def _canon_instance(inst: ActorInstance) -> Tuple:
    # Arrival tags only express relative order; renumber them so histories
    # that interleaved differently but landed identically merge.
    tags: List[int] = []
    for q in inst.ready.values():
        tags.extend(tag for tag, _ in q)
    for q in inst.withheld.values():
        tags.extend(entry.arrival for entry in q)
    rank = {tag: i for i, tag in enumerate(sorted(tags))}
    out: List[Tuple[str, Any]] = []
    for name in sorted(vars(inst)):
        if name == "arrival_counter":
            continue
        val = getattr(inst, name)
        if name == "ready":
            out.append((name, tuple(sorted(
                (ch.render(), tuple((rank[tag], _canon(m)) for tag, m in q))
                for ch, q in val.items() if q))))
        elif name == "withheld":
            out.append((name, tuple(sorted(
                (ch.render(), tuple((rank[e.arrival], _canon(e.message)) for e in q))
                for ch, q in val.items() if q))))
        else:
            out.append((name, _canon(val)))
    return tuple(out)


def _digest(world: _World) -> bytes:
    canon = (
        tuple(sorted((addr.render(), _canon_instance(inst))
                     for addr, inst in world.instances.items())),
        tuple(sorted((ch.render(), tuple(_canon(m) for m in q))
                     for ch, q in world.channels.items() if q)),
        tuple(sorted((name, s.cursor, tuple(sorted(s.holding)))
                     for name, s in world.sources.items())),
        tuple(sorted(world.executed.items())),
        tuple(sorted((root, tuple(entries)) for root, entries in world.sent.items())),
    )
    return hashlib.md5(repr(canon).encode()).digest()


# --- the walk -------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    ok: bool
    states: int
    paths: Optional[int] = None
    violation: Optional[str] = None
    counterexample: List[str] = field(default_factory=list)
    elapsed_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "ok": self.ok,
            "states": self.states,
            "paths": self.paths,
            "violation": self.violation,
            "counterexample": list(self.counterexample),
            "elapsed_s": round(self.elapsed_s, 3),
        }


class _CapExceeded(Exception):
    pass


def _choices(world: _World) -> List[ChannelId]:
    return sorted((ch for ch, q in world.channels.items() if q),
                  key=lambda c: c.render())


def _describe(world: _World, channel: ChannelId) -> str:
    head = world.channels[channel][0]
    return f"deliver {kind_tag(head)} {channel.render()}#{head.seq_id}"


_ENGINE_ERRORS = (ProtocolViolation, ProtocolTypeError, StateError)


def _step(world: _World, spec: TopologySpec, ctx: _CheckerContext,
          expected, channel: ChannelId) -> None:
    try:
        _deliver(world, spec, ctx, expected, channel)
        _advance_sources(world, spec, ctx, expected)
    except _ENGINE_ERRORS as exc:
        raise _Finding(f"engine violation: {exc}") from exc


class _Frame:
    __slots__ = ("world", "digest", "choices", "i", "count", "action")

    def __init__(self, world: _World, digest: bytes,
                 choices: List[ChannelId], action: str):
        self.world = world
        self.digest = digest
        self.choices = choices
        self.i = 0
        self.count = 0
        self.action = action


def _explore(spec: TopologySpec, ctx: _CheckerContext, expected,
             cap: int) -> Tuple[int, int, Optional[Tuple[str, List[str]]]]:
    """DFS every delivery order. Returns (states, paths, finding)."""
    root = _init_world(spec, ctx)
    try:
        _advance_sources(root, spec, ctx, expected)
    except _ENGINE_ERRORS as exc:
        return 1, 0, (f"engine violation: {exc}", [])
    except _Finding as f:
        return 1, 0, (f.description, [])

    seen: Dict[bytes, Optional[int]] = {}
    root_digest = _digest(root)
    seen[root_digest] = None
    frames = [_Frame(root, root_digest, _choices(root), "")]
    states = 1

    while frames:
        fr = frames[-1]
        if fr.i < len(fr.choices):
            channel = fr.choices[fr.i]
            fr.i += 1
            action = _describe(fr.world, channel)
            child = fr.world.clone()
            try:
                _step(child, spec, ctx, expected, channel)
            except _Finding as f:
                path = [g.action for g in frames[1:]] + [action]
                return states, 0, (f.description, path)
            digest = _digest(child)
            if digest in seen:
                cached = seen[digest]
                if cached is None:  # pragma: no cover - walk is acyclic
                    raise CheckerError("revisited a state still on the stack")
                fr.count += cached
                continue
            states += 1
            if states > cap:
                raise _CapExceeded()
            seen[digest] = None
            frames.append(_Frame(child, digest, _choices(child), action))
        else:
            if not fr.choices:
                try:
                    _check_terminal(fr.world, spec, expected)
                except _Finding as f:
                    path = [g.action for g in frames[1:]]
                    return states, 0, (f.description, path)
                fr.count = 1
            seen[fr.digest] = fr.count
            frames.pop()
            if frames:
                frames[-1].count += fr.count
    return states, seen[root_digest] or 0, None


def _shortest_failure(spec: TopologySpec, ctx: _CheckerContext, expected,
                      fallback: Tuple[str, List[str]]) -> Tuple[str, List[str]]:
    """Breadth-first retry so the counterexample is as short as possible."""
    root = _init_world(spec, ctx)
    try:
        _advance_sources(root, spec, ctx, expected)
    except (_Finding, *_ENGINE_ERRORS):
        return fallback
    seen = {_digest(root)}
    queue: Deque[Tuple[_World, Tuple[str, ...]]] = deque([(root, ())])
    while queue:
        world, path = queue.popleft()
        choices = _choices(world)
        if not choices:
            try:
                _check_terminal(world, spec, expected)
            except _Finding as f:
                return f.description, list(path)
            continue
        for channel in choices:
            action = _describe(world, channel)
            child = world.clone()
            try:
                _step(child, spec, ctx, expected, channel)
            except _Finding as f:
                return f.description, list(path) + [action]
            digest = _digest(child)
            if digest not in seen and len(seen) < SHRINK_STATE_LIMIT:
                seen.add(digest)
                queue.append((child, path + (action,)))
    return fallback


def check_topology(source: Any, mutant: Optional[str] = None,
                   cap: Optional[int] = None,
                   count_paths: bool = False,
                   shrink: bool = True) -> CheckResult:
    """Explore one topology exhaustively; first finding wins.

    `mutant` enables one named protocol defect; a healthy topology must then
    produce a finding (that is the point of the corpus mutants).
    """
    spec = source if isinstance(source, TopologySpec) else load_topology(source)
    mutations = mutation_from_name(mutant) if isinstance(mutant, str) or mutant is None \
        else mutant
    ctx = _CheckerContext(spec, mutations)
    expected = expected_consolidations(spec)
    limit = cap if cap is not None else spec.max_states
    started = time.monotonic()
    try:
        states, paths, finding = _explore(spec, ctx, expected, limit)
    except _CapExceeded:
        return CheckResult(name=spec.name, ok=False, states=limit,
                           violation=f"state cap {limit} exceeded",
                           elapsed_s=time.monotonic() - started)
    if finding is None:
        return CheckResult(name=spec.name, ok=True, states=states,
                           paths=paths if count_paths else None,
                           elapsed_s=time.monotonic() - started)
    description, path = finding
    if shrink:
        description, path = _shortest_failure(spec, ctx, expected,
                                              (description, path))
    return CheckResult(name=spec.name, ok=False, states=states,
                       violation=description, counterexample=path,
                       elapsed_s=time.monotonic() - started)


def check_corpus(directory: Any, mutant: Optional[str] = None,
                 cap: Optional[int] = None) -> List[CheckResult]:
    """Run every .json topology under a directory, sorted by file name."""
    root = Path(directory)
    paths = sorted(root.glob("*.json"))
    if not paths:
        raise CheckerError(f"no topology files under {root}")
    return [check_topology(p, mutant=mutant, cap=cap) for p in paths]
