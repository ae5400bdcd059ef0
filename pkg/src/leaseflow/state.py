"""Managed actor state: containers, combining functions, consolidation.

State lives in the lessor instance; lessees accumulate partial states that
are shipped back and consolidated at barriers. Combining functions declare
whether they are distributive/algebraic (partials merge pairwise: sum, max,
average as a (sum, count) pair) or holistic (every update value must be
kept; partials are lists that get concatenated before the final combine,
e.g. median, histogram).
"""

from __future__ import annotations

import copy
import enum
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

FLOAT_REL_TOL = 1e-9
DEFAULT_HOLISTIC_CAP = 1_000_000


class StateError(Exception):
    pass


class StateCapacityError(StateError):
    """A holistic list outgrew its configured retention cap."""


class CombineClass(enum.Enum):
    DISTRIBUTIVE_ALGEBRAIC = "distributive_algebraic"
    HOLISTIC = "holistic"


class StateKind(enum.Enum):
    VALUE = "value"
    LIST = "list"
    MAP = "map"


@dataclass
class ValueState:
    value: Any = None


@dataclass
class ListState:
    items: List[Any] = field(default_factory=list)
    cap: int = DEFAULT_HOLISTIC_CAP

    def append(self, item: Any) -> None:
        # Check before mutating so a refused append leaves state untouched.
        if len(self.items) + 1 > self.cap:
            raise StateCapacityError(
                f"list state exceeded cap of {self.cap} entries"
            )
        self.items.append(item)

    def extend(self, items: Sequence[Any]) -> None:
        if len(self.items) + len(items) > self.cap:
            raise StateCapacityError(
                f"list state exceeded cap of {self.cap} entries"
            )
        self.items.extend(items)


@dataclass
class MapState:
    entries: Dict[Any, Any] = field(default_factory=dict)

    def put(self, key: Any, value: Any) -> None:
        self.entries[key] = value

    def get(self, key: Any, default: Any = None) -> Any:
        return self.entries.get(key, default)


ManagedState = Any  # ValueState | ListState | MapState


def values_close(a: Any, b: Any, rel: float = FLOAT_REL_TOL) -> bool:
    """Structural equality with relative tolerance on floats."""
    if isinstance(a, float) or isinstance(b, float):
        if a is None or b is None:
            return a is b
        return math.isclose(float(a), float(b), rel_tol=rel, abs_tol=rel)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(values_close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(values_close(a[k], b[k], rel) for k in a)
    return a == b


@dataclass
class CombiningFunction:
    """Mergeable aggregate over per-message update values.

    For DISTRIBUTIVE_ALGEBRAIC functions `combine` must be associative and
    commutative over accumulators; registration spot-checks that with 1000
    seeded random triples. HOLISTIC functions never define a pairwise merge
    of summaries: partials are the raw update lists and `finalize` computes
    the result from the concatenation.
    """

    name: str
    klass: CombineClass
    identity: Callable[[], Any]
    combine: Optional[Callable[[Any, Any], Any]] = None
    lift: Callable[[Any], Any] = lambda v: v  # update value -> accumulator
    finalize: Callable[[Any], Any] = lambda acc: acc
    sample: Optional[Callable[[random.Random], Any]] = None

    @property
    def state_kind(self) -> StateKind:
        return StateKind.LIST if self.klass is CombineClass.HOLISTIC else StateKind.VALUE

    def new_state(self, cap: int = DEFAULT_HOLISTIC_CAP) -> ManagedState:
        if self.klass is CombineClass.HOLISTIC:
            return ListState(cap=cap)
        return ValueState(self.identity())

    def update(self, state: ManagedState, value: Any) -> None:
        if self.klass is CombineClass.HOLISTIC:
            state.append(value)
        else:
            state.value = self.combine(state.value, self.lift(value))

    def result(self, state: ManagedState) -> Any:
        if self.klass is CombineClass.HOLISTIC:
            return self.finalize(list(state.items))
        return self.finalize(state.value)


def spot_check(cf: CombiningFunction, seed: int = 0, rounds: int = 1000) -> None:
    """Seeded associativity/commutativity check for mergeable functions.

    Holistic functions are exempt: their only merge is concatenation and
    order is erased by finalize.
    """
    if cf.klass is not CombineClass.DISTRIBUTIVE_ALGEBRAIC:
        return
    if cf.combine is None:
        raise StateError(f"{cf.name}: distributive function without combine")
    if cf.sample is None:
        raise StateError(f"{cf.name}: distributive function without sample generator")
    rng = random.Random(seed)
    for i in range(rounds):
        a, b, c = cf.sample(rng), cf.sample(rng), cf.sample(rng)
        left = cf.combine(cf.combine(a, b), c)
        right = cf.combine(a, cf.combine(b, c))
        if not values_close(left, right):
            raise StateError(
                f"{cf.name}: combine not associative at round {i}: "
                f"({a!r},{b!r},{c!r}) -> {left!r} vs {right!r}"
            )
        ab, ba = cf.combine(a, b), cf.combine(b, a)
        if not values_close(ab, ba):
            raise StateError(
                f"{cf.name}: combine not commutative at round {i}: "
                f"({a!r},{b!r}) -> {ab!r} vs {ba!r}"
            )


_REGISTRY: Dict[str, CombiningFunction] = {}


def register(cf: CombiningFunction, seed: int = 0) -> CombiningFunction:
    spot_check(cf, seed=seed)
    _REGISTRY[cf.name] = cf
    return cf


def builtin(name: str) -> CombiningFunction:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise StateError(f"unknown combining function: {name!r}") from None


def registered_names() -> List[str]:
    return sorted(_REGISTRY)


# --- built-in aggregates -------------------------------------------------

register(CombiningFunction(
    name="sum",
    klass=CombineClass.DISTRIBUTIVE_ALGEBRAIC,
    identity=lambda: 0,
    combine=lambda a, b: a + b,
    sample=lambda rng: rng.randint(-10**6, 10**6),
))

register(CombiningFunction(
    name="max",
    klass=CombineClass.DISTRIBUTIVE_ALGEBRAIC,
    identity=lambda: None,
    combine=lambda a, b: b if a is None else (a if b is None else max(a, b)),
    sample=lambda rng: rng.randint(-10**6, 10**6) if rng.random() > 0.05 else None,
))

def _avg_combine(a, b):
    return (a[0] + b[0], a[1] + b[1])

register(CombiningFunction(
    name="average",
    klass=CombineClass.DISTRIBUTIVE_ALGEBRAIC,
    identity=lambda: (0, 0),
    combine=_avg_combine,
    lift=lambda v: (v, 1),
    finalize=lambda acc: (acc[0] / acc[1]) if acc[1] else None,
    sample=lambda rng: (rng.uniform(-1e6, 1e6), rng.randint(0, 1000)),
))

register(CombiningFunction(
    name="median",
    klass=CombineClass.HOLISTIC,
    identity=lambda: [],
    finalize=lambda items: statistics.median(items) if items else None,
))

register(CombiningFunction(
    name="histogram",
    klass=CombineClass.HOLISTIC,
    identity=lambda: [],
    finalize=lambda items: dict(Counter(items)),
))


# --- partial state and consolidation -------------------------------------

@dataclass
class PartialState:
    """What one instance accumulated since it last shipped state.

    variant names the combining function; partials of different variants
    never consolidate together.
    """

    variant: str
    state: ManagedState
    update_count: int = 0
    failed_count: int = 0

    def estimate_bytes(self) -> int:
        base = 48
        if isinstance(self.state, ListState):
            return base + 16 * len(self.state.items)
        if isinstance(self.state, MapState):
            return base + 32 * len(self.state.entries)
        return base

    @staticmethod
    def fresh(cf: CombiningFunction, cap: int = DEFAULT_HOLISTIC_CAP) -> "PartialState":
        return PartialState(variant=cf.name, state=cf.new_state(cap))


@dataclass
class UpdateResult:
    ok: bool
    error: Optional[str] = None


def apply_update(partial: PartialState, value: Any, cf: CombiningFunction) -> UpdateResult:
    """Apply one message's update value. A failed update leaves state as-is.

    Rollback relies on updates being value-replace or append-only, which
    holds for every built-in combining function.
    """
    state = partial.state
    if isinstance(state, ValueState):
        backup: Any = state.value
    elif isinstance(state, ListState):
        backup = len(state.items)
    elif isinstance(state, MapState):
        backup = dict(state.entries)
    else:
        raise StateError(f"unmanaged state type: {type(state)!r}")
    try:
        cf.update(state, value)
    except Exception as exc:  # noqa: BLE001 - user code boundary
        if isinstance(state, ValueState):
            state.value = backup
        elif isinstance(state, ListState):
            del state.items[backup:]
        else:
            state.entries.clear()
            state.entries.update(backup)
        partial.failed_count += 1
        return UpdateResult(ok=False, error=f"{type(exc).__name__}: {exc}")
    partial.update_count += 1
    return UpdateResult(ok=True)


def consolidate(partials: Sequence[PartialState], cf: CombiningFunction,
                cap: int = DEFAULT_HOLISTIC_CAP) -> PartialState:
    """Merge partials into one state. The lessor's partial comes first.

    Distributive/algebraic: fold combine over the accumulators. Holistic:
    concatenate the update lists (the final result comes from finalize at
    read time, never from merging summaries).
    """
    if not partials:
        raise StateError("consolidate requires at least one partial (the lessor's)")
    variants = {p.variant for p in partials}
    if variants != {cf.name}:
        raise StateError(f"variant mismatch in consolidation: {sorted(variants)} vs {cf.name}")
    merged = PartialState.fresh(cf, cap=cap)
    if cf.klass is CombineClass.HOLISTIC:
        for p in partials:
            merged.state.extend(p.state.items)
    else:
        acc = cf.identity()
        for p in partials:
            acc = cf.combine(acc, p.state.value)
        merged.state.value = acc
    merged.update_count = sum(p.update_count for p in partials)
    merged.failed_count = sum(p.failed_count for p in partials)
    return merged


def read_state_snapshot(partial: PartialState) -> ManagedState:
    """Deep copy: readers can never alias live state."""
    return copy.deepcopy(partial.state)
